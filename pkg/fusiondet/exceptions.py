from typing import List


class FusionDetError(Exception):
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class RecordParseError(FusionDetError):
    exit_code = 2

    def __init__(self, path: str, line: int, field: str, reason: str):
        self.path = path
        self.line = line
        self.field = field
        location = f"{path}:{line}" + (f" at {field}" if field else "")
        super().__init__(f"malformed record {location}: {reason}")


class SceneValidationError(FusionDetError):
    exit_code = 3

    def __init__(self, image_id: str, violations: List[str]):
        self.image_id = image_id
        self.violations = violations
        super().__init__(
            f"scene {image_id} failed validation: " + "; ".join(violations)
        )


class DuplicateImageIdError(FusionDetError):
    exit_code = 3

    def __init__(self, image_id: str):
        self.image_id = image_id
        super().__init__(f"image_id {image_id} appears more than once")


class UnknownClassError(FusionDetError, KeyError):
    exit_code = 3

    def __init__(self, name: str):
        self.name = name
        FusionDetError.__init__(self, f"unknown class name '{name}'")

    def __str__(self):
        return self.detail


class UnknownImageError(FusionDetError):
    exit_code = 3

    def __init__(self, image_id: str):
        self.image_id = image_id
        super().__init__(f"detections reference unknown image_id {image_id}")


class DimensionMismatchError(FusionDetError):
    exit_code = 3

    def __init__(self, layer: str, expected: int, actual: int):
        self.layer = layer
        super().__init__(
            f"dimension mismatch at layer {layer}: expected {expected}, got {actual}"
        )


class EmptyBatchError(FusionDetError):
    def __init__(self):
        super().__init__("loss requires a non-empty batch")


class TrainingDivergedError(FusionDetError):
    exit_code = 4

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(
            f"training diverged: non-finite value at epoch {epoch}, batch {batch}"
        )


class ConfigError(FusionDetError):
    exit_code = 5


class PipelineStageError(FusionDetError):
    def __init__(self, stage: str, image_id: str, cause: Exception):
        self.stage = stage
        self.image_id = image_id
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", FusionDetError.exit_code)
        where = f" on scene {image_id}" if image_id else ""
        super().__init__(f"stage '{stage}' failed{where}: {cause}")
