"""
Line-delimited interchange formats.

Scenes and detections are JSON Lines files whose first line is a header.
Floats are written with Python's shortest round-trip repr, so a write/parse
cycle is lossless.
"""
import json
from dataclasses import dataclass
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Extra, ValidationError

from fusiondet.evaluation import EvalReport
from fusiondet.exceptions import (
    DuplicateImageIdError,
    RecordParseError,
    SceneValidationError,
)
from fusiondet.fusionnet import LAYER_NAMES, FusionNetParams
from fusiondet.models import ClassPartition, Detection, SceneHeader, SceneRecord

CHECKPOINT_MAGIC = "fusiondet-checkpoint 1"
CHECKPOINT_KEYS = ("base_dim", "novel_dim", "hidden_dim", "trunk_dim", "num_classes")


@dataclass
class SceneDataset:
    header: SceneHeader
    scenes: List[SceneRecord]

    @property
    def partition(self) -> ClassPartition:
        return self.header.partition


class DetectionsHeader(BaseModel):
    partition: ClassPartition

    class Config:
        extra = Extra.forbid


class ImageDetections(BaseModel):
    image_id: str
    detections: List[Detection] = []

    class Config:
        extra = Extra.forbid


def _field_path(error: ValidationError) -> Tuple[str, str]:
    first = error.errors()[0]
    return ".".join(str(part) for part in first["loc"]), first["msg"]


def _read_lines(path: str) -> Iterator[Tuple[int, dict]]:
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordParseError(path, number, "", f"invalid JSON ({e.msg})")
            if not isinstance(record, dict):
                raise RecordParseError(path, number, "", "record is not an object")
            yield number, record


def _parse_record(model, path: str, number: int, record: dict, kind: str):
    if record.get("type") != kind:
        raise RecordParseError(
            path, number, "type", f"expected '{kind}' record, got {record.get('type')!r}"
        )
    payload = {k: v for k, v in record.items() if k != "type"}
    try:
        return model.parse_obj(payload)
    except ValidationError as e:
        field, msg = _field_path(e)
        raise RecordParseError(path, number, field, msg)


def _dump(kind: str, model: BaseModel) -> str:
    payload = {"type": kind}
    payload.update(json.loads(model.json()))
    return json.dumps(payload)


def write_scenes(path: str, header: SceneHeader, scenes: Sequence[SceneRecord]):
    with open(path, "w") as f:
        f.write(_dump("header", header) + "\n")
        for scene in scenes:
            f.write(_dump("scene", scene) + "\n")


def parse_scenes(path: str, validate: bool = True) -> SceneDataset:
    lines = _read_lines(path)
    try:
        number, record = next(lines)
    except StopIteration:
        raise RecordParseError(path, 1, "", "missing header record")
    header = _parse_record(SceneHeader, path, number, record, "header")

    scenes, seen = [], set()
    for number, record in lines:
        scene = _parse_record(SceneRecord, path, number, record, "scene")
        if scene.image_id in seen:
            raise DuplicateImageIdError(scene.image_id)
        seen.add(scene.image_id)
        if validate:
            violations = header.validate_scene(scene)
            if violations:
                raise SceneValidationError(scene.image_id, violations)
        scenes.append(scene)
    return SceneDataset(header, scenes)


def write_detections(
    path: str,
    partition: ClassPartition,
    detections: Dict[str, Sequence[Detection]],
):
    with open(path, "w") as f:
        f.write(_dump("header", DetectionsHeader(partition=partition)) + "\n")
        for image_id, dets in detections.items():
            record = ImageDetections(image_id=image_id, detections=list(dets))
            f.write(_dump("detections", record) + "\n")


def parse_detections(path: str) -> Tuple[ClassPartition, Dict[str, List[Detection]]]:
    lines = _read_lines(path)
    try:
        number, record = next(lines)
    except StopIteration:
        raise RecordParseError(path, 1, "", "missing header record")
    header = _parse_record(DetectionsHeader, path, number, record, "header")
    detections = {}
    for number, record in lines:
        entry = _parse_record(ImageDetections, path, number, record, "detections")
        if entry.image_id in detections:
            raise DuplicateImageIdError(entry.image_id)
        detections[entry.image_id] = entry.detections
    return header.partition, detections


def write_report(path: str, report: EvalReport):
    with open(path, "w") as f:
        f.write(report.json(indent=2) + "\n")


def parse_report(path: str) -> EvalReport:
    try:
        return EvalReport.parse_file(path)
    except ValidationError as e:
        field, msg = _field_path(e)
        raise RecordParseError(path, 1, field, msg)
    except ValueError as e:
        raise RecordParseError(path, 1, "", str(e))


def _format_row(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_checkpoint(path: str, params: FusionNetParams):
    params.check()
    lines = [CHECKPOINT_MAGIC]
    lines += [f"{key} {value}" for key, value in params.hyperparameters().items()]
    for name in LAYER_NAMES:
        weight = params.weights[name]
        lines.append(f"layer {name} {weight.shape[0]} {weight.shape[1]}")
        lines += [_format_row(row) for row in weight]
        lines.append(_format_row(params.biases[name]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


class _CheckpointReader:
    def __init__(self, path: str):
        self.path = path
        with open(path, "r") as f:
            self.lines = f.read().splitlines()
        self.position = 0

    def next(self, field: str) -> str:
        if self.position >= len(self.lines):
            raise RecordParseError(self.path, self.position + 1, field, "unexpected end of file")
        self.position += 1
        return self.lines[self.position - 1]

    def fail(self, field: str, reason: str):
        raise RecordParseError(self.path, self.position, field, reason)

    def row(self, field: str, width: int) -> np.ndarray:
        tokens = self.next(field).split()
        if len(tokens) != width:
            self.fail(field, f"expected {width} values, got {len(tokens)}")
        try:
            return np.array([float(t) for t in tokens], dtype=np.float64)
        except ValueError:
            self.fail(field, "non-numeric value")


def parse_checkpoint(path: str) -> FusionNetParams:
    reader = _CheckpointReader(path)
    if reader.next("magic").strip() != CHECKPOINT_MAGIC:
        reader.fail("magic", f"expected '{CHECKPOINT_MAGIC}'")

    hyper = {}
    for key in CHECKPOINT_KEYS:
        tokens = reader.next(key).split()
        if len(tokens) != 2 or tokens[0] != key:
            reader.fail(key, f"expected '{key} <int>'")
        try:
            hyper[key] = int(tokens[1])
        except ValueError:
            reader.fail(key, "not an integer")
    params = FusionNetParams(**hyper)

    dims = params.layer_dims()
    for name in LAYER_NAMES:
        tokens = reader.next(name).split()
        expected = ["layer", name, str(dims[name][0]), str(dims[name][1])]
        if tokens != expected:
            reader.fail(name, f"expected '{' '.join(expected)}'")
        rows, cols = dims[name]
        params.weights[name] = np.stack(
            [reader.row(f"{name}.weight[{r}]", cols) for r in range(rows)]
        )
        params.biases[name] = reader.row(f"{name}.bias", cols)

    if any(line.strip() for line in reader.lines[reader.position :]):
        reader.position += 1
        reader.fail("", "trailing content after last layer")
    return params
