import math
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Extra, root_validator, validator

from fusiondet.exceptions import UnknownClassError
from fusiondet.geometry import Box


class Record(BaseModel):
    class Config:
        extra = Extra.forbid
        allow_mutation = False


class Source(str, Enum):
    base: str = "base"
    novel: str = "novel"

    @property
    def other(self) -> "Source":
        return Source.novel if self is Source.base else Source.base


class Provenance(str, Enum):
    base: str = "base"
    novel: str = "novel"
    fusion: str = "fusion"


# merge tie-break order
PROVENANCE_RANK = {Provenance.base: 0, Provenance.novel: 1, Provenance.fusion: 2}


class ClassPartition(Record):
    base_classes: List[str]
    novel_classes: List[str]

    @root_validator(skip_on_failure=True)
    def check_disjoint_and_unique(cls, values):
        base, novel = values["base_classes"], values["novel_classes"]
        if not base or not novel:
            raise ValueError("base and novel class lists must both be non-empty")
        names = base + novel
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique across base and novel sets")
        return values

    @property
    def num_base(self) -> int:
        return len(self.base_classes)

    @property
    def num_novel(self) -> int:
        return len(self.novel_classes)

    @property
    def num_classes(self) -> int:
        return self.num_base + self.num_novel

    @property
    def background_id(self) -> int:
        return self.num_classes

    @property
    def names(self) -> List[str]:
        return self.base_classes + self.novel_classes

    def class_id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownClassError(name)

    def class_name(self, class_id: int) -> str:
        return self.names[class_id]

    def is_base(self, class_id: int) -> bool:
        return 0 <= class_id < self.num_base

    def is_novel(self, class_id: int) -> bool:
        return self.num_base <= class_id < self.num_classes

    def base_ids(self) -> List[int]:
        return list(range(self.num_base))

    def novel_ids(self) -> List[int]:
        return list(range(self.num_base, self.num_classes))

    def to_global(self, source: Source, local_index: int) -> int:
        """Map an index in a detector's own class space to the global id."""
        return local_index if source is Source.base else self.num_base + local_index

    def num_source_classes(self, source: Source) -> int:
        return self.num_base if source is Source.base else self.num_novel


def class_id_of(partition: ClassPartition, name: str) -> int:
    return partition.class_id_of(name)


class DetectorSpec(Record):
    feature_dim: int
    background_logit: bool = False

    @validator("feature_dim")
    def positive_dim(cls, value):
        if value <= 0:
            raise ValueError("feature_dim must be positive")
        return value

    def logits_dim(self, num_source_classes: int) -> int:
        return num_source_classes + (1 if self.background_logit else 0)


class Proposal(Record):
    box: Box
    objectness: float
    feature: List[float]
    logits: List[float]
    predicted_box: Box
    source: Source


class Detection(Record):
    box: Box
    class_id: int
    score: float
    provenance: Provenance
    # index of the detector proposal this detection came from, when known
    proposal_index: Optional[int] = None


class DetectorOutput(Record):
    source: Source
    proposals: List[Proposal] = []
    detections: List[Detection] = []


class GroundTruthObject(Record):
    box: Box
    class_id: int
    is_pseudo: bool = False


class SceneRecord(Record):
    image_id: str
    width: int
    height: int
    ground_truth: List[GroundTruthObject] = []
    base_output: DetectorOutput
    novel_output: DetectorOutput

    def output(self, source: Source) -> DetectorOutput:
        return self.base_output if source is Source.base else self.novel_output


class SceneHeader(Record):
    format_version: int = 1
    partition: ClassPartition
    base_detector: DetectorSpec
    novel_detector: DetectorSpec

    def detector(self, source: Source) -> DetectorSpec:
        return self.base_detector if source is Source.base else self.novel_detector

    def validate_scene(self, scene: SceneRecord) -> List[str]:
        return validate_scene(
            scene,
            self.partition,
            self.base_detector.feature_dim,
            self.novel_detector.feature_dim,
            base_background_logit=self.base_detector.background_logit,
            novel_background_logit=self.novel_detector.background_logit,
        )


def _box_violations(box: Box, path: str) -> List[str]:
    if not box.is_finite():
        return [f"non-finite box at {path}"]
    if not box.has_positive_area():
        return [f"zero-area box at {path}"]
    return []


def _vector_violations(values: List[float], path: str) -> List[str]:
    if all(math.isfinite(v) for v in values):
        return []
    return [f"non-finite value at {path}"]


def _output_violations(
    output: DetectorOutput,
    expected: Source,
    partition: ClassPartition,
    feature_dim: int,
    logits_dim: int,
) -> List[str]:
    prefix = f"{expected.value}_output"
    violations = []
    if output.source is not expected:
        violations.append(f"source tag {output.source.value} at {prefix}.source")

    for k, proposal in enumerate(output.proposals):
        path = f"{prefix}.proposals[{k}]"
        violations += _box_violations(proposal.box, f"{path}.box")
        violations += _box_violations(proposal.predicted_box, f"{path}.predicted_box")
        if proposal.source is not expected:
            violations.append(f"source tag {proposal.source.value} at {path}.source")
        if not (math.isfinite(proposal.objectness) and 0.0 <= proposal.objectness <= 1.0):
            violations.append(f"objectness out of [0,1] at {path}.objectness")
        if len(proposal.feature) != feature_dim:
            violations.append(
                f"feature dimension {len(proposal.feature)} != {feature_dim} at {path}.feature"
            )
        violations += _vector_violations(proposal.feature, f"{path}.feature")
        if len(proposal.logits) != logits_dim:
            violations.append(
                f"logits length {len(proposal.logits)} != {logits_dim} at {path}.logits"
            )
        violations += _vector_violations(proposal.logits, f"{path}.logits")

    valid_ids = partition.base_ids() if expected is Source.base else partition.novel_ids()
    for k, det in enumerate(output.detections):
        path = f"{prefix}.detections[{k}]"
        violations += _box_violations(det.box, f"{path}.box")
        if det.provenance.value != expected.value:
            violations.append(f"provenance {det.provenance.value} at {path}.provenance")
        if det.class_id not in valid_ids:
            violations.append(f"class id {det.class_id} out of range at {path}.class_id")
        if not math.isfinite(det.score):
            violations.append(f"non-finite score at {path}.score")
        if det.proposal_index is None or not (
            0 <= det.proposal_index < len(output.proposals)
        ):
            violations.append(
                f"proposal_index {det.proposal_index} out of range at {path}.proposal_index"
            )
    return violations


def validate_scene(
    s: SceneRecord,
    partition: ClassPartition,
    base_feature_dim: int,
    novel_feature_dim: int,
    base_background_logit: bool = False,
    novel_background_logit: bool = False,
) -> List[str]:
    """
    Collect every invariant violation of a scene as '<problem> at <field path>'.
    An empty list means the record is well formed.
    """
    violations = []
    if s.width <= 0 or s.height <= 0:
        violations.append(f"non-positive image size {s.width}x{s.height} at width/height")

    for k, gt in enumerate(s.ground_truth):
        path = f"ground_truth[{k}]"
        violations += _box_violations(gt.box, f"{path}.box")
        if not 0 <= gt.class_id < partition.num_classes:
            violations.append(f"class id {gt.class_id} out of range at {path}.class_id")

    violations += _output_violations(
        s.base_output,
        Source.base,
        partition,
        base_feature_dim,
        partition.num_base + (1 if base_background_logit else 0),
    )
    violations += _output_violations(
        s.novel_output,
        Source.novel,
        partition,
        novel_feature_dim,
        partition.num_novel + (1 if novel_background_logit else 0),
    )
    return violations


def strip_base_ground_truth(scene: SceneRecord, partition: ClassPartition) -> SceneRecord:
    """Keep only novel-class annotations, as on novel-class training images."""
    kept = [gt for gt in scene.ground_truth if partition.is_novel(gt.class_id)]
    return scene.copy(update={"ground_truth": kept})


# IDD OpenSet split used as the default partition
IDD_PARTITION = ClassPartition(
    base_classes=[
        "autorickshaw",
        "bicycle",
        "bus",
        "car",
        "person",
        "motorcycle",
        "rider",
        "traffic light",
        "traffic sign",
        "truck",
    ],
    novel_classes=["tractor", "street cart", "water tanker", "excavator"],
)

# COCO split: the 20 PASCAL VOC categories are novel, the other 60 base
COCO_PARTITION = ClassPartition(
    base_classes=[
        "truck", "traffic light", "fire hydrant", "stop sign", "parking meter",
        "bench", "elephant", "bear", "zebra", "giraffe",
        "backpack", "umbrella", "handbag", "tie", "suitcase",
        "frisbee", "skis", "snowboard", "sports ball", "kite",
        "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket",
        "wine glass", "cup", "fork", "knife", "spoon",
        "bowl", "banana", "apple", "sandwich", "orange",
        "broccoli", "carrot", "hot dog", "pizza", "donut",
        "cake", "bed", "toilet", "laptop", "mouse",
        "remote", "keyboard", "cell phone", "microwave", "oven",
        "toaster", "sink", "refrigerator", "book", "clock",
        "vase", "scissors", "teddy bear", "hair drier", "toothbrush",
    ],
    novel_classes=[
        "airplane", "bicycle", "bird", "boat", "bottle",
        "bus", "car", "cat", "chair", "cow",
        "dining table", "dog", "horse", "motorcycle", "person",
        "potted plant", "sheep", "couch", "train", "tv",
    ],
)

PRESET_PARTITIONS: Dict[str, ClassPartition] = {"idd": IDD_PARTITION, "coco": COCO_PARTITION}
