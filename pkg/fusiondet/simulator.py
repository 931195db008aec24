"""
Synthetic stand-in for the two trained detectors.

Every class owns a prototype feature vector in each detector's feature space;
a proposal's feature is its object's prototype plus Gaussian noise. Objects
are placed in distinct cells of a fixed grid over a 1024x512 canvas, so
proposals of different objects never overlap unless a confusable pair makes
the wrong detector fire on the same object.

Prototypes depend only on `detector_seed`, so scene files drawn with different
`seed` values come from the same pair of detectors.
"""
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, root_validator, validator

from fusiondet.geometry import Box
from fusiondet.merge import nms
from fusiondet.models import (
    PRESET_PARTITIONS,
    ClassPartition,
    Detection,
    DetectorOutput,
    DetectorSpec,
    GroundTruthObject,
    Proposal,
    Provenance,
    SceneHeader,
    SceneRecord,
    Source,
)

CANVAS_WIDTH = 1024
CANVAS_HEIGHT = 512
GRID_COLUMNS = 8
GRID_ROWS = 4
CELL = 128
MIN_SIDE, MAX_SIDE = 48.0, 120.0

# logit added on the predicted class for a detector's own objects / confused objects
CONFIDENT_LOGIT = 6.0
CONFUSED_LOGIT = 2.5

DEFAULT_PRESET = "idd"


class SimConfig(BaseModel):
    # named partition used when neither partition nor class counts are given
    preset: Optional[str] = DEFAULT_PRESET
    n_base: int = 10
    n_novel: int = 4
    partition: Optional[ClassPartition] = None
    # seeds the class prototypes, i.e. the two detectors; scenes use `seed`
    detector_seed: int = 0
    base_feature_dim: int = 16
    novel_feature_dim: int = 16
    scenes: int = 100
    objects_per_scene: Tuple[int, int] = (2, 6)
    box_jitter: float = 2.0
    feature_noise: float = 0.3
    # (base global id, novel global id)
    confusable_pairs: List[Tuple[int, int]] = []
    detector_miss_rate: float = 0.0
    background_proposal_rate: float = 0.5
    background_slots: int = 4
    detection_thresh: float = 0.3
    objectness_thresh: float = 0.5
    nms_iou: float = 0.5
    seed: int = 0
    image_prefix: str = "sim"

    @root_validator(pre=True)
    def counts_from_partition(cls, values):
        partition = values.get("partition")
        preset = values.get("preset", DEFAULT_PRESET)
        if preset is not None and preset not in PRESET_PARTITIONS:
            raise ValueError(f"unknown preset {preset!r}, expected one of {sorted(PRESET_PARTITIONS)}")
        explicit_counts = "n_base" in values or "n_novel" in values
        if partition is None and preset is not None and not explicit_counts:
            partition = PRESET_PARTITIONS[preset]
        if partition is not None:
            if not isinstance(partition, ClassPartition):
                partition = ClassPartition.parse_obj(partition)
            values["partition"] = partition
            values["n_base"] = partition.num_base
            values["n_novel"] = partition.num_novel
        return values

    @validator(
        "n_base", "n_novel", "base_feature_dim", "novel_feature_dim", "scenes"
    )
    def positive(cls, value):
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @validator(
        "detector_miss_rate",
        "background_proposal_rate",
        "detection_thresh",
        "objectness_thresh",
        "nms_iou",
    )
    def unit_interval(cls, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError("must be in [0, 1]")
        return value

    @validator("box_jitter", "feature_noise")
    def non_negative(cls, value):
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @root_validator(skip_on_failure=True)
    def check_layout(cls, values):
        lo, hi = values["objects_per_scene"]
        if lo < 0 or hi < lo:
            raise ValueError("objects_per_scene must be a range 0 <= lo <= hi")
        if values["background_slots"] < 0:
            raise ValueError("background_slots must be non-negative")
        if hi + 2 * values["background_slots"] > GRID_COLUMNS * GRID_ROWS:
            raise ValueError(
                f"at most {GRID_COLUMNS * GRID_ROWS} objects and background slots fit a scene"
            )
        n_base, n_novel = values["n_base"], values["n_novel"]
        for base_id, novel_id in values["confusable_pairs"]:
            if not 0 <= base_id < n_base or not n_base <= novel_id < n_base + n_novel:
                raise ValueError(f"invalid confusable pair ({base_id}, {novel_id})")
        return values

    def class_partition(self) -> ClassPartition:
        if self.partition is not None:
            return self.partition
        return ClassPartition(
            base_classes=[f"base_{i}" for i in range(self.n_base)],
            novel_classes=[f"novel_{j}" for j in range(self.n_novel)],
        )

    def header(self) -> SceneHeader:
        return SceneHeader(
            partition=self.class_partition(),
            base_detector=DetectorSpec(feature_dim=self.base_feature_dim),
            novel_detector=DetectorSpec(feature_dim=self.novel_feature_dim),
        )


def make_prototypes(cfg: SimConfig) -> Dict[Source, np.ndarray]:
    """Per detector, a (num_classes, feature_dim) prototype matrix."""
    rng = np.random.default_rng([cfg.detector_seed, 0])
    num_classes = cfg.n_base + cfg.n_novel
    prototypes = {}
    for source, dim in ((Source.base, cfg.base_feature_dim), (Source.novel, cfg.novel_feature_dim)):
        protos = rng.standard_normal((num_classes, dim))
        half = dim // 2
        for base_id, novel_id in cfg.confusable_pairs:
            protos[novel_id, :half] = protos[base_id, :half]
        prototypes[source] = protos
    return prototypes


def _jitter(box: Box, std: float, rng: np.random.Generator) -> Box:
    cx = 0.5 * (box.x1 + box.x2) + rng.normal(0.0, std)
    cy = 0.5 * (box.y1 + box.y2) + rng.normal(0.0, std)
    w = max(box.width + rng.normal(0.0, std), 1.0)
    h = max(box.height + rng.normal(0.0, std), 1.0)
    return Box(x1=cx - 0.5 * w, y1=cy - 0.5 * h, x2=cx + 0.5 * w, y2=cy + 0.5 * h)


def _cell_box(cell: int, rng: np.random.Generator) -> Box:
    col, row = cell % GRID_COLUMNS, cell // GRID_COLUMNS
    w, h = rng.uniform(MIN_SIDE, MAX_SIDE, size=2)
    x1 = col * CELL + rng.uniform(0.0, CELL - w)
    y1 = row * CELL + rng.uniform(0.0, CELL - h)
    return Box(x1=x1, y1=y1, x2=x1 + w, y2=y1 + h)


class _DetectorModel:
    def __init__(self, cfg: SimConfig, source: Source, partition: ClassPartition, prototypes):
        self.cfg = cfg
        self.source = source
        self.partition = partition
        self.prototypes = prototypes
        self.num_local = partition.num_source_classes(source)

    def local(self, class_id: int) -> int:
        return class_id if self.source is Source.base else class_id - self.partition.num_base

    def object_proposal(
        self, gt: GroundTruthObject, predicted_class: int, peak: float, objectness: float, rng
    ) -> Proposal:
        noise = self.cfg.feature_noise
        feature = self.prototypes[gt.class_id] + rng.normal(0.0, noise, self.prototypes.shape[1])
        logits = rng.normal(0.0, noise, self.num_local)
        logits[self.local(predicted_class)] += peak
        return Proposal(
            box=_jitter(gt.box, self.cfg.box_jitter, rng),
            objectness=objectness,
            feature=feature.tolist(),
            logits=logits.tolist(),
            predicted_box=_jitter(gt.box, 0.5 * self.cfg.box_jitter, rng),
            source=self.source,
        )

    def background_proposal(self, cell: int, rng) -> Proposal:
        noise = self.cfg.feature_noise
        box = _cell_box(cell, rng)
        return Proposal(
            box=box,
            objectness=float(rng.uniform(0.0, 0.3)),
            feature=rng.normal(0.0, noise, self.prototypes.shape[1]).tolist(),
            logits=rng.normal(0.0, noise, self.num_local).tolist(),
            predicted_box=_jitter(box, 0.5 * self.cfg.box_jitter, rng),
            source=self.source,
        )

    def detections(self, proposals: List[Proposal]) -> List[Detection]:
        provenance = Provenance(self.source.value)
        dets = []
        for k, proposal in enumerate(proposals):
            if proposal.objectness < self.cfg.objectness_thresh:
                continue
            logits = np.asarray(proposal.logits[: self.num_local])
            probs = np.exp(logits - logits.max())
            probs /= probs.sum()
            local = int(np.argmax(probs))
            if probs[local] < self.cfg.detection_thresh:
                continue
            dets.append(
                Detection(
                    box=proposal.predicted_box,
                    class_id=self.partition.to_global(self.source, local),
                    score=float(probs[local]),
                    provenance=provenance,
                    proposal_index=k,
                )
            )
        return nms(dets, self.cfg.nms_iou)


def _confusion_partners(cfg: SimConfig) -> Dict[int, int]:
    partners = {}
    for base_id, novel_id in cfg.confusable_pairs:
        partners.setdefault(base_id, novel_id)
        partners.setdefault(novel_id, base_id)
    return partners


def generate_scene(
    cfg: SimConfig,
    index: int,
    partition: ClassPartition = None,
    prototypes: Dict[Source, np.ndarray] = None,
) -> SceneRecord:
    """Scene `index`, drawn from its own (seed, index) stream."""
    partition = partition or cfg.class_partition()
    prototypes = prototypes if prototypes is not None else make_prototypes(cfg)
    detectors = {
        source: _DetectorModel(cfg, source, partition, prototypes[source])
        for source in (Source.base, Source.novel)
    }
    partners = _confusion_partners(cfg)
    rng = np.random.default_rng([cfg.seed, 1, index])

    lo, hi = cfg.objects_per_scene
    n_objects = int(rng.integers(lo, hi + 1))
    cells = rng.permutation(GRID_COLUMNS * GRID_ROWS)
    object_cells = cells[:n_objects]
    background_cells = {
        Source.base: cells[n_objects : n_objects + cfg.background_slots],
        Source.novel: cells[n_objects + cfg.background_slots : n_objects + 2 * cfg.background_slots],
    }

    ground_truth = []
    proposals = {Source.base: [], Source.novel: []}
    for cell in object_cells:
        class_id = int(rng.integers(partition.num_classes))
        gt = GroundTruthObject(box=_cell_box(int(cell), rng), class_id=class_id)
        ground_truth.append(gt)

        own = Source.base if partition.is_base(class_id) else Source.novel
        missed = rng.random() < cfg.detector_miss_rate
        proposal = detectors[own].object_proposal(
            gt, class_id, CONFIDENT_LOGIT, float(rng.uniform(0.8, 1.0)), rng
        )
        if not missed:
            proposals[own].append(proposal)

        if class_id in partners:
            proposals[own.other].append(
                detectors[own.other].object_proposal(
                    gt, partners[class_id], CONFUSED_LOGIT, float(rng.uniform(0.6, 0.9)), rng
                )
            )

    for source in (Source.base, Source.novel):
        for cell in background_cells[source]:
            if rng.random() < cfg.background_proposal_rate:
                proposals[source].append(detectors[source].background_proposal(int(cell), rng))

    outputs = {
        source: DetectorOutput(
            source=source,
            proposals=proposals[source],
            detections=detectors[source].detections(proposals[source]),
        )
        for source in (Source.base, Source.novel)
    }
    return SceneRecord(
        image_id=f"{cfg.image_prefix}-{index:05d}",
        width=CANVAS_WIDTH,
        height=CANVAS_HEIGHT,
        ground_truth=ground_truth,
        base_output=outputs[Source.base],
        novel_output=outputs[Source.novel],
    )


def generate(cfg: SimConfig) -> List[SceneRecord]:
    partition = cfg.class_partition()
    prototypes = make_prototypes(cfg)
    return [generate_scene(cfg, i, partition, prototypes) for i in range(cfg.scenes)]


def count_confusable_objects(scenes: List[SceneRecord], cfg: SimConfig) -> int:
    partners = _confusion_partners(cfg)
    return sum(1 for s in scenes for gt in s.ground_truth if gt.class_id in partners)
