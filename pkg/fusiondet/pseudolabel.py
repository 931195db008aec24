import logging
from collections import Counter
from typing import Dict, List, Sequence

from pydantic import BaseModel, validator

from fusiondet.geometry import pairwise_iou
from fusiondet.models import (
    ClassPartition,
    Detection,
    GroundTruthObject,
    SceneRecord,
    strip_base_ground_truth,
)


class MiningConfig(BaseModel):
    score_thresh: float = 0.7
    removal_iou: float = 0.5

    @validator("score_thresh", "removal_iou")
    def unit_interval(cls, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError("must be in [0, 1]")
        return value


def mine_pseudo_labels(
    base_dets: Sequence[Detection],
    novel_gt: Sequence[GroundTruthObject],
    cfg: MiningConfig = None,
) -> List[GroundTruthObject]:
    """
    Turn confident base-detector detections into pseudo ground truth, dropping
    any detection whose IoU with a novel annotation is over removal_iou.
    """
    cfg = cfg or MiningConfig()
    confident = [det for det in base_dets if det.score >= cfg.score_thresh]
    if not confident:
        return []
    if novel_gt:
        overlaps = pairwise_iou([d.box for d in confident], [gt.box for gt in novel_gt])
        keep = overlaps.max(axis=1) <= cfg.removal_iou
    else:
        keep = [True] * len(confident)
    return [
        GroundTruthObject(box=det.box, class_id=det.class_id, is_pseudo=True)
        for det, kept in zip(confident, keep)
        if kept
    ]


def mine_scene(
    scene: SceneRecord, partition: ClassPartition, cfg: MiningConfig = None
) -> SceneRecord:
    """Append pseudo labels to a scene's novel annotations; base annotations are dropped."""
    stripped = strip_base_ground_truth(scene, partition)
    novel_gt = stripped.ground_truth
    pseudo = mine_pseudo_labels(scene.base_output.detections, novel_gt, cfg)
    return stripped.copy(update={"ground_truth": novel_gt + pseudo})


def pseudo_label_counts(
    scenes: Sequence[SceneRecord], partition: ClassPartition
) -> Dict[str, int]:
    counts = Counter(
        gt.class_id for scene in scenes for gt in scene.ground_truth if gt.is_pseudo
    )
    return {partition.class_name(cid): counts.get(cid, 0) for cid in partition.base_ids()}


def log_pseudo_label_counts(
    counts: Dict[str, int], log: logging.Logger = None
) -> int:
    log = log or logging.getLogger("fusiondet.mine")
    covered = sum(1 for n in counts.values() if n)
    for name, n in counts.items():
        log.info(f"pseudo labels {name}: {n}")
    log.warning(
        f"{covered} of the {len(counts)} base classes were detected while mining "
        f"({sum(counts.values())} pseudo labels)"
    )
    return covered
