from typing import List, Sequence

import numpy as np

from fusiondet.geometry import pairwise_iou
from fusiondet.models import PROVENANCE_RANK, Detection

DEFAULT_CROSS_IOU = 0.5


def _priority_order(dets: Sequence[Detection]) -> List[int]:
    # score descending, then base < novel < fusion, then input index
    return sorted(
        range(len(dets)),
        key=lambda i: (-dets[i].score, PROVENANCE_RANK[dets[i].provenance], i),
    )


def merge_detections(
    dets: Sequence[Detection], cross_iou: float = DEFAULT_CROSS_IOU
) -> List[Detection]:
    """
    Greedy cross-detector suppression: a detection is dropped when an already
    kept detection from a different arm overlaps it with IoU above cross_iou.
    Class labels are ignored and same-arm pairs never suppress each other.
    """
    if not dets:
        return []
    overlaps = pairwise_iou([d.box for d in dets], [d.box for d in dets])
    kept: List[int] = []
    for i in _priority_order(dets):
        if any(
            dets[k].provenance is not dets[i].provenance and overlaps[i, k] > cross_iou
            for k in kept
        ):
            continue
        kept.append(i)
    return [dets[i] for i in kept]


def nms(dets: Sequence[Detection], iou_thresh: float = 0.5) -> List[Detection]:
    """Per-class greedy NMS within a single detector; output sorted by score."""
    if not dets:
        return []
    overlaps = pairwise_iou([d.box for d in dets], [d.box for d in dets])
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: List[int] = []
    for i in order:
        if any(
            dets[k].class_id == dets[i].class_id and overlaps[i, k] > iou_thresh
            for k in kept
        ):
            continue
        kept.append(i)
    return [dets[i] for i in kept]


def count_cross_duplicates(
    dets: Sequence[Detection], iou_thresh: float = DEFAULT_CROSS_IOU
) -> int:
    """Number of detection pairs from different arms overlapping with IoU above iou_thresh."""
    if len(dets) < 2:
        return 0
    overlaps = pairwise_iou([d.box for d in dets], [d.box for d in dets])
    ranks = np.array([PROVENANCE_RANK[d.provenance] for d in dets])
    cross = ranks[:, None] != ranks[None, :]
    return int(np.triu(cross & (overlaps > iou_thresh), k=1).sum())
