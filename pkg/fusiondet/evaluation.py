"""
PASCAL-style evaluation at IoU 0.5.

AP uses all-point interpolation: the area under the precision envelope
taken at every recall step. Classes without ground truth are excluded
from the means and listed in the report.
"""
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from fusiondet.exceptions import UnknownImageError
from fusiondet.geometry import pairwise_iou
from fusiondet.models import ClassPartition, Detection, GroundTruthObject, SceneRecord

IOU_THRESHOLD = 0.5


class EvalReport(BaseModel):
    iou_threshold: float = IOU_THRESHOLD
    interpolation: str = "all-point"
    class_names: List[str]
    num_base: int
    per_class_ap: Dict[int, float] = {}
    excluded_classes: List[int] = []
    map50_base: Optional[float] = None
    map50_novel: Optional[float] = None
    map50_all: Optional[float] = None
    gt_counts: Dict[int, int] = {}
    tp_counts: Dict[int, int] = {}
    fp_counts: Dict[int, int] = {}

    def class_ap(self, name: str) -> Optional[float]:
        return self.per_class_ap.get(self.class_names.index(name))


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthObject],
    iou_thresh: float = IOU_THRESHOLD,
) -> List[bool]:
    """
    TP/FP flag for every detection of one class in one image, in input order.
    Detections are visited by descending score (input index breaks ties); each
    takes the unmatched ground truth box with highest IoU if it reaches iou_thresh.
    Pseudo ground truth never counts.
    """
    gts = [gt for gt in gts if not gt.is_pseudo]
    flags = [False] * len(dets)
    if not dets or not gts:
        return flags
    overlaps = pairwise_iou([d.box for d in dets], [g.box for g in gts])
    matched = np.zeros(len(gts), dtype=bool)
    for i in sorted(range(len(dets)), key=lambda i: (-dets[i].score, i)):
        candidates = np.where(matched, -1.0, overlaps[i])
        best = int(np.argmax(candidates))
        if candidates[best] >= iou_thresh:
            matched[best] = True
            flags[i] = True
    return flags


def ap50(flags: Sequence[bool], scores: Sequence[float], n_gt: int) -> Optional[float]:
    """All-point interpolated AP; None when the class has no ground truth."""
    if n_gt <= 0:
        return None
    if len(flags) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.asarray(flags, dtype=np.float64)[order]
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def evaluate(
    scenes: Sequence[SceneRecord],
    final_dets: Mapping[str, Sequence[Detection]],
    partition: ClassPartition,
    iou_thresh: float = IOU_THRESHOLD,
) -> EvalReport:
    known = {scene.image_id for scene in scenes}
    for image_id in final_dets:
        if image_id not in known:
            raise UnknownImageError(image_id)

    num_classes = partition.num_classes
    pooled_scores: Dict[int, List[float]] = {c: [] for c in range(num_classes)}
    pooled_flags: Dict[int, List[bool]] = {c: [] for c in range(num_classes)}
    gt_counts = {c: 0 for c in range(num_classes)}

    for scene in scenes:
        dets = final_dets.get(scene.image_id, [])
        for c in range(num_classes):
            class_dets = [d for d in dets if d.class_id == c]
            class_gts = [g for g in scene.ground_truth if g.class_id == c and not g.is_pseudo]
            gt_counts[c] += len(class_gts)
            pooled_flags[c] += match_detections(class_dets, class_gts, iou_thresh)
            pooled_scores[c] += [d.score for d in class_dets]

    per_class_ap, excluded = {}, []
    for c in range(num_classes):
        ap = ap50(pooled_flags[c], pooled_scores[c], gt_counts[c])
        if ap is None:
            excluded.append(c)
        else:
            per_class_ap[c] = ap

    base_aps = [per_class_ap[c] for c in partition.base_ids() if c in per_class_ap]
    novel_aps = [per_class_ap[c] for c in partition.novel_ids() if c in per_class_ap]
    return EvalReport(
        iou_threshold=iou_thresh,
        class_names=partition.names,
        num_base=partition.num_base,
        per_class_ap=per_class_ap,
        excluded_classes=excluded,
        map50_base=_mean(base_aps),
        map50_novel=_mean(novel_aps),
        map50_all=_mean(base_aps + novel_aps),
        gt_counts=gt_counts,
        tp_counts={c: int(sum(pooled_flags[c])) for c in range(num_classes)},
        fp_counts={c: len(pooled_flags[c]) - int(sum(pooled_flags[c])) for c in range(num_classes)},
    )


def _pct(value: Optional[float]) -> str:
    return "-" if value is None else f"{100.0 * value:.1f}"


def format_report_table(report: EvalReport, label: str = "fusiondet") -> str:
    """Novel class columns followed by mAP50 novel / base / all, as a text table."""
    novel_ids = range(report.num_base, len(report.class_names))
    header = (
        ["Method"]
        + [report.class_names[c] for c in novel_ids]
        + ["mAP50 novel", "mAP50 base", "mAP50 all"]
    )
    row = (
        [label]
        + [_pct(report.per_class_ap.get(c)) for c in novel_ids]
        + [_pct(report.map50_novel), _pct(report.map50_base), _pct(report.map50_all)]
    )
    widths = [max(len(h), len(v)) for h, v in zip(header, row)]
    lines = [
        " | ".join(h.ljust(w) for h, w in zip(header, widths)),
        "-+-".join("-" * w for w in widths),
        " | ".join(v.ljust(w) for v, w in zip(row, widths)),
    ]
    if report.excluded_classes:
        names = ", ".join(report.class_names[c] for c in report.excluded_classes)
        lines.append(f"excluded (no ground truth): {names}")
    return "\n".join(lines)


def format_per_class(report: EvalReport) -> str:
    lines = [f"AP@{report.iou_threshold} ({report.interpolation} interpolation)"]
    for c, name in enumerate(report.class_names):
        group = "base" if c < report.num_base else "novel"
        lines.append(
            f"  {name:<16} {group:<5} AP50={_pct(report.per_class_ap.get(c)):>5} "
            f"gt={report.gt_counts.get(c, 0)} tp={report.tp_counts.get(c, 0)} "
            f"fp={report.fp_counts.get(c, 0)}"
        )
    return "\n".join(lines)
