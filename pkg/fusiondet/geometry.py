"""
Axis-aligned box arithmetic shared by every stage.

Boxes use corner coordinates (x1, y1) top-left inclusive and (x2, y2)
bottom-right exclusive, in image pixels. No clamping to image bounds is done.
"""
import math
from typing import Sequence, Union

import numpy as np
from pydantic import BaseModel, Extra


class Box(BaseModel):
    x1: float
    y1: float
    x2: float
    y2: float

    class Config:
        extra = Extra.forbid
        allow_mutation = False

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_tuple())

    def has_positive_area(self) -> bool:
        return self.x2 > self.x1 and self.y2 > self.y1

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "Box":
        x1, y1, x2, y2 = (float(v) for v in values)
        return cls(x1=x1, y1=y1, x2=x2, y2=y2)


BoxLike = Union[Box, Sequence[float]]


def _coords(b: BoxLike):
    if isinstance(b, Box):
        return b.as_tuple()
    x1, y1, x2, y2 = b
    return float(x1), float(y1), float(x2), float(y2)


def _intersection(a: BoxLike, b: BoxLike) -> float:
    ax1, ay1, ax2, ay2 = _coords(a)
    bx1, by1, bx2, by2 = _coords(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def area(b: BoxLike) -> float:
    x1, y1, x2, y2 = _coords(b)
    return (x2 - x1) * (y2 - y1)


def iou(a: BoxLike, b: BoxLike) -> float:
    inter = _intersection(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def ioa(p: BoxLike, q: BoxLike) -> float:
    """Fraction of p's own area covered by q."""
    inter = _intersection(p, q)
    if inter == 0.0:
        return 0.0
    return inter / area(p)


def as_array(boxes: Sequence[BoxLike]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array; empty input gives shape (0, 4)."""
    if isinstance(boxes, np.ndarray):
        return boxes.astype(np.float64).reshape(-1, 4)
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([_coords(b) for b in boxes], dtype=np.float64)


def _pairwise_intersection(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    iw = np.minimum(P[:, None, 2], Q[None, :, 2]) - np.maximum(P[:, None, 0], Q[None, :, 0])
    ih = np.minimum(P[:, None, 3], Q[None, :, 3]) - np.maximum(P[:, None, 1], Q[None, :, 1])
    return np.where((iw > 0) & (ih > 0), iw * ih, 0.0)


def areas(boxes: Sequence[BoxLike]) -> np.ndarray:
    B = as_array(boxes)
    return (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])


def pairwise_ioa(P: Sequence[BoxLike], Q: Sequence[BoxLike]) -> np.ndarray:
    """|P| x |Q| matrix whose (i, j) entry is ioa(P[i], Q[j])."""
    Pa, Qa = as_array(P), as_array(Q)
    inter = _pairwise_intersection(Pa, Qa)
    if inter.size == 0:
        return inter
    denom = np.broadcast_to(areas(Pa)[:, None], inter.shape)
    # disjoint pairs are 0, as in ioa(), even for degenerate boxes
    return np.divide(inter, denom, out=np.zeros_like(inter), where=inter > 0)


def pairwise_iou(P: Sequence[BoxLike], Q: Sequence[BoxLike]) -> np.ndarray:
    Pa, Qa = as_array(P), as_array(Q)
    inter = _pairwise_intersection(Pa, Qa)
    if inter.size == 0:
        return inter
    union = areas(Pa)[:, None] + areas(Qa)[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=inter > 0)
