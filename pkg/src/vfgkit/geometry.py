"""Axis-aligned box primitives.

Boxes are stored as ``(x, y, w, h)`` with the top-left corner at ``(x, y)``,
the same layout used by ODGT annotation files.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class InvalidBox(ValueError):
    pass


class ZeroFullArea(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        # numpy scalars would otherwise leak into reprs and JSON output
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.w >= 0 and self.h >= 0):
            raise InvalidBox(f"negative or NaN size: w={self.w}, h={self.h}")

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls(x1, y1, x2 - x1, y2 - y1)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise InvalidBox(f"expected 4 values, got {len(values)}")
        return cls(*(float(v) for v in values))

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2

    @property
    def cy(self) -> float:
        return self.y + self.h / 2

    def xyxy(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def shift(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def contains(self, other: "BBox", tol: float = 0.0) -> bool:
        return (
            other.x >= self.x - tol
            and other.y >= self.y - tol
            and other.x2 <= self.x2 + tol
            and other.y2 <= self.y2 + tol
        )

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x2 and self.y <= py <= self.y2


@dataclass(frozen=True, slots=True)
class OcclusionStats:
    occlusion: float
    visible_area: float
    full_area: float


def area(b: BBox) -> float:
    return b.w * b.h


def intersection(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    if iw <= 0:
        return 0.0
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; two zero-area boxes have IoU 0."""
    inter = intersection(a, b)
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    # guards against 1 + eps from cancellation in the union
    return min(inter / union, 1.0)


def occlusion_ratio(visible: BBox, full: BBox) -> OcclusionStats:
    full_area = area(full)
    if full_area <= 0:
        raise ZeroFullArea(f"full box {full} has zero area")
    visible_area = min(area(visible), full_area)
    return OcclusionStats(
        occlusion=1.0 - visible_area / full_area,
        visible_area=visible_area,
        full_area=full_area,
    )


def as_array(boxes: Iterable[BBox]) -> np.ndarray:
    """Stack boxes into an ``(N, 4)`` xywh float array."""
    arr = np.array([b.to_list() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    A, B = as_array(a), as_array(b)
    ax1, ay1 = A[:, 0:1], A[:, 1:2]
    ax2, ay2 = ax1 + A[:, 2:3], ay1 + A[:, 3:4]
    bx1, by1 = B[:, 0], B[:, 1]
    bx2, by2 = bx1 + B[:, 2], by1 + B[:, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0, None)
    inter = iw * ih
    union = (A[:, 2:3] * A[:, 3:4]) + (B[:, 2] * B[:, 3]) - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return np.minimum(out, 1.0)
