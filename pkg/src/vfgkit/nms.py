"""Greedy NMS, linear soft-NMS and VFG-NMS.

All variants are per-class and break score ties by input position, so the
output is a deterministic function of the input list.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .geometry import BBox, iou

DEFAULT_NMS_THRESH = 0.5
DEFAULT_SCORE_FLOOR = 0.001


@dataclass(frozen=True)
class ScoredBox:
    box: BBox
    score: float
    class_id: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class PairedDetection:
    visible: BBox
    full: BBox
    score: float
    class_id: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def visible_scored(self) -> ScoredBox:
        return ScoredBox(self.visible, self.score, self.class_id)

    def full_scored(self) -> ScoredBox:
        return ScoredBox(self.full, self.score, self.class_id)


def _check_thresh(thresh: float) -> None:
    if not 0.0 < thresh < 1.0:
        raise ValueError(f"NMS threshold must lie in (0, 1), got {thresh}")


def score_order(scores: Sequence[float]) -> list[int]:
    """Indices by descending score, lower index first on ties."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def greedy_nms_indices(dets: Sequence[ScoredBox], thresh: float = DEFAULT_NMS_THRESH) -> list[int]:
    """Indices of boxes that survive greedy NMS, in descending score order.

    A box is suppressed when its IoU with an already kept box of the same
    class is strictly greater than ``thresh``.
    """
    _check_thresh(thresh)
    kept: list[int] = []
    for i in score_order([d.score for d in dets]):
        di = dets[i]
        if all(
            dets[k].class_id != di.class_id or iou(dets[k].box, di.box) <= thresh
            for k in kept
        ):
            kept.append(i)
    return kept


def greedy_nms(dets: Sequence[ScoredBox], thresh: float = DEFAULT_NMS_THRESH) -> list[ScoredBox]:
    return [dets[i] for i in greedy_nms_indices(dets, thresh)]


def soft_nms_linear_scores(
    dets: Sequence[ScoredBox],
    thresh: float = DEFAULT_NMS_THRESH,
    score_floor: float = DEFAULT_SCORE_FLOOR,
) -> list[tuple[int, float]]:
    """``(input index, final score)`` of the boxes surviving linear soft-NMS."""
    _check_thresh(thresh)
    if score_floor < 0:
        raise ValueError("score_floor must be non-negative")
    scores = {i: d.score for i, d in enumerate(dets) if d.score >= score_floor}
    final: dict[int, float] = {}
    while scores:
        best = min(scores, key=lambda i: (-scores[i], i))
        final[best] = scores.pop(best)
        bb = dets[best]
        for i in list(scores):
            if dets[i].class_id != bb.class_id:
                continue
            ov = iou(bb.box, dets[i].box)
            if ov >= thresh:
                scores[i] *= 1.0 - ov
                if scores[i] < score_floor:
                    del scores[i]
    return sorted(final.items(), key=lambda kv: (-kv[1], kv[0]))


def soft_nms_linear(
    dets: Sequence[ScoredBox],
    thresh: float = DEFAULT_NMS_THRESH,
    score_floor: float = DEFAULT_SCORE_FLOOR,
) -> list[ScoredBox]:
    """Linear soft-NMS.

    Repeatedly selects the highest remaining score; every remaining box of the
    same class overlapping it with IoU >= ``thresh`` is rescored by
    ``score * (1 - IoU)``. Boxes whose score falls below ``score_floor`` are
    dropped. The result is sorted by final score (ties by input position).
    """
    return [replace(dets[i], score=s) for i, s in soft_nms_linear_scores(dets, thresh, score_floor)]


def vfg_nms_indices(dets: Sequence[PairedDetection], thresh: float = DEFAULT_NMS_THRESH) -> list[int]:
    return greedy_nms_indices([d.visible_scored() for d in dets], thresh)


def vfg_nms(dets: Sequence[PairedDetection], thresh: float = DEFAULT_NMS_THRESH) -> list[PairedDetection]:
    """Suppress on the visible boxes, keep whole pairs by surviving index."""
    return [dets[i] for i in vfg_nms_indices(dets, thresh)]
