"""Paired visible/full box regression targets and the per-RoI training loss.

Both boxes of a pair are encoded against the same visible proposal: centre
offsets are normalised by the proposal size and sizes are log-ratios to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple, Sequence

from .geometry import BBox

DEFAULT_LOC_WEIGHT = 3.0
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0


class NonPositiveSize(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class Proposal:
    cx: float
    cy: float
    pw: float
    ph: float

    def __post_init__(self) -> None:
        if not (self.pw > 0 and self.ph > 0):
            raise NonPositiveSize(f"proposal size must be positive: {self.pw}x{self.ph}")

    @classmethod
    def from_bbox(cls, b: BBox) -> "Proposal":
        return cls(b.cx, b.cy, b.w, b.h)


@dataclass(frozen=True)
class PairedGroundTruth:
    """Visible and full box of one instance, both in centre form."""

    vx: float
    vy: float
    vw: float
    vh: float
    fx: float
    fy: float
    fw: float
    fh: float

    @classmethod
    def from_boxes(cls, visible: BBox, full: BBox) -> "PairedGroundTruth":
        return cls(visible.cx, visible.cy, visible.w, visible.h, full.cx, full.cy, full.w, full.h)

    def visible_box(self) -> BBox:
        return BBox(self.vx - self.vw / 2, self.vy - self.vh / 2, self.vw, self.vh)

    def full_box(self) -> BBox:
        return BBox(self.fx - self.fw / 2, self.fy - self.fh / 2, self.fw, self.fh)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.vx, self.vy, self.vw, self.vh, self.fx, self.fy, self.fw, self.fh)


class RegressionTarget(NamedTuple):
    dx_v: float
    dy_v: float
    dw_v: float
    dh_v: float
    dx_f: float
    dy_f: float
    dw_f: float
    dh_f: float


def encode_targets(p: Proposal, gt: PairedGroundTruth) -> RegressionTarget:
    sizes = (gt.vw, gt.vh, gt.fw, gt.fh)
    if not all(s > 0 for s in sizes):
        raise NonPositiveSize(f"ground-truth sizes must be positive: {sizes}")
    return RegressionTarget(
        (gt.vx - p.cx) / p.pw,
        (gt.vy - p.cy) / p.ph,
        math.log(gt.vw / p.pw),
        math.log(gt.vh / p.ph),
        # the full box shares the visible proposal as its reference
        (gt.fx - p.cx) / p.pw,
        (gt.fy - p.cy) / p.ph,
        math.log(gt.fw / p.pw),
        math.log(gt.fh / p.ph),
    )


def decode_targets(p: Proposal, t: Sequence[float]) -> PairedGroundTruth:
    if len(t) != 8:
        raise ValueError(f"expected 8 deltas, got {len(t)}")
    if not all(math.isfinite(v) for v in t):
        raise ValueError("regression deltas must be finite")
    dxv, dyv, dwv, dhv, dxf, dyf, dwf, dhf = t
    return PairedGroundTruth(
        p.cx + dxv * p.pw,
        p.cy + dyv * p.ph,
        p.pw * math.exp(dwv),
        p.ph * math.exp(dhv),
        p.cx + dxf * p.pw,
        p.cy + dyf * p.ph,
        p.pw * math.exp(dwf),
        p.ph * math.exp(dhf),
    )


def smooth_l1(x: float) -> float:
    ax = abs(x)
    if ax < 1.0:
        return 0.5 * x * x
    return ax - 0.5


def smooth_l1_grad(x: float) -> float:
    if abs(x) < 1.0:
        return x
    return math.copysign(1.0, x)


def _log_softmax(scores: Sequence[float]) -> list[float]:
    m = max(scores)
    lse = m + math.log(sum(math.exp(s - m) for s in scores))
    return [s - lse for s in scores]


def _log_sigmoid(z: float) -> float:
    # stable for large |z|
    if z >= 0:
        return -math.log1p(math.exp(-z))
    return z - math.log1p(math.exp(z))


def softmax_cross_entropy(scores: Sequence[float], label: int) -> float:
    return -_log_softmax(scores)[label]


def sigmoid_focal_loss(
    scores: Sequence[float],
    label: int,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> float:
    """One-vs-all sigmoid focal loss summed over the class logits.

    The column at ``label`` is the positive; every other column is a negative.
    """
    total = 0.0
    for k, z in enumerate(scores):
        if k == label:
            log_p = _log_sigmoid(z)
            total += -alpha * (1.0 - math.exp(log_p)) ** gamma * log_p
        else:
            log_q = _log_sigmoid(-z)
            total += -(1.0 - alpha) * (1.0 - math.exp(log_q)) ** gamma * log_q
    return total


@dataclass(frozen=True)
class LossInputs:
    scores: Sequence[float]
    label: int
    pred: Sequence[float]
    target: Sequence[float]
    loc_weight: float = DEFAULT_LOC_WEIGHT

    def __post_init__(self) -> None:
        if not self.loc_weight > 0:
            raise ValueError("loc_weight must be positive")


def localization_loss(pred: Sequence[float], target: Sequence[float]) -> float:
    if len(pred) != 8 or len(target) != 8:
        raise ValueError("localization loss expects 8 deltas on each side")
    return sum(smooth_l1(a - b) for a, b in zip(pred, target))


def multi_task_loss(
    inp: LossInputs, cls_mode: Literal["softmax_ce", "focal"] = "softmax_ce"
) -> float:
    """Classification loss plus weighted smooth-L1 over the eight deltas.

    Operates on a single RoI; averaging over a batch is left to the caller.
    """
    scores = list(inp.scores)
    if not scores or not all(math.isfinite(s) for s in scores):
        raise ValueError("class scores must be a non-empty finite vector")
    if not 0 <= inp.label < len(scores):
        raise LabelOutOfRange(f"label {inp.label} not in [0, {len(scores)})")
    if cls_mode == "softmax_ce":
        cls = softmax_cross_entropy(scores, inp.label)
    elif cls_mode == "focal":
        cls = sigmoid_focal_loss(scores, inp.label)
    else:
        raise ValueError(f"unknown cls_mode {cls_mode!r}")
    return cls + inp.loc_weight * localization_loss(inp.pred, inp.target)
