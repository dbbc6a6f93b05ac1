"""Body-part association as a rectangular linear assignment problem."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .geometry import BBox, iou_matrix

INFEASIBLE_COST = 1e6
DEFAULT_ANCHOR_FRAC = 0.1
DEFAULT_GATE_FRAC = 0.5
# float slack only: a visible box is a subset of its full box by definition
DEFAULT_CONTAIN_TOL = 1e-6


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class CostMatrix:
    cost: np.ndarray
    infeasible_cost: float = INFEASIBLE_COST

    def __post_init__(self) -> None:
        c = np.asarray(self.cost, dtype=np.float64)
        if c.ndim != 2:
            raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost matrix entries must be finite")
        object.__setattr__(self, "cost", c)

    @property
    def rows(self) -> int:
        return self.cost.shape[0]

    @property
    def cols(self) -> int:
        return self.cost.shape[1]


@dataclass(frozen=True)
class Assignment:
    """Solution of the assignment problem.

    ``pairs`` are ``(row, col)`` in the orientation of the input matrix, sorted
    by row. When rows <= cols every row appears exactly once; otherwise every
    column does. ``infeasible`` lists pairs resolved at the sentinel cost.
    """

    pairs: list[tuple[int, int]]
    total_cost: float
    infeasible: frozenset[tuple[int, int]] = frozenset()

    def feasible_pairs(self) -> list[tuple[int, int]]:
        return [p for p in self.pairs if p not in self.infeasible]


@dataclass
class AssociationResult:
    matched: list[tuple[BBox, BBox]] = field(default_factory=list)
    unmatched_bodies: list[BBox] = field(default_factory=list)
    unmatched_parts: list[BBox] = field(default_factory=list)
    matched_indices: list[tuple[int, int]] = field(default_factory=list)


def part_anchor(body: BBox, anchor_frac: float = DEFAULT_ANCHOR_FRAC) -> tuple[float, float]:
    """Expected part centre: top-centre of the body at ``anchor_frac`` height."""
    return body.x + body.w / 2, body.y + anchor_frac * body.h


def build_cost_distance(
    bodies: Sequence[BBox],
    parts: Sequence[BBox],
    gate: float | None = None,
    *,
    gate_frac: float = DEFAULT_GATE_FRAC,
    anchor_frac: float = DEFAULT_ANCHOR_FRAC,
    infeasible_cost: float = INFEASIBLE_COST,
) -> CostMatrix:
    """Euclidean distance from each body's part anchor to each part centre.

    ``gate`` is an absolute pixel radius; when ``None`` each body uses
    ``gate_frac * body.h``. Parts beyond the gate, or whose centre falls
    outside the body box, are infeasible.
    """
    if not bodies or not parts:
        raise EmptyInput("distance cost needs at least one body and one part")
    if gate is not None and not gate > 0:
        raise ValueError("gate must be positive")
    cost = np.empty((len(bodies), len(parts)))
    for i, b in enumerate(bodies):
        ax, ay = part_anchor(b, anchor_frac)
        radius = gate if gate is not None else gate_frac * b.h
        for j, p in enumerate(parts):
            px, py = p.cx, p.cy
            d = math.hypot(px - ax, py - ay)
            if d > radius or not b.contains_point(px, py):
                cost[i, j] = infeasible_cost
            else:
                cost[i, j] = d
    return CostMatrix(cost, infeasible_cost)


def build_cost_iou(
    boxes_a: Sequence[BBox],
    boxes_b: Sequence[BBox],
    min_iou: float = 0.0,
    *,
    contain: bool = False,
    contain_tol: float = DEFAULT_CONTAIN_TOL,
    infeasible_cost: float = INFEASIBLE_COST,
) -> CostMatrix:
    """Cost ``1 - IoU``; pairs below ``min_iou`` (or with no overlap) are infeasible.

    With ``contain`` set, ``boxes_a[i]`` must also lie inside ``boxes_b[j]``
    up to ``contain_tol`` pixels, which is how visible boxes are tied to
    their full boxes. Loosening the tolerance lets a thin visible strip fit
    inside a neighbour's full box as well, so keep it at float slack unless
    the annotations are known to overshoot.
    """
    if not boxes_a or not boxes_b:
        raise EmptyInput("IoU cost needs two non-empty box lists")
    if not 0.0 <= min_iou < 1.0:
        raise ValueError("min_iou must lie in [0, 1)")
    ov = iou_matrix(boxes_a, boxes_b)
    ok = (ov >= min_iou) & (ov > 0)
    if contain:
        inside = np.array([[b.contains(a, contain_tol) for b in boxes_b] for a in boxes_a])
        ok &= inside.reshape(ok.shape)
    cost = np.where(ok, 1.0 - ov, infeasible_cost)
    return CostMatrix(cost, infeasible_cost)


def _solve_rows_le_cols(cost: list[list[float]]) -> list[int]:
    """Shortest augmenting path Hungarian method with row/column potentials.

    Requires ``len(cost) <= len(cost[0])``; returns the column of each row.
    O(n^2 m) for an n x m matrix.
    """
    n, m = len(cost), len(cost[0])
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    # owner[j] = row (1-based) assigned to column j; column 0 is a virtual root
    owner = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = owner[j0]
            row = cost[i0 - 1]
            delta = inf
            j1 = -1
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of = [-1] * n
    for j in range(1, m + 1):
        if owner[j]:
            col_of[owner[j] - 1] = j - 1
    return col_of


def hungarian_solve(m: CostMatrix) -> Assignment:
    """Minimum-cost assignment; tall matrices are solved on their transpose."""
    c = m.cost
    if c.size == 0:
        return Assignment([], 0.0)
    transposed = c.shape[0] > c.shape[1]
    work = c.T if transposed else c
    col_of = _solve_rows_le_cols(work.tolist())
    pairs = [(j, i) for i, j in enumerate(col_of)] if transposed else list(enumerate(col_of))
    pairs.sort()
    # exactly rounded, so the total does not depend on summation order
    total = math.fsum(float(c[i, j]) for i, j in pairs)
    infeasible = frozenset(p for p in pairs if c[p] >= m.infeasible_cost)
    return Assignment(pairs, total, infeasible)


def associate(
    bodies: Sequence[BBox],
    parts: Sequence[BBox],
    metric: Literal["distance", "iou"] = "distance",
    **gate_params,
) -> AssociationResult:
    """Build the cost matrix for ``metric``, solve it, drop infeasible pairs.

    ``gate_params`` are forwarded to :func:`build_cost_distance` or
    :func:`build_cost_iou`.
    """
    if not bodies or not parts:
        return AssociationResult(unmatched_bodies=list(bodies), unmatched_parts=list(parts))
    if metric == "distance":
        cm = build_cost_distance(bodies, parts, **gate_params)
    elif metric == "iou":
        cm = build_cost_iou(bodies, parts, **gate_params)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    sol = hungarian_solve(cm)
    keep = sol.feasible_pairs()
    used_b = {i for i, _ in keep}
    used_p = {j for _, j in keep}
    return AssociationResult(
        matched=[(bodies[i], parts[j]) for i, j in keep],
        unmatched_bodies=[b for i, b in enumerate(bodies) if i not in used_b],
        unmatched_parts=[p for j, p in enumerate(parts) if j not in used_p],
        matched_indices=keep,
    )


@dataclass(frozen=True)
class AssociationCounts:
    matched: int
    n_gt: int
    n_pred: int

    def __add__(self, other: "AssociationCounts") -> "AssociationCounts":
        return AssociationCounts(
            self.matched + other.matched, self.n_gt + other.n_gt, self.n_pred + other.n_pred
        )

    @property
    def recall(self) -> float:
        return self.matched / self.n_gt if self.n_gt else 1.0

    @property
    def precision(self) -> float:
        return self.matched / self.n_pred if self.n_pred else 0.0


def association_counts(
    gt_pairs: Sequence[tuple[BBox, BBox]],
    pred_pairs: Sequence[tuple[BBox, BBox]],
    thresh_b: float = 0.5,
    thresh_p: float = 0.5,
) -> AssociationCounts:
    """Count predicted pairs that validate against a distinct ground-truth pair.

    A prediction validates when body IoU >= ``thresh_b`` and part IoU >=
    ``thresh_p``. Predictions and ground truth are first paired one-to-one
    by minimising ``2 - iou_body - iou_part`` over the validating pairs.
    """
    for t in (thresh_b, thresh_p):
        if not 0.0 < t <= 1.0:
            raise ValueError("association thresholds must lie in (0, 1]")
    if not gt_pairs or not pred_pairs:
        return AssociationCounts(0, len(gt_pairs), len(pred_pairs))
    ob = iou_matrix([g[0] for g in gt_pairs], [p[0] for p in pred_pairs])
    op = iou_matrix([g[1] for g in gt_pairs], [p[1] for p in pred_pairs])
    ok = (ob >= thresh_b) & (op >= thresh_p)
    cost = np.where(ok, 2.0 - ob - op, INFEASIBLE_COST)
    sol = hungarian_solve(CostMatrix(cost))
    return AssociationCounts(len(sol.feasible_pairs()), len(gt_pairs), len(pred_pairs))


def eval_association(
    gt_pairs: Sequence[tuple[BBox, BBox]],
    pred_pairs: Sequence[tuple[BBox, BBox]],
    thresh_b: float = 0.5,
    thresh_p: float = 0.5,
) -> tuple[float, float]:
    """Return ``(recall, precision)`` of predicted pairs against ground truth.

    Empty ground truth gives recall 1; no predictions gives precision 0.
    """
    c = association_counts(gt_pairs, pred_pairs, thresh_b, thresh_p)
    return c.recall, c.precision

