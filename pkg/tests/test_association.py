import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_assignment
from vfgkit.association import (
    INFEASIBLE_COST,
    CostMatrix,
    EmptyInput,
    associate,
    association_counts,
    build_cost_distance,
    build_cost_iou,
    eval_association,
    hungarian_solve,
    part_anchor,
)
from vfgkit.geometry import BBox

BODY = BBox(0, 0, 50, 100)


def head_at(cx, cy, size=10):
    return BBox(cx - size / 2, cy - size / 2, size, size)


def test_anchor_is_top_centre():
    assert part_anchor(BODY) == (25, 10)


def test_distance_zero_at_anchor():
    assert build_cost_distance([BODY], [head_at(25, 10)]).cost[0, 0] == 0


def test_distance_three_four_five():
    assert build_cost_distance([BODY], [head_at(28, 14)]).cost[0, 0] == pytest.approx(5.0, abs=1e-12)


def test_distance_gated():
    # 0.5 * 100 = 50 px default radius
    assert build_cost_distance([BODY], [head_at(25, 70)]).cost[0, 0] == INFEASIBLE_COST
    assert build_cost_distance([BODY], [head_at(25, 40)], gate=20).cost[0, 0] == INFEASIBLE_COST


def test_distance_part_outside_body():
    assert build_cost_distance([BODY], [head_at(-3, 10)], gate=100).cost[0, 0] == INFEASIBLE_COST


def test_builders_reject_empty():
    with pytest.raises(EmptyInput):
        build_cost_distance([], [BODY])
    with pytest.raises(EmptyInput):
        build_cost_iou([BODY], [])


def test_iou_cost_examples():
    a, b = BBox(0, 0, 10, 10), BBox(5, 0, 10, 10)
    assert build_cost_iou([a], [a]).cost[0, 0] == 0
    assert build_cost_iou([a], [BBox(50, 50, 1, 1)], 0.1).cost[0, 0] == INFEASIBLE_COST
    assert build_cost_iou([a], [b], 0.1).cost[0, 0] == pytest.approx(1 - 1 / 3, abs=1e-12)


def test_iou_cost_containment_gate():
    vis = BBox(0, 0, 10, 10)
    assert build_cost_iou([vis], [BBox(0, 0, 10, 20)], contain=True).cost[0, 0] == 0.5
    assert build_cost_iou([vis], [BBox(5, 0, 10, 20)], contain=True).cost[0, 0] == INFEASIBLE_COST


def test_thin_strips_need_exact_containment():
    # two rear strips whose full boxes differ by half a pixel vertically
    fa, fb = BBox(0, 0.0, 60, 150), BBox(5, 0.5, 60, 149)
    va, vb = BBox(20, 0.0, 10, 150), BBox(30, 0.5, 10, 149)
    loose = build_cost_iou([va, vb], [fa, fb], contain=True, contain_tol=1.0).cost
    exact = build_cost_iou([va, vb], [fa, fb], contain=True).cost
    assert (loose < INFEASIBLE_COST).all()
    assert (exact < INFEASIBLE_COST).tolist() == [[True, False], [True, True]]


def test_cost_matrix_validation():
    with pytest.raises(ValueError):
        CostMatrix(np.zeros(3))
    with pytest.raises(ValueError):
        CostMatrix(np.array([[np.inf]]))


def solve(c):
    return hungarian_solve(CostMatrix(np.array(c, dtype=float)))


def test_solver_examples():
    assert solve([[7.5]]).pairs == [(0, 0)] and solve([[7.5]]).total_cost == 7.5
    s = solve([[1, 10], [10, 1]])
    assert s.pairs == [(0, 0), (1, 1)] and s.total_cost == 2
    s = solve([[4, 1, 3], [2, 0, 5]])
    assert s.pairs == [(0, 1), (1, 0)] and s.total_cost == 3


def test_tall_matrix_transposed():
    s = solve([[4, 2], [1, 0], [3, 5]])
    assert s.pairs == [(0, 1), (1, 0)] and s.total_cost == 3


def test_empty_matrix():
    assert solve(np.zeros((0, 3))).pairs == []


def greedy_total(c):
    c = np.array(c, dtype=float)
    rows, cols, total = set(), set(), 0.0
    for _ in range(min(c.shape)):
        best = min(
            ((c[i, j], i, j) for i in range(c.shape[0]) for j in range(c.shape[1])
             if i not in rows and j not in cols)
        )
        total += best[0]
        rows.add(best[1])
        cols.add(best[2])
    return total


def test_greedy_versus_optimal():
    # [[2,3],[1,100]]: the two permutations cost 102 and 4; greedy happens to find 4 too
    assert solve([[2, 3], [1, 100]]).total_cost == 4 == greedy_total([[2, 3], [1, 100]])
    # taking the cheapest entry first forces the 100
    c = [[1, 2], [2, 100]]
    assert greedy_total(c) == 101
    assert solve(c).total_cost == 4 == brute_force_assignment(c)


def test_associate_examples():
    r = associate([], [])
    assert r.matched == [] and r.unmatched_bodies == [] and r.unmatched_parts == []
    h = head_at(25, 10)
    assert associate([BODY], [h]).matched == [(BODY, h)]
    far = head_at(25, 90)
    r = associate([BODY], [far])
    assert r.matched == [] and r.unmatched_parts == [far]


def test_associate_unknown_metric():
    with pytest.raises(ValueError):
        associate([BODY], [BODY], metric="cosine")


def test_associate_two_people():
    b2 = BBox(40, 0, 50, 100)
    h1, h2 = head_at(25, 10), head_at(65, 10)
    r = associate([BODY, b2], [h2, h1])
    assert sorted(r.matched_indices) == [(0, 1), (1, 0)]


cost_values = st.one_of(
    st.integers(min_value=0, max_value=9).map(float),
    st.floats(min_value=0, max_value=100, allow_nan=False, allow_infinity=False),
)


@st.composite
def cost_matrices(draw, max_dim=6):
    n = draw(st.integers(min_value=1, max_value=max_dim))
    m = draw(st.integers(min_value=1, max_value=max_dim))
    return draw(arrays(np.float64, (n, m), elements=cost_values))


@given(cost_matrices())
def test_optimal_against_enumeration(c):
    assert hungarian_solve(CostMatrix(c)).total_cost == brute_force_assignment(c)


@given(cost_matrices())
def test_assignment_constraints(c):
    s = hungarian_solve(CostMatrix(c))
    rows = [i for i, _ in s.pairs]
    cols = [j for _, j in s.pairs]
    assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
    if c.shape[0] <= c.shape[1]:
        assert sorted(rows) == list(range(c.shape[0]))
    else:
        assert sorted(cols) == list(range(c.shape[1]))


@given(cost_matrices(), st.randoms(use_true_random=False))
def test_permutation_invariance(c, rnd):
    rp = list(range(c.shape[0]))
    cp = list(range(c.shape[1]))
    rnd.shuffle(rp)
    rnd.shuffle(cp)
    assert hungarian_solve(CostMatrix(c[np.ix_(rp, cp)])).total_cost == hungarian_solve(CostMatrix(c)).total_cost


@st.composite
def body_part_sets(draw):
    coord = st.integers(min_value=0, max_value=200)
    bodies = [BBox(draw(coord), draw(coord), 40, 100) for _ in range(draw(st.integers(0, 5)))]
    parts = [head_at(draw(coord), draw(coord)) for _ in range(draw(st.integers(0, 5)))]
    return bodies, parts


@given(body_part_sets())
def test_partition(bp):
    bodies, parts = bp
    r = associate(bodies, parts)
    assert len(r.matched) + len(r.unmatched_bodies) == len(bodies)
    assert len(r.matched) + len(r.unmatched_parts) == len(parts)
    assert [p for _, p in r.matched] == [parts[j] for _, j in r.matched_indices]


GT = [(BBox(0, 0, 50, 100), head_at(25, 10)), (BBox(100, 0, 50, 100), head_at(125, 10))]


def test_eval_association_examples():
    assert eval_association(GT, GT) == (1.0, 1.0)
    assert eval_association(GT, []) == (0.0, 0.0)
    assert eval_association(GT, GT[:1]) == (0.5, 1.0)
    assert eval_association([], GT) == (1.0, 0.0)


def test_eval_association_each_gt_used_once():
    assert eval_association(GT[:1], GT[:1] * 3) == (1.0, pytest.approx(1 / 3))


def test_eval_association_both_thresholds_required():
    shifted = [(GT[0][0], head_at(30, 10))]  # part IoU 1/3
    assert eval_association(GT[:1], shifted) == (0.0, 0.0)
    assert eval_association(GT[:1], shifted, thresh_p=0.3) == (1.0, 1.0)


def test_association_counts_add():
    a = association_counts(GT, GT)
    b = association_counts(GT, GT[:1])
    assert (a + b).recall == 3 / 4 and (a + b).precision == 1.0


@pytest.mark.parametrize("t", [0.0, 1.5])
def test_eval_association_threshold_domain(t):
    with pytest.raises(ValueError):
        eval_association(GT, GT, thresh_b=t)


def test_gt_self_association_via_solver():
    bodies = [b for b, _ in GT]
    parts = [p for _, p in GT]
    for perm in itertools.permutations(range(2)):
        r = associate(bodies, [parts[k] for k in perm])
        assert eval_association(GT, r.matched) == (1.0, 1.0)
