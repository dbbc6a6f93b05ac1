import math
import random

import pytest
from hypothesis import given, strategies as st

from oracles import brute_force_ap, brute_force_mr2, reference_match
from vfgkit.evaluation import (
    FP,
    IGNORED,
    TP,
    EmptyCurve,
    GroundTruthInstance,
    MissingVisibleBox,
    NoGroundTruth,
    apply_subset,
    average_precision,
    evaluate,
    fppi_curve,
    get_subset,
    log_average_miss_rate,
    match_all,
    match_detections,
    report_csv,
    sweep_iou,
)
from vfgkit.geometry import BBox
from vfgkit.nms import ScoredBox

SQ = BBox(0, 0, 10, 10)


def gt(box=SQ, ignore=False, visible=None):
    return GroundTruthInstance(box, visible, None, ignore)


def det(box, s):
    return ScoredBox(box, s)


def test_match_exact():
    log = match_detections([det(SQ, 0.9)], [gt()])
    assert (log.tp, log.fp, log.n_gt - log.tp) == (1, 0, 0)


def test_match_disjoint():
    log = match_detections([det(BBox(50, 50, 10, 10), 0.9)], [gt()])
    assert (log.tp, log.fp, log.n_gt - log.tp) == (0, 1, 1)


def test_two_dets_one_gt():
    near = BBox(0, 0, 10, 6)  # IoU 0.6
    log = match_detections([det(near, 0.8), det(SQ, 0.9)], [gt()])
    assert log.labels == (TP, FP) and log.scores == (0.9, 0.8)


def test_match_prefers_unused_non_ignore():
    log = match_detections([det(SQ, 0.9)], [gt(ignore=True), gt()])
    assert log.labels == (TP,) and log.matched_gt == (1,)


def test_ignore_absorbs_many():
    log = match_detections([det(SQ, 0.9), det(SQ, 0.8)], [gt(ignore=True)])
    assert log.labels == (IGNORED, IGNORED) and log.n_gt == 0


def test_threshold_domain():
    with pytest.raises(ValueError):
        match_detections([], [], 1.0)


def image_logs(images, thr=0.5):
    return [match_detections(d, g, thr) for d, g in images]


def test_ap_perfect_and_empty():
    assert average_precision(image_logs([([det(SQ, 0.9)], [gt()])])) == 1.0
    assert average_precision(image_logs([([], [gt()])])) == 0.0


def test_ap_worked_example():
    far = BBox(100, 0, 10, 10)
    g2 = BBox(200, 0, 10, 10)
    images = [([det(SQ, 0.9), det(far, 0.8), det(g2, 0.7)], [gt(), gt(g2)])]
    expected = (51 * 1.0 + 50 * (2 / 3)) / 101
    assert average_precision(image_logs(images)) == pytest.approx(expected, abs=1e-12)


def test_ap_needs_gt():
    with pytest.raises(NoGroundTruth):
        average_precision(image_logs([([det(SQ, 0.5)], [])]))


def test_mr_no_detections_is_one():
    assert log_average_miss_rate(fppi_curve(image_logs([([], [gt()])]))) == 1.0


def test_mr_perfect_is_floor():
    mr = log_average_miss_rate(fppi_curve(image_logs([([det(SQ, 0.9)], [gt()])])))
    assert mr == pytest.approx(1e-4, rel=1e-12)


def test_mr_worked_example():
    # ten images, one GT each; five hits, one false positive, three more hits
    far = BBox(100, 0, 10, 10)
    images = []
    for k in range(10):
        dets = []
        if k < 5:
            dets.append(det(SQ, 0.95 - 0.01 * k))
        if k == 5:
            dets.append(det(far, 0.8))
        if 6 <= k < 9:
            dets.append(det(SQ, 0.7 - 0.01 * k))
        images.append((dets, [gt()]))
    expected = math.exp((4 * math.log(0.5) + 5 * math.log(0.2)) / 9)
    got = log_average_miss_rate(fppi_curve(image_logs(images)))
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.3005, abs=1e-4)


def test_mr_empty_curve():
    with pytest.raises(EmptyCurve):
        log_average_miss_rate([])
    with pytest.raises(EmptyCurve):
        fppi_curve([], 0)


def test_fppi_counts_images_without_gt():
    logs = image_logs([([det(SQ, 0.9)], [gt()]), ([det(SQ, 0.5)], [])])
    assert fppi_curve(logs)[-1].fppi == 0.5


def test_curve_shape():
    far = BBox(100, 0, 10, 10)
    logs = image_logs([([det(SQ, 0.9), det(far, 0.8), det(far, 0.8)], [gt()])])
    c = fppi_curve(logs)
    assert [p.score_threshold for p in c] == [math.inf, 0.9, 0.8]
    assert [p.fppi for p in c] == [0.0, 0.0, 2.0]


def occluded(occ, h=100):
    full = BBox(0, 0, 40, h)
    return gt(full, visible=BBox(0, 0, 40 * (1 - occ), h))


@pytest.mark.parametrize(
    "occ, subset, kept",
    [(0.05, "bare", True), (0.20, "bare", False), (0.20, "partial", True),
     (0.05, "partial", False), (0.40, "heavy", True), (0.20, "heavy", False),
     (0.20, "reasonable", True), (0.40, "reasonable", False), (0.35, "partial", False),
     (0.10, "bare", True), (0.10, "partial", False)],
)
def test_subset_occlusion(occ, subset, kept):
    (g,) = apply_subset([occluded(occ)], get_subset(subset))
    assert g.ignore is (not kept)


@pytest.mark.parametrize("h, kept", [(49, False), (50, True), (74, True), (75, False)])
def test_small_subset_height(h, kept):
    (g,) = apply_subset([gt(BBox(0, 0, 20, h))], get_subset("small"))
    assert g.ignore is (not kept)


def test_subset_needs_visible():
    with pytest.raises(MissingVisibleBox):
        apply_subset([gt()], get_subset("bare"))
    assert apply_subset([gt()], get_subset("small"))[0].ignore


def test_unknown_subset():
    with pytest.raises(ValueError):
        get_subset("tiny")


def test_evaluate_report():
    images = [([det(SQ, 0.9)], [gt()]), ([], [gt()])]
    rep = evaluate([d for d, _ in images], [g for _, g in images], subsets=("full",))
    m = rep.subsets["full"]
    assert m.recall == 0.5 and m.AP50 == pytest.approx(51 / 101) and m.n_gt == 2
    assert m.AP50 >= m.mAP
    assert rep.to_json() == rep.to_json()
    csv_text = report_csv(rep)
    assert csv_text.splitlines()[0].startswith("kind,subset,iou")


def test_evaluate_empty_subset_gives_none():
    rep = evaluate([[]], [[occluded(0.1)]], subsets=("heavy",))
    assert rep.subsets["heavy"].MR2 is None


def test_sweep_uniform_shift():
    d = 30 / 1.7  # (100 - d) / (100 + d) = 0.7
    g = BBox(0, 0, 100, 100)
    images = [[det(g.shift(d, 0), 0.9)] for _ in range(3)]
    gts = [[gt(g)] for _ in range(3)]
    rows = sweep_iou(images, gts, [0.5, 0.75])
    assert rows[0].tp == 3 and rows[1].tp == 0
    assert rows[0].MR2 == pytest.approx(1e-4) and rows[1].MR2 == 1.0
    assert rows[0].AP == 1.0 and rows[1].AP == 0.0


def test_sweep_single_point_matches_scalar():
    images = [[det(SQ, 0.9), det(BBox(0, 0, 10, 7), 0.6)]]
    gts = [[gt(), gt(BBox(20, 0, 10, 10))]]
    (row,) = sweep_iou(images, gts, [0.5])
    logs = match_all(images, gts, 0.5)
    assert row.AP == average_precision(logs)
    assert row.MR2 == log_average_miss_rate(fppi_curve(logs))


@pytest.mark.parametrize("grid", [[], [0.5, 0.5], [0.6, 0.5], [0.0, 0.5], [0.5, 1.0]])
def test_sweep_grid_validation(grid):
    with pytest.raises(ValueError):
        sweep_iou([[]], [[gt()]], grid)


def test_ignore_region_can_help_at_stricter_threshold():
    # d1 overlaps A at 0.55 and sits exactly on an ignore region; d2 overlaps A at 0.82
    a = BBox(0, 0, 100, 100)
    d1 = BBox(45 / 1.55, 0, 100, 100)
    d2 = BBox(-10, 0, 100, 100)
    b = BBox(500, 0, 100, 100)
    dets = [[det(d1, 0.9), det(d2, 0.8)], [det(b, 0.5)]]
    gts = [[gt(a), gt(d1, ignore=True)], [gt(b)]]
    lo, hi = sweep_iou(dets, gts, [0.5, 0.6])
    assert lo.tp == hi.tp == 2
    assert lo.AP < hi.AP == 1.0


coord = st.integers(min_value=0, max_value=30)
size = st.integers(min_value=4, max_value=20)
box_st = st.builds(BBox, coord, coord, size, size)


@st.composite
def micro_instances(draw, allow_ignore=True):
    n_img = draw(st.integers(min_value=1, max_value=5))
    images = []
    for _ in range(n_img):
        gts = [
            (draw(box_st), draw(st.booleans()) if allow_ignore else False)
            for _ in range(draw(st.integers(min_value=0, max_value=6)))
        ]
        dets = [
            (draw(st.sampled_from([0.2, 0.4, 0.5, 0.6, 0.9])), draw(box_st))
            for _ in range(draw(st.integers(min_value=0, max_value=8)))
        ]
        images.append((dets, gts))
    return images


def to_native(images):
    return (
        [[det(b, s) for s, b in dets] for dets, _ in images],
        [[gt(b, ign) for b, ign in gts] for _, gts in images],
    )


def as_oracle(images):
    return [
        ([(s, b.to_list()) for s, b in dets], [(b.to_list(), ign) for b, ign in gts])
        for dets, gts in images
    ]


def n_gt(images):
    return sum(1 for _, gts in images for _, ign in gts if not ign)


@given(micro_instances(), st.sampled_from([0.3, 0.5, 0.7]))
def test_matching_against_reference(images, thr):
    dets, gts = to_native(images)
    for (d, g), (od, og) in zip(zip(dets, gts), as_oracle(images)):
        log = match_detections(d, g, thr)
        assert list(zip(log.scores, log.labels)) == reference_match(od, og, thr)


@given(micro_instances(), st.sampled_from([0.3, 0.5, 0.7]))
def test_metrics_against_brute_force(images, thr):
    if n_gt(images) == 0:
        return
    dets, gts = to_native(images)
    logs = match_all(dets, gts, thr)
    ref = as_oracle(images)
    assert abs(average_precision(logs) - brute_force_ap(ref, thr)) <= 1e-12
    assert abs(log_average_miss_rate(fppi_curve(logs)) - brute_force_mr2(ref, thr)) <= 1e-12


@given(micro_instances(), st.randoms(use_true_random=False))
def test_shuffle_determinism(images, rnd):
    if n_gt(images) == 0:
        return
    dets, gts = to_native(images)
    shuffled = [rnd.sample(d, len(d)) for d in dets]
    a = evaluate(dets, gts, subsets=("full",)).to_json()
    b = evaluate(shuffled, gts, subsets=("full",)).to_json()
    assert a == b


@given(micro_instances())
def test_ignore_neutrality(images):
    if n_gt(images) == 0:
        return
    dets, gts = to_native(images)
    far = BBox(1000, 1000, 10, 10)
    dets2 = [list(d) for d in dets]
    gts2 = [list(g) for g in gts]
    dets2[0].append(det(far, 0.7))
    gts2[0].append(gt(far, ignore=True))
    assert evaluate(dets, gts, subsets=("full",)).to_json() == evaluate(dets2, gts2, subsets=("full",)).to_json()


@given(micro_instances())
def test_sequential_equals_parallel(images):
    if n_gt(images) == 0:
        return
    dets, gts = to_native(images)
    assert evaluate(dets, gts, subsets=("full",)).to_json(True) == evaluate(
        dets, gts, subsets=("full",), workers=4
    ).to_json(True)


@given(micro_instances(allow_ignore=False))
def test_iou_monotonicity_without_ignores(images):
    if n_gt(images) == 0:
        return
    dets, gts = to_native(images)
    rows = sweep_iou(dets, gts, [0.5 + 0.05 * k for k in range(10)])
    for a, b in zip(rows, rows[1:]):
        assert b.tp <= a.tp
        assert b.MR2 >= a.MR2
        assert b.AP <= a.AP


@given(micro_instances())
def test_tp_monotone_with_ignores(images):
    if n_gt(images) == 0:
        return
    dets, gts = to_native(images)
    rows = sweep_iou(dets, gts, [0.5 + 0.05 * k for k in range(10)])
    assert all(b.tp <= a.tp for a, b in zip(rows, rows[1:]))


@given(micro_instances())
def test_metric_bounds(images):
    if n_gt(images) == 0:
        return
    dets, gts = to_native(images)
    m = evaluate(dets, gts, subsets=("full",)).subsets["full"]
    for v in (m.mAP, m.AP50, m.recall, m.MR2):
        assert 0.0 <= v <= 1.0
    assert m.AP50 >= m.mAP - 1e-15
