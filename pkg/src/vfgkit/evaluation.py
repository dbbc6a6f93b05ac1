"""Pedestrian detection metrics: AP / mAP / AP50, recall and log-average miss rate.

Detections are matched to ground truth per image, greedily in descending
score order. Matching results are kept as per-image :class:`MatchLog` values
and every metric is a fold over those logs, so images can be matched in
parallel without changing any number.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import groupby
from typing import Iterable, Sequence

from .geometry import BBox, iou, occlusion_ratio
from .nms import ScoredBox

TP, FP, IGNORED = 1, 0, -1

COCO_IOUS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_GRID = tuple(k / 100 for k in range(101))
FPPI_REFS = tuple(10.0 ** (-2.0 + 0.25 * k) for k in range(9))
MR_FLOOR = 1e-4


class NoGroundTruth(ValueError):
    pass


class EmptyCurve(ValueError):
    pass


class MissingVisibleBox(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruthInstance:
    full: BBox
    visible: BBox | None = None
    head: BBox | None = None
    ignore: bool = False

    @property
    def height(self) -> float:
        return self.full.h


@dataclass(frozen=True)
class MatchLog:
    """Outcome of matching one image, in processing order.

    ``labels`` holds TP (1), FP (0) or IGNORED (-1) per detection and
    ``matched_gt`` the ground-truth index each detection was assigned to.
    """

    scores: tuple[float, ...]
    labels: tuple[int, ...]
    matched_gt: tuple[int | None, ...]
    n_gt: int

    @property
    def tp(self) -> int:
        return sum(1 for l in self.labels if l == TP)

    @property
    def fp(self) -> int:
        return sum(1 for l in self.labels if l == FP)


@dataclass(frozen=True)
class FppiCurvePoint:
    fppi: float
    miss_rate: float
    score_threshold: float


def _processing_order(dets: Sequence[ScoredBox]) -> list[int]:
    # geometry breaks score ties so the result does not depend on input order
    def key(i: int):
        d = dets[i]
        return (-d.score, d.box.x, d.box.y, d.box.w, d.box.h, d.class_id, i)

    return sorted(range(len(dets)), key=key)


def match_detections(
    dets: Sequence[ScoredBox], gts: Sequence[GroundTruthInstance], iou_thresh: float = 0.5
) -> MatchLog:
    """Greedy score-ordered matching of one image.

    Each detection takes the still-unmatched non-ignore ground truth with the
    highest IoU >= ``iou_thresh``. Failing that, an ignore instance with IoU
    >= ``iou_thresh`` absorbs it without credit (ignore instances can absorb
    any number of detections); otherwise it is a false positive.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError(f"iou_thresh must lie in (0, 1), got {iou_thresh}")
    used = [False] * len(gts)
    scores, labels, matched = [], [], []
    for i in _processing_order(dets):
        box = dets[i].box
        best_j, best_o = None, -1.0
        best_ign, best_ign_o = None, -1.0
        for j, g in enumerate(gts):
            o = iou(box, g.full)
            if o < iou_thresh:
                continue
            if g.ignore:
                if o > best_ign_o:
                    best_ign, best_ign_o = j, o
            elif not used[j] and o > best_o:
                best_j, best_o = j, o
        scores.append(dets[i].score)
        if best_j is not None:
            used[best_j] = True
            labels.append(TP)
            matched.append(best_j)
        elif best_ign is not None:
            labels.append(IGNORED)
            matched.append(best_ign)
        else:
            labels.append(FP)
            matched.append(None)
    n_gt = sum(1 for g in gts if not g.ignore)
    return MatchLog(tuple(scores), tuple(labels), tuple(matched), n_gt)


def _cumulative_at_thresholds(logs: Sequence[MatchLog]) -> list[tuple[float, int, int]]:
    """``(score, tp, fp)`` cumulated at every distinct score, highest first."""
    entries = sorted(
        ((s, l) for log in logs for s, l in zip(log.scores, log.labels) if l != IGNORED),
        key=lambda e: -e[0],
    )
    out = []
    tp = fp = 0
    for score, group in groupby(entries, key=lambda e: e[0]):
        for _, label in group:
            if label == TP:
                tp += 1
            else:
                fp += 1
        out.append((score, tp, fp))
    return out


def total_gt(logs: Iterable[MatchLog]) -> int:
    return sum(log.n_gt for log in logs)


def average_precision(logs: Sequence[MatchLog]) -> float:
    """101-point interpolated AP over match logs produced at one IoU threshold."""
    n_gt = total_gt(logs)
    if n_gt == 0:
        raise NoGroundTruth("average precision needs at least one ground-truth instance")
    pts = _cumulative_at_thresholds(logs)
    recall = [tp / n_gt for _, tp, _ in pts]
    precision = [tp / (tp + fp) for _, tp, fp in pts]
    for k in range(len(precision) - 2, -1, -1):
        precision[k] = max(precision[k], precision[k + 1])
    total = 0.0
    k = 0
    for r in RECALL_GRID:
        while k < len(recall) and recall[k] < r:
            k += 1
        if k == len(recall):
            break
        total += precision[k]
    return total / len(RECALL_GRID)


def final_recall(logs: Sequence[MatchLog]) -> float:
    n_gt = total_gt(logs)
    if n_gt == 0:
        raise NoGroundTruth("recall needs at least one ground-truth instance")
    return sum(log.tp for log in logs) / n_gt


def fppi_curve(logs: Sequence[MatchLog], n_images: int | None = None) -> list[FppiCurvePoint]:
    """Miss rate against false positives per image, one point per distinct score.

    The first point (threshold +inf) is the empty detection set.
    """
    n_images = len(logs) if n_images is None else n_images
    if n_images <= 0:
        raise EmptyCurve("FPPI curve needs at least one image")
    n_gt = total_gt(logs)
    if n_gt == 0:
        raise NoGroundTruth("miss rate needs at least one ground-truth instance")
    curve = [FppiCurvePoint(0.0, 1.0, math.inf)]
    for score, tp, fp in _cumulative_at_thresholds(logs):
        curve.append(FppiCurvePoint(fp / n_images, 1.0 - tp / n_gt, score))
    return curve


def log_average_miss_rate(curve: Sequence[FppiCurvePoint], floor: float = MR_FLOOR) -> float:
    """Geometric mean of the miss rate sampled at 9 log-spaced FPPI in [1e-2, 1].

    Each reference takes the last curve point whose FPPI does not exceed it,
    or the first point when none does.
    """
    if not curve:
        raise EmptyCurve("cannot average an empty curve")
    logs = []
    for ref in FPPI_REFS:
        mr = curve[0].miss_rate
        for p in curve:
            if p.fppi <= ref:
                mr = p.miss_rate
            else:
                break
        logs.append(math.log(max(mr, floor)))
    return math.exp(sum(logs) / len(logs))


@dataclass(frozen=True)
class SubsetFilter:
    """Occlusion interval plus half-open height interval ``[min_h, max_h)``."""

    name: str
    occ_lo: float = 0.0
    occ_hi: float = 1.0
    lo_inclusive: bool = True
    hi_inclusive: bool = True
    min_h: float = 0.0
    max_h: float = math.inf

    def __post_init__(self) -> None:
        if self.occ_lo > self.occ_hi or self.min_h > self.max_h:
            raise ValueError(f"inconsistent bounds in subset {self.name}")

    @property
    def uses_occlusion(self) -> bool:
        return not (
            self.occ_lo <= 0.0 and self.lo_inclusive and self.occ_hi >= 1.0 and self.hi_inclusive
        )

    def accepts(self, occlusion: float | None, height: float) -> bool:
        if not self.min_h <= height < self.max_h:
            return False
        if not self.uses_occlusion:
            return True
        lo_ok = occlusion >= self.occ_lo if self.lo_inclusive else occlusion > self.occ_lo
        hi_ok = occlusion <= self.occ_hi if self.hi_inclusive else occlusion < self.occ_hi
        return lo_ok and hi_ok


SUBSETS: dict[str, SubsetFilter] = {
    "reasonable": SubsetFilter("Reasonable", 0.0, 0.35, True, False, min_h=50),
    "small": SubsetFilter("Small", min_h=50, max_h=75),
    "heavy": SubsetFilter("Heavy", 0.35, 1.0, True, True),
    "partial": SubsetFilter("Partial", 0.10, 0.35, False, False, min_h=50),
    "bare": SubsetFilter("Bare", 0.0, 0.10, True, True, min_h=50),
    "all": SubsetFilter("All", 0.0, 0.8, True, True, min_h=20),
    "full": SubsetFilter("Full"),
}


def get_subset(name: str) -> SubsetFilter:
    try:
        return SUBSETS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown subset {name!r}; choose from {sorted(SUBSETS)}") from None


def apply_subset(
    gts: Sequence[GroundTruthInstance], subset: SubsetFilter
) -> list[GroundTruthInstance]:
    """Mark instances outside ``subset`` as ignore."""
    out = []
    for g in gts:
        if g.ignore:
            out.append(g)
            continue
        occ = None
        if subset.uses_occlusion:
            if g.visible is None:
                raise MissingVisibleBox(f"subset {subset.name} needs visible boxes")
            occ = occlusion_ratio(g.visible, g.full).occlusion
        if subset.accepts(occ, g.height):
            out.append(g)
        else:
            out.append(replace(g, ignore=True))
    return out


def match_all(
    dets_by_image: Sequence[Sequence[ScoredBox]],
    gts_by_image: Sequence[Sequence[GroundTruthInstance]],
    iou_thresh: float,
    workers: int = 1,
) -> list[MatchLog]:
    if len(dets_by_image) != len(gts_by_image):
        raise ValueError("detections and ground truth must cover the same images")
    if workers <= 1:
        return [match_detections(d, g, iou_thresh) for d, g in zip(dets_by_image, gts_by_image)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(
            pool.map(lambda dg: match_detections(dg[0], dg[1], iou_thresh), zip(dets_by_image, gts_by_image))
        )


@dataclass
class SubsetMetrics:
    mAP: float | None
    AP50: float | None
    recall: float | None
    MR2: float | None
    n_gt: int


@dataclass
class EvalReport:
    iou_thresh: float
    n_images: int
    min_score: float
    subsets: dict[str, SubsetMetrics]
    mr_floor: float = MR_FLOOR
    logs: dict[str, list[MatchLog]] = field(default_factory=dict)

    def to_dict(self, with_logs: bool = False) -> dict:
        d = {
            "iou_thresh": self.iou_thresh,
            "n_images": self.n_images,
            "min_score": self.min_score,
            "mr_floor": self.mr_floor,
            "subsets": {k: asdict(v) for k, v in self.subsets.items()},
        }
        if with_logs:
            d["logs"] = {k: [asdict(l) for l in v] for k, v in self.logs.items()}
        return d

    def to_json(self, with_logs: bool = False) -> str:
        return json.dumps(self.to_dict(with_logs), indent=2, sort_keys=True) + "\n"


def _metrics_for(
    dets_by_image: Sequence[Sequence[ScoredBox]],
    gts_by_image: Sequence[Sequence[GroundTruthInstance]],
    iou_thresh: float,
    workers: int,
) -> tuple[SubsetMetrics, list[MatchLog]]:
    n_gt = sum(1 for gts in gts_by_image for g in gts if not g.ignore)
    main = match_all(dets_by_image, gts_by_image, iou_thresh, workers)
    if n_gt == 0:
        return SubsetMetrics(None, None, None, None, 0), main
    aps = {}
    for t in COCO_IOUS:
        logs = main if t == iou_thresh else match_all(dets_by_image, gts_by_image, t, workers)
        aps[t] = average_precision(logs)
    metrics = SubsetMetrics(
        mAP=sum(aps.values()) / len(aps),
        AP50=aps[0.5],
        recall=final_recall(main),
        MR2=log_average_miss_rate(fppi_curve(main, len(gts_by_image))),
        n_gt=n_gt,
    )
    return metrics, main


def filter_by_score(dets_by_image: Sequence[Sequence[ScoredBox]], min_score: float):
    return [[d for d in dets if d.score >= min_score] for dets in dets_by_image]


def evaluate(
    dets_by_image: Sequence[Sequence[ScoredBox]],
    gts_by_image: Sequence[Sequence[GroundTruthInstance]],
    subsets: Sequence[str] = ("all",),
    iou_thresh: float = 0.5,
    min_score: float = 0.0,
    workers: int = 1,
) -> EvalReport:
    """Compute mAP, AP50, recall and MR-2 for every requested subset.

    ``mAP`` averages AP over IoU 0.50:0.05:0.95; recall and MR-2 use
    ``iou_thresh``. Metrics are ``None`` for a subset without ground truth.
    """
    dets_by_image = filter_by_score(dets_by_image, min_score)
    results: dict[str, SubsetMetrics] = {}
    logs: dict[str, list[MatchLog]] = {}
    for name in subsets:
        sf = get_subset(name)
        gts = [apply_subset(g, sf) for g in gts_by_image]
        results[name.lower()], logs[name.lower()] = _metrics_for(dets_by_image, gts, iou_thresh, workers)
    return EvalReport(iou_thresh, len(gts_by_image), min_score, results, logs=logs)


@dataclass(frozen=True)
class SweepRow:
    iou: float
    MR2: float
    AP: float
    tp: int


def sweep_iou(
    dets_by_image: Sequence[Sequence[ScoredBox]],
    gts_by_image: Sequence[Sequence[GroundTruthInstance]],
    iou_grid: Sequence[float],
    workers: int = 1,
) -> list[SweepRow]:
    """Recompute MR-2 and AP at each matching threshold of ``iou_grid``."""
    grid = list(iou_grid)
    if not grid or any(not 0.0 < t < 1.0 for t in grid):
        raise ValueError("IoU grid values must lie in (0, 1)")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("IoU grid must be strictly increasing")
    rows = []
    for t in grid:
        logs = match_all(dets_by_image, gts_by_image, t, workers)
        rows.append(
            SweepRow(
                iou=t,
                MR2=log_average_miss_rate(fppi_curve(logs, len(gts_by_image))),
                AP=average_precision(logs),
                tp=sum(log.tp for log in logs),
            )
        )
    return rows


CSV_FIELDS = ("kind", "subset", "iou", "mAP", "AP", "AP50", "recall", "MR2", "n_gt", "tp")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(
    report: EvalReport | None = None,
    sweep: Sequence[SweepRow] = (),
    sweep_subset: str = "",
) -> str:
    """Flat CSV: one row per subset of ``report`` and one per sweep point."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    if report is not None:
        for name, m in report.subsets.items():
            row = {"kind": "subset", "subset": name, "iou": report.iou_thresh, "mAP": m.mAP,
                   "AP50": m.AP50, "recall": m.recall, "MR2": m.MR2, "n_gt": m.n_gt}
            w.writerow({k: _fmt(row.get(k)) for k in CSV_FIELDS})
    for r in sweep:
        row = {"kind": "sweep", "subset": sweep_subset, "iou": r.iou, "AP": r.AP, "MR2": r.MR2, "tp": r.tp}
        w.writerow({k: _fmt(row.get(k)) for k in CSV_FIELDS})
    return buf.getvalue()
