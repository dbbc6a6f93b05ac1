"""Synthetic crowd scenes with paired visible/full ground truth.

Randomness comes from numpy's PCG64 generator (``numpy.random.default_rng``),
so a scene is a pure function of its config and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import BBox, area, intersection, iou
from .nms import PairedDetection, greedy_nms, vfg_nms


DEPTH_ORDERS_PER_LAYOUT = 20


class PlacementFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_instances: int = 8
    width: float = 960.0
    height: float = 540.0
    # target IoU between each placed person and the neighbour it is placed against
    crowd_level: float = 0.5
    crowd_spread: float = 0.1
    aspect_range: tuple[float, float] = (2.0, 3.0)
    height_range: tuple[float, float] = (80.0, 240.0)
    head_height_frac: float = 0.16
    head_width_frac: float = 0.45
    head_anchor_frac: float = 0.1
    min_visible_frac: float = 0.1
    max_attempts: int = 1000

    def __post_init__(self) -> None:
        if self.n_instances < 1:
            raise ValueError("n_instances must be at least 1")
        if not 0.0 <= self.crowd_level < 1.0:
            raise ValueError("crowd_level must lie in [0, 1)")
        lo, hi = self.aspect_range
        if not 0 < lo <= hi:
            raise ValueError("bad aspect_range")
        lo, hi = self.height_range
        if not 0 < lo <= hi:
            raise ValueError("bad height_range")


@dataclass(frozen=True)
class Instance:
    full: BBox
    visible: BBox
    head: BBox
    depth: int


@dataclass
class SyntheticScene:
    config: SceneConfig
    instances: list[Instance]
    detections: list[PairedDetection] = field(default_factory=list)

    @property
    def full_boxes(self) -> list[BBox]:
        return [ins.full for ins in self.instances]

    @property
    def visible_boxes(self) -> list[BBox]:
        return [ins.visible for ins in self.instances]

    @property
    def head_boxes(self) -> list[BBox]:
        return [ins.head for ins in self.instances]


def visible_region(full: BBox, occluders: Iterable[BBox]) -> BBox:
    """Largest axis-aligned strip of ``full`` left uncovered by its dominant occluder.

    The dominant occluder is the one with the largest intersection. Only that
    box is subtracted; the four candidate strips are left, right, top and
    bottom of it, and the biggest wins (first in that order on ties).
    """
    best, best_inter = None, 0.0
    for occ in occluders:
        inter = intersection(full, occ)
        if inter > best_inter:
            best, best_inter = occ, inter
    if best is None:
        return full
    ox1, oy1 = max(best.x, full.x), max(best.y, full.y)
    ox2, oy2 = min(best.x2, full.x2), min(best.y2, full.y2)
    strips = [
        BBox(full.x, full.y, max(ox1 - full.x, 0.0), full.h),
        BBox(ox2, full.y, max(full.x2 - ox2, 0.0), full.h),
        BBox(full.x, full.y, full.w, max(oy1 - full.y, 0.0)),
        BBox(full.x, oy2, full.w, max(full.y2 - oy2, 0.0)),
    ]
    strip = max(strips, key=area)
    if area(strip) <= 0:
        return BBox(full.x, full.y, 0.0, 0.0)
    return strip


def head_box(full: BBox, cfg: SceneConfig) -> BBox:
    hw, hh = cfg.head_width_frac * full.w, cfg.head_height_frac * full.h
    cx, cy = full.cx, full.y + cfg.head_anchor_frac * full.h
    return BBox(cx - hw / 2, cy - hh / 2, hw, hh)


def build_instances(full_boxes: Sequence[BBox], depths: Sequence[int], cfg: SceneConfig) -> list[Instance]:
    """Derive visible and head boxes from full boxes and depth ranks (0 = front)."""
    if sorted(depths) != list(range(len(full_boxes))):
        raise ValueError("depths must be a permutation of 0..n-1")
    out = []
    for f, d in zip(full_boxes, depths):
        occluders = [g for g, e in zip(full_boxes, depths) if e < d]
        out.append(Instance(f, visible_region(f, occluders), head_box(f, cfg), d))
    return out


def scene_from_full_boxes(
    full_boxes: Sequence[BBox], depths: Sequence[int], cfg: SceneConfig | None = None
) -> SyntheticScene:
    cfg = cfg or SceneConfig(n_instances=max(len(full_boxes), 1))
    return SyntheticScene(cfg, build_instances(full_boxes, depths, cfg))


def _offset_for_iou(anchor: BBox, w: float, h: float, dy: float, target: float, sign: float) -> BBox | None:
    # IoU is non-increasing in the horizontal offset once the boxes stop nesting
    def place(d: float) -> BBox:
        x = anchor.cx + sign * d - w / 2
        return BBox(x, anchor.cy + dy - h / 2, w, h)

    hi = (anchor.w + w) / 2
    if iou(anchor, place(0.0)) < target:
        return None
    lo = 0.0
    for _ in range(40):
        mid = (lo + hi) / 2
        if iou(anchor, place(mid)) >= target:
            lo = mid
        else:
            hi = mid
    return place(lo)


def _sample_size(rng: np.random.Generator, cfg: SceneConfig, ref_h: float | None) -> tuple[float, float]:
    lo, hi = cfg.height_range
    if ref_h is None:
        h = rng.uniform(lo, hi)
    else:
        h = float(np.clip(ref_h * rng.uniform(0.9, 1.1), lo, hi))
    w = h / rng.uniform(*cfg.aspect_range)
    return w, h


def _max_target_iou(cfg: SceneConfig) -> float:
    # two equal boxes at IoU t leave (1 - t) / (1 + t) of the rear one uncovered
    v = cfg.min_visible_frac
    return min(0.95, (1.0 - v) / (1.0 + v) - 0.03)


def _mutually_visible(a: BBox, b: BBox, frac: float) -> bool:
    # only the dominant occluder is subtracted, so checking every pair both
    # ways makes every depth order acceptable
    return (
        area(visible_region(a, [b])) >= frac * area(a)
        and area(visible_region(b, [a])) >= frac * area(b)
    )


def _place_full_boxes(rng: np.random.Generator, cfg: SceneConfig) -> list[BBox]:
    boxes: list[BBox] = []
    cap = _max_target_iou(cfg)
    w, h = _sample_size(rng, cfg, None)
    if w > cfg.width or h > cfg.height:
        raise PlacementFailure("person box larger than the image")
    boxes.append(BBox(rng.uniform(0, cfg.width - w), rng.uniform(0, cfg.height - h), w, h))
    while len(boxes) < cfg.n_instances:
        for _ in range(cfg.max_attempts):
            anchor = boxes[int(rng.integers(len(boxes)))]
            target = float(np.clip(rng.normal(cfg.crowd_level, cfg.crowd_spread), 0.0, cap))
            w, h = _sample_size(rng, cfg, anchor.h)
            dy = rng.normal(0.0, 0.05) * anchor.h
            sign = 1.0 if rng.random() < 0.5 else -1.0
            cand = _offset_for_iou(anchor, w, h, dy, target, sign)
            if cand is None:
                continue
            if cand.x < 0 or cand.y < 0 or cand.x2 > cfg.width or cand.y2 > cfg.height:
                continue
            if any(b is not anchor and iou(b, cand) > min(target + 0.05, cap) for b in boxes):
                continue
            if not all(_mutually_visible(b, cand, cfg.min_visible_frac) for b in boxes):
                continue
            boxes.append(cand)
            break
        else:
            raise PlacementFailure(
                f"could not place instance {len(boxes)} at crowd level "
                f"{cfg.crowd_level} in {cfg.max_attempts} attempts"
            )
    return boxes


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    """Place ``cfg.n_instances`` people, assign depths, derive visible and head boxes.

    Layouts leaving any person with less than ``min_visible_frac`` of its
    full box visible are redrawn; ``PlacementFailure`` after ``max_attempts``.
    """
    rng = np.random.default_rng(cfg.seed)
    attempts = 0
    while attempts < cfg.max_attempts:
        fulls = _place_full_boxes(rng, cfg)
        for _ in range(DEPTH_ORDERS_PER_LAYOUT):
            attempts += 1
            depths = [int(d) for d in rng.permutation(len(fulls))]
            instances = build_instances(fulls, depths, cfg)
            if all(area(i.visible) >= cfg.min_visible_frac * area(i.full) for i in instances):
                return SyntheticScene(cfg, instances)
    raise PlacementFailure(f"no layout with visible fraction >= {cfg.min_visible_frac}")


@dataclass(frozen=True)
class NoiseModel:
    """Detection noise, all sigmas relative to box size.

    ``size_sigma`` perturbs log-width and log-height. Scores fall linearly
    with the normalised full-box error, reaching the 0.05 clamp at
    ``score_gate``.
    """

    center_sigma: float = 0.0
    size_sigma: float = 0.0
    score_sigma: float = 0.0
    fp_rate: float = 0.0
    fn_rate: float = 0.0
    score_gate: float = 0.5

    def __post_init__(self) -> None:
        if min(self.center_sigma, self.size_sigma, self.score_sigma) < 0:
            raise ValueError("noise sigmas must be non-negative")
        for r in (self.fp_rate, self.fn_rate):
            if not 0.0 <= r <= 1.0:
                raise ValueError("fp/fn rates must lie in [0, 1]")
        if not self.score_gate > 0:
            raise ValueError("score_gate must be positive")


def _jitter(rng: np.random.Generator, b: BBox, noise: NoiseModel) -> tuple[BBox, float]:
    ex, ey = rng.normal(0.0, 1.0, 2) * noise.center_sigma
    ew, eh = rng.normal(0.0, 1.0, 2) * noise.size_sigma
    w, h = b.w * math.exp(ew), b.h * math.exp(eh)
    # built from the corner so that zero noise returns the input box exactly
    x = b.x + ex * b.w + (b.w - w) / 2
    y = b.y + ey * b.h + (b.h - h) / 2
    err = math.sqrt(ex * ex + ey * ey + ew * ew + eh * eh)
    return BBox(x, y, w, h), err


def perturb_detections(scene: SyntheticScene, noise: NoiseModel, seed: int) -> list[PairedDetection]:
    """Noisy detector output for ``scene``: jittered true pairs plus spurious ones."""
    cfg = scene.config
    rng = np.random.default_rng(seed)
    out: list[PairedDetection] = []
    for ins in scene.instances:
        dropped = rng.random() < noise.fn_rate
        full, err = _jitter(rng, ins.full, noise)
        vis, _ = _jitter(rng, ins.visible, noise)
        score = 1.0 - err / noise.score_gate + rng.normal(0.0, 1.0) * noise.score_sigma
        if not dropped:
            out.append(PairedDetection(vis, full, float(np.clip(score, 0.05, 1.0))))
    n_fp = int(rng.binomial(len(scene.instances), noise.fp_rate))
    for _ in range(n_fp):
        w, h = _sample_size(rng, cfg, None)
        w, h = min(w, cfg.width), min(h, cfg.height)
        full = BBox(rng.uniform(0, cfg.width - w), rng.uniform(0, cfg.height - h), w, h)
        vw, vh = w * rng.uniform(0.3, 1.0), h * rng.uniform(0.3, 1.0)
        vis = BBox(full.x + rng.uniform(0, w - vw), full.y + rng.uniform(0, h - vh), vw, vh)
        out.append(PairedDetection(vis, full, float(rng.uniform(0.05, 0.5))))
    return out


@dataclass(frozen=True)
class PreservationCounts:
    kept_by_greedy_full: int
    kept_by_vfg: int
    gt_count: int

    def __add__(self, other: "PreservationCounts") -> "PreservationCounts":
        return PreservationCounts(
            self.kept_by_greedy_full + other.kept_by_greedy_full,
            self.kept_by_vfg + other.kept_by_vfg,
            self.gt_count + other.gt_count,
        )


@dataclass
class PreservationSummary:
    per_scene: list[PreservationCounts]
    total: PreservationCounts

    @classmethod
    def from_counts(cls, counts: Sequence[PreservationCounts]) -> "PreservationSummary":
        total = PreservationCounts(0, 0, 0)
        for c in counts:
            total = total + c
        return cls(list(counts), total)

    def to_dict(self) -> dict:
        return {
            "kept_by_greedy_full": self.total.kept_by_greedy_full,
            "kept_by_vfg": self.total.kept_by_vfg,
            "gt_count": self.total.gt_count,
            "n_scenes": len(self.per_scene),
        }


def preservation_counts(dets: Sequence[PairedDetection], gt_count: int, thresh: float = 0.5) -> PreservationCounts:
    """Compare greedy NMS on full boxes with VFG-NMS on the same detections."""
    return PreservationCounts(
        kept_by_greedy_full=len(greedy_nms([d.full_scored() for d in dets], thresh)),
        kept_by_vfg=len(vfg_nms(dets, thresh)),
        gt_count=gt_count,
    )


def detection_seed(scene_seed: int, noise_seed: int) -> int:
    return int(np.random.SeedSequence([scene_seed, noise_seed]).generate_state(1)[0])


def nms_preservation_experiment(
    configs: SceneConfig | Sequence[SceneConfig],
    noise: NoiseModel,
    thresh: float = 0.5,
    noise_seed: int = 0,
) -> PreservationSummary:
    if isinstance(configs, SceneConfig):
        configs = [configs]
    per_scene = []
    for cfg in configs:
        scene = generate_scene(cfg)
        dets = perturb_detections(scene, noise, detection_seed(cfg.seed, noise_seed))
        per_scene.append(preservation_counts(dets, len(scene.instances), thresh))
    return PreservationSummary.from_counts(per_scene)


def scene_seeds(seed: int, n: int) -> list[int]:
    """Independent per-scene seeds spawned from one master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def nearest_neighbour_iou(boxes: Sequence[BBox]) -> list[float]:
    """Highest IoU of each box with any other box in the list."""
    out = []
    for i, a in enumerate(boxes):
        out.append(max((iou(a, b) for j, b in enumerate(boxes) if j != i), default=0.0))
    return out
