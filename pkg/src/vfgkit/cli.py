"""Command-line entry points: eval, nms, associate, simulate, sweep.

Log verbosity is read from ``VFGKIT_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .association import DEFAULT_CONTAIN_TOL, associate, association_counts
from .crowdsim import (
    NoiseModel,
    PlacementFailure,
    SceneConfig,
    PreservationSummary,
    detection_seed,
    generate_scene,
    perturb_detections,
    preservation_counts,
    scene_seeds,
)
from .evaluation import apply_subset, evaluate, filter_by_score, get_subset, report_csv, sweep_iou
from .nms import PairedDetection, ScoredBox, greedy_nms_indices, soft_nms_linear_scores, vfg_nms_indices
from .records import (
    PERSON,
    DetectionRecord,
    align,
    dump_annotations,
    dump_detections,
    gt_instances,
    load_annotations,
    load_detections,
    scene_records,
    scored_boxes,
)

log = logging.getLogger("vfgkit")


class CliError(Exception):
    pass


def _write(path: str | Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_pair(gt_path: str, dt_path: str, box: str, min_score: float):
    ids, gts, dts = align(load_annotations(gt_path), load_detections(dt_path))
    gts_by_image = [gt_instances(r) for r in gts]
    if box == "visible":
        # evaluate visible detections against visible annotations
        gts_by_image = [
            [replace(g, full=g.visible) if g.visible is not None else g for g in img]
            for img in gts_by_image
        ]
    dets = filter_by_score([scored_boxes(r, box=box) for r in dts], min_score)
    return ids, gts_by_image, dets


def cmd_eval(args) -> int:
    _, gts, dets = _load_pair(args.gt, args.dt, args.box, args.min_score)
    subsets = [s.strip() for s in args.subsets.split(",") if s.strip()]
    report = evaluate(dets, gts, subsets, iou_thresh=args.iou, min_score=args.min_score, workers=args.workers)
    text = report.to_json(with_logs=args.with_logs)
    if args.out_json:
        _write(args.out_json, text)
    if args.out_csv:
        _write(args.out_csv, report_csv(report))
    if not args.out_json:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    _, gts, dets = _load_pair(args.gt, args.dt, args.box, args.min_score)
    sf = get_subset(args.subset)
    gts = [apply_subset(g, sf) for g in gts]
    grid = _parse_grid(args.grid)
    rows = sweep_iou(dets, gts, grid, workers=args.workers)
    text = report_csv(None, rows, sweep_subset=args.subset.lower())
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _parse_grid(text: str) -> list[float]:
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        n = int(round((hi - lo) / step)) + 1
        return [round(lo + k * step, 10) for k in range(n)]
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_nms(args) -> int:
    records = load_detections(args.dt)
    out = []
    for rec in records:
        dets = [d for d in rec.detections if d.score >= args.min_score]
        tags = sorted({d.tag for d in dets})
        class_of = {t: k for k, t in enumerate(tags)}
        if args.mode == "vfg":
            if any(d.vbox is None for d in dets):
                raise CliError(f"image {rec.image_id}: --mode vfg needs 'vbox' on every detection")
            pairs = [PairedDetection(d.vbox, d.fbox, d.score, class_of[d.tag]) for d in dets]
            kept = [dets[i] for i in vfg_nms_indices(pairs, args.thresh)]
        else:
            full = [ScoredBox(d.fbox, d.score, class_of[d.tag]) for d in dets]
            if args.mode == "greedy":
                kept = [dets[i] for i in greedy_nms_indices(full, args.thresh)]
            else:
                survivors = soft_nms_linear_scores(full, args.thresh, args.score_floor)
                kept = [replace(dets[i], score=s) for i, s in survivors]
        out.append(DetectionRecord(rec.image_id, kept, rec.other))
    dump_detections(out, args.out)
    log.info("wrote %d images to %s", len(out), args.out)
    return 0


def _pair_dict(a, b) -> dict:
    return {"body": a.to_list(), "part": b.to_list()}


def cmd_associate(args) -> int:
    if args.gt_as_pred == bool(args.dt):
        raise CliError("give exactly one of --dt or --gt-as-pred")
    metric = args.metric or ("distance" if args.task == "body-head" else "iou")
    rng = np.random.default_rng(args.seed)
    gts = load_annotations(args.gt)
    dts = {}
    if args.dt:
        _, gts, dt_list = align(gts, load_detections(args.dt))
        dts = {d.image_id: d for d in dt_list}
    total = None
    lines = []
    for rec in gts:
        persons = [i for i in rec.instances if i.tag == PERSON and not i.ignore]
        if args.task == "body-head":
            gt_pairs = [(i.fbox, i.hbox) for i in persons if i.hbox is not None]
        else:
            gt_pairs = [(i.vbox, i.fbox) for i in persons if i.vbox is not None]
        if args.gt_as_pred:
            bodies = [p[0] for p in gt_pairs]
            parts = [p[1] for p in gt_pairs]
        else:
            dets = [d for d in dts[rec.image_id].detections if d.score >= args.min_score]
            if args.task == "body-head":
                bodies = [d.fbox for d in dets if d.tag == PERSON]
                parts = [d.fbox for d in dets if d.tag == "head"]
            else:
                bodies = [d.vbox for d in dets if d.tag == PERSON and d.vbox is not None]
                parts = [d.fbox for d in dets if d.tag == PERSON and d.vbox is not None]
        # break any pairing implied by list order
        parts = [parts[k] for k in rng.permutation(len(parts))]
        if metric == "distance":
            params = {} if args.gate is None else {"gate": args.gate}
        else:
            params = {"min_iou": args.min_iou}
            if args.task == "visible-full":
                params |= {"contain": True, "contain_tol": args.contain_tol}
        res = associate(bodies, parts, metric, **params)
        c = association_counts(gt_pairs, res.matched, args.thresh_b, args.thresh_p)
        total = c if total is None else total + c
        lines.append(json.dumps({"ID": rec.image_id, "pairs": [_pair_dict(a, b) for a, b in res.matched]}))
    if total is None:
        raise CliError("annotation file holds no images")
    if args.out:
        _write(args.out, "".join(l + "\n" for l in lines))
    summary = {
        "task": args.task,
        "metric": metric,
        "recall": total.recall,
        "precision": total.precision,
        "matched": total.matched,
        "n_gt": total.n_gt,
        "n_pred": total.n_pred,
    }
    text = _dump_json(summary)
    if args.summary:
        _write(args.summary, text)
    sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noise = NoiseModel(args.center_sigma, args.size_sigma, args.score_sigma, args.fp_rate, args.fn_rate)
    anns, dts, counts = [], [], []
    for k, s in enumerate(scene_seeds(args.seed, args.n_scenes)):
        cfg = SceneConfig(seed=s, n_instances=args.n_instances, crowd_level=args.crowd_level,
                          width=args.width, height=args.height)
        scene = generate_scene(cfg)
        scene.detections = perturb_detections(scene, noise, detection_seed(cfg.seed, args.seed))
        counts.append(preservation_counts(scene.detections, len(scene.instances), args.thresh))
        ann, det = scene_records(scene, f"sim_{k:05d}")
        anns.append(ann)
        dts.append(det)
    summary = PreservationSummary.from_counts(counts)
    dump_annotations(anns, out_dir / "gt.odgt")
    dump_detections(dts, out_dir / "dt.odgt")
    report = summary.to_dict() | {"thresh": args.thresh, "crowd_level": args.crowd_level, "seed": args.seed}
    _write(out_dir / "preservation.json", _dump_json(report))
    sys.stdout.write(_dump_json(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vfgkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def eval_inputs(sp):
        sp.add_argument("--gt", required=True, help="ODGT annotation file")
        sp.add_argument("--dt", required=True, help="detection file")
        sp.add_argument("--min-score", type=float, default=0.05)
        sp.add_argument("--box", choices=("full", "visible"), default="full")
        sp.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("eval", help="mAP / AP50 / recall / MR-2 per subset")
    eval_inputs(e)
    e.add_argument("--iou", type=float, default=0.5, help="matching IoU for recall and MR-2")
    e.add_argument("--subsets", default="all", help="comma list, e.g. reasonable,heavy,all")
    e.add_argument("--out-json")
    e.add_argument("--out-csv")
    e.add_argument("--with-logs", action="store_true", help="include per-image match logs")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="MR-2 and AP along an IoU grid")
    eval_inputs(s)
    s.add_argument("--grid", default="0.5:0.95:0.05", help="lo:hi:step or comma list")
    s.add_argument("--subset", default="all")
    s.add_argument("--out", help="CSV path (stdout when omitted)")
    s.set_defaults(func=cmd_sweep)

    n = sub.add_parser("nms", help="filter a detection file")
    n.add_argument("--dt", required=True)
    n.add_argument("--out", required=True)
    n.add_argument("--mode", choices=("greedy", "soft", "vfg"), default="vfg")
    n.add_argument("--thresh", type=float, default=0.5)
    n.add_argument("--score-floor", type=float, default=0.001)
    n.add_argument("--min-score", type=float, default=0.0)
    n.set_defaults(func=cmd_nms)

    a = sub.add_parser("associate", help="Hungarian parts association")
    a.add_argument("--gt", required=True)
    a.add_argument("--dt")
    a.add_argument("--gt-as-pred", action="store_true", help="associate un-paired ground-truth boxes")
    a.add_argument("--task", choices=("body-head", "visible-full"), default="body-head")
    a.add_argument("--metric", choices=("distance", "iou"))
    a.add_argument("--gate", type=float, help="distance gate in pixels (default 0.5 * body height)")
    a.add_argument("--min-iou", type=float, default=0.0)
    a.add_argument("--contain-tol", type=float, default=DEFAULT_CONTAIN_TOL,
                   help="pixels a visible box may overshoot its full box (visible-full task)")
    a.add_argument("--thresh-b", type=float, default=0.5)
    a.add_argument("--thresh-p", type=float, default=0.5)
    a.add_argument("--min-score", type=float, default=0.05)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", help="matched pairs, one JSON line per image")
    a.add_argument("--summary", help="recall/precision JSON path")
    a.set_defaults(func=cmd_associate)

    m = sub.add_parser("simulate", help="synthetic crowd scenes and the NMS preservation summary")
    m.add_argument("--out-dir", required=True)
    m.add_argument("--n-scenes", type=int, default=100)
    m.add_argument("--n-instances", type=int, default=8)
    m.add_argument("--crowd-level", type=float, default=0.5)
    m.add_argument("--width", type=float, default=960.0)
    m.add_argument("--height", type=float, default=540.0)
    m.add_argument("--center-sigma", type=float, default=0.05)
    m.add_argument("--size-sigma", type=float, default=0.05)
    m.add_argument("--score-sigma", type=float, default=0.02)
    m.add_argument("--fp-rate", type=float, default=0.1)
    m.add_argument("--fn-rate", type=float, default=0.0)
    m.add_argument("--thresh", type=float, default=0.5)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("VFGKIT_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, PlacementFailure) as exc:
        print(f"vfgkit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
