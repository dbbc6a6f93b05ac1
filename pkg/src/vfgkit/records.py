"""ODGT annotation and detection files.

Both are line-delimited JSON. Annotations follow the CrowdHuman layout::

    {"ID": "...", "gtboxes": [{"tag": "person", "fbox": [x, y, w, h],
                               "vbox": [...], "hbox": [...],
                               "extra": {"ignore": 0}}]}

and detections use ``{"ID": "...", "dtboxes": [{"tag", "score", "fbox", "vbox"}]}``.
Keys this module does not interpret are carried through unchanged so that
``dump(load(path))`` reproduces the input.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .crowdsim import SyntheticScene
from .evaluation import GroundTruthInstance
from .geometry import BBox, InvalidBox
from .nms import PairedDetection, ScoredBox

log = logging.getLogger(__name__)

PERSON = "person"
IGNORE_TAGS = frozenset({"mask"})


class ParseError(ValueError):
    def __init__(self, line: int, reason: str, path: str | None = None):
        self.line = line
        self.reason = reason
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {reason}")


class DuplicateImageId(ValueError):
    pass


@dataclass
class AnnotatedInstance:
    tag: str
    fbox: BBox
    vbox: BBox | None = None
    hbox: BBox | None = None
    extra: dict[str, Any] = field(default_factory=dict)
    other: dict[str, Any] = field(default_factory=dict)

    @property
    def ignore(self) -> bool:
        return bool(self.extra.get("ignore", 0)) or self.tag in IGNORE_TAGS


@dataclass
class AnnotationRecord:
    image_id: str
    instances: list[AnnotatedInstance]
    other: dict[str, Any] = field(default_factory=dict)


@dataclass
class DetectedBox:
    tag: str
    score: float
    fbox: BBox
    vbox: BBox | None = None
    other: dict[str, Any] = field(default_factory=dict)


@dataclass
class DetectionRecord:
    image_id: str
    detections: list[DetectedBox]
    other: dict[str, Any] = field(default_factory=dict)


def _box(value: Any, name: str, lineno: int) -> BBox:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        n = len(value) if isinstance(value, (list, tuple)) else type(value).__name__
        raise ParseError(lineno, f"field {name!r} must be a 4-element [x, y, w, h] box, got {n}")
    try:
        return BBox.from_list([float(v) for v in value])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidBox):
            raise ParseError(lineno, f"field {name!r}: {exc}") from None
        raise ParseError(lineno, f"field {name!r} has non-numeric entries") from None


def _num(v: float) -> float | int:
    return int(v) if float(v).is_integer() else v


def _box_out(b: BBox) -> list:
    return [_num(v) for v in b.to_list()]


def _read_lines(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}", str(path)) from None
            if not isinstance(obj, dict):
                raise ParseError(lineno, "record must be a JSON object", str(path))
            yield lineno, obj


def parse_annotation(obj: dict, lineno: int = 0) -> AnnotationRecord:
    obj = dict(obj)
    if "ID" not in obj:
        raise ParseError(lineno, "missing field 'ID'")
    image_id = str(obj.pop("ID"))
    raw = obj.pop("gtboxes", [])
    if not isinstance(raw, list):
        raise ParseError(lineno, "field 'gtboxes' must be a list")
    instances = []
    for k, item in enumerate(raw):
        item = dict(item)
        if "fbox" not in item:
            raise ParseError(lineno, f"gtboxes[{k}] missing field 'fbox'")
        tag = str(item.pop("tag", PERSON))
        fbox = _box(item.pop("fbox"), f"gtboxes[{k}].fbox", lineno)
        vbox = _box(item.pop("vbox"), f"gtboxes[{k}].vbox", lineno) if "vbox" in item else None
        hbox = _box(item.pop("hbox"), f"gtboxes[{k}].hbox", lineno) if "hbox" in item else None
        extra = item.pop("extra", {})
        if not isinstance(extra, dict):
            raise ParseError(lineno, f"gtboxes[{k}].extra must be an object")
        instances.append(AnnotatedInstance(tag, fbox, vbox, hbox, extra, item))
    return AnnotationRecord(image_id, instances, obj)


def annotation_to_dict(rec: AnnotationRecord) -> dict:
    boxes = []
    for ins in rec.instances:
        d: dict[str, Any] = {"tag": ins.tag, "fbox": _box_out(ins.fbox)}
        if ins.vbox is not None:
            d["vbox"] = _box_out(ins.vbox)
        if ins.hbox is not None:
            d["hbox"] = _box_out(ins.hbox)
        if ins.extra:
            d["extra"] = ins.extra
        d.update(ins.other)
        boxes.append(d)
    return {"ID": rec.image_id, "gtboxes": boxes, **rec.other}


def parse_detection(obj: dict, lineno: int = 0) -> DetectionRecord:
    obj = dict(obj)
    if "ID" not in obj:
        raise ParseError(lineno, "missing field 'ID'")
    image_id = str(obj.pop("ID"))
    raw = obj.pop("dtboxes", [])
    if not isinstance(raw, list):
        raise ParseError(lineno, "field 'dtboxes' must be a list")
    dets = []
    for k, item in enumerate(raw):
        item = dict(item)
        # CrowdHuman result files name the full box "box"
        key = "fbox" if "fbox" in item else "box"
        if key not in item:
            raise ParseError(lineno, f"dtboxes[{k}] missing field 'fbox'")
        fbox = _box(item.pop(key), f"dtboxes[{k}].fbox", lineno)
        vbox = _box(item.pop("vbox"), f"dtboxes[{k}].vbox", lineno) if "vbox" in item else None
        try:
            score = float(item.pop("score"))
        except KeyError:
            raise ParseError(lineno, f"dtboxes[{k}] missing field 'score'") from None
        if not 0.0 <= score <= 1.0:
            raise ParseError(lineno, f"dtboxes[{k}].score {score} outside [0, 1]")
        tag = str(item.pop("tag", PERSON))
        dets.append(DetectedBox(tag, score, fbox, vbox, item))
    return DetectionRecord(image_id, dets, obj)


def detection_to_dict(rec: DetectionRecord) -> dict:
    boxes = []
    for d in rec.detections:
        out: dict[str, Any] = {"tag": d.tag, "score": d.score, "fbox": _box_out(d.fbox)}
        if d.vbox is not None:
            out["vbox"] = _box_out(d.vbox)
        out.update(d.other)
        boxes.append(out)
    return {"ID": rec.image_id, "dtboxes": boxes, **rec.other}


def _load(path: str | Path, parse) -> list:
    records, seen = [], set()
    for lineno, obj in _read_lines(path):
        try:
            rec = parse(obj, lineno)
        except ParseError as exc:
            raise ParseError(exc.line, exc.reason, str(path)) from None
        if rec.image_id in seen:
            raise DuplicateImageId(f"{path}:{lineno}: duplicate image id {rec.image_id!r}")
        seen.add(rec.image_id)
        records.append(rec)
    log.debug("loaded %d records from %s", len(records), path)
    return records


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    return _load(path, parse_annotation)


def load_detections(path: str | Path) -> list[DetectionRecord]:
    return _load(path, parse_detection)


def _dump(objs: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, separators=(", ", ": ")) + "\n")


def dump_annotations(records: Iterable[AnnotationRecord], path: str | Path) -> None:
    _dump((annotation_to_dict(r) for r in records), path)


def dump_detections(records: Iterable[DetectionRecord], path: str | Path) -> None:
    _dump((detection_to_dict(r) for r in records), path)


def gt_instances(rec: AnnotationRecord, tag: str = PERSON) -> list[GroundTruthInstance]:
    """Instances of ``tag``; every other tag is kept as an ignore region."""
    return [
        GroundTruthInstance(ins.fbox, ins.vbox, ins.hbox, ins.ignore or ins.tag != tag)
        for ins in rec.instances
    ]


def scored_boxes(rec: DetectionRecord, tag: str = PERSON, box: str = "full") -> list[ScoredBox]:
    out = []
    for d in rec.detections:
        if d.tag != tag:
            continue
        if box == "visible":
            if d.vbox is None:
                raise ValueError(f"image {rec.image_id}: detection without 'vbox'")
            out.append(ScoredBox(d.vbox, d.score))
        else:
            out.append(ScoredBox(d.fbox, d.score))
    return out


def paired_detections(rec: DetectionRecord, tag: str = PERSON) -> list[PairedDetection]:
    out = []
    for d in rec.detections:
        if d.tag != tag:
            continue
        if d.vbox is None:
            raise ValueError(f"image {rec.image_id}: VFG mode needs 'vbox' on every detection")
        out.append(PairedDetection(d.vbox, d.fbox, d.score))
    return out


def align(
    gts: Sequence[AnnotationRecord], dts: Sequence[DetectionRecord]
) -> tuple[list[str], list[AnnotationRecord], list[DetectionRecord]]:
    """Order detections like the annotations; images without detections get none."""
    by_id = {d.image_id: d for d in dts}
    unknown = set(by_id) - {g.image_id for g in gts}
    if unknown:
        raise ValueError(f"detections for unknown image ids: {sorted(unknown)[:5]}")
    ids = [g.image_id for g in gts]
    return ids, list(gts), [by_id.get(i, DetectionRecord(i, [])) for i in ids]


def scene_records(scene: SyntheticScene, image_id: str) -> tuple[AnnotationRecord, DetectionRecord]:
    ann = AnnotationRecord(
        image_id,
        [
            AnnotatedInstance(PERSON, ins.full, ins.visible, ins.head,
                              {"ignore": 0, "box_id": k, "depth": ins.depth})
            for k, ins in enumerate(scene.instances)
        ],
    )
    det = DetectionRecord(
        image_id, [DetectedBox(PERSON, d.score, d.full, d.visible) for d in scene.detections]
    )
    return ann, det
