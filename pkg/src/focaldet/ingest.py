"""DETRAC annotation parsing and the JSON-lines detection format.

Detections are stored one JSON object per line::

    {"frame": 12, "class": 0, "score": 0.912345, "box": [x_min, y_min, x_max, y_max]}

``class`` may also be a class name on input, and an optional ``"sequence"``
key (written first) distinguishes frames of different sequences. Numbers
are written in 6-decimal fixed point.
"""

from __future__ import annotations

import json
import logging
import math
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .structures import CLASS_NAMES, Detection, GroundTruth

log = logging.getLogger(__name__)

CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}
OTHERS = CLASS_IDS["others"]
# class id carried by ignore-region entries; they apply to every class
IGNORE_CLASS = -1


class AnnotationError(ValueError):
    """Unreadable annotation document."""


class DetectionFormatError(ValueError):
    """Malformed line in a detections file."""


@dataclass
class SequenceAnnotations:
    name: str
    frames: dict[int, list[GroundTruth]] = field(default_factory=dict)
    ignore_regions: list[tuple[float, float, float, float]] = field(default_factory=list)
    unknown_types: Counter = field(default_factory=Counter)
    rejected_frames: dict[int, str] = field(default_factory=dict)

    @property
    def warning_count(self) -> int:
        return sum(self.unknown_types.values())

    def ground_truths(self, frame_key=None) -> list[GroundTruth]:
        """All gts, in frame order; ``frame_key(name, num)`` can rewrite frame ids."""
        out = []
        for num in sorted(self.frames):
            for g in self.frames[num]:
                if frame_key is not None:
                    g = GroundTruth(frame_key(self.name, num), g.class_id, g.bbox, g.ignore)
                out.append(g)
        return out


def _box(elem: ET.Element) -> tuple[float, float, float, float]:
    try:
        left, top = float(elem.attrib["left"]), float(elem.attrib["top"])
        width, height = float(elem.attrib["width"]), float(elem.attrib["height"])
    except KeyError as exc:
        raise ValueError(f"box is missing attribute {exc.args[0]!r}") from None
    if not all(math.isfinite(v) for v in (left, top, width, height)):
        raise ValueError("box has non-finite coordinates")
    if width < 0 or height < 0:
        raise ValueError(f"negative box size ({width} x {height})")
    return (left, top, left + width, top + height)


def vehicle_class(vehicle_type: str | None) -> int | None:
    """Class id for a DETRAC ``vehicle_type``; ``None`` when it is not one of the four names."""
    if vehicle_type is None:
        return None
    return CLASS_IDS.get(vehicle_type.strip().lower())


def parse_detrac_xml(document: str | bytes) -> SequenceAnnotations:
    """Parse one DETRAC sequence annotation.

    Ignored regions are attached to every frame as ``ignore=True`` gts.
    A frame with a bad box is rejected (recorded in ``rejected_frames``)
    without affecting the others. Unknown vehicle types become ``others``.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        line, col = exc.position
        raise AnnotationError(f"malformed XML at line {line}, column {col}: {exc}") from None
    if root.tag != "sequence":
        raise AnnotationError(f"expected <sequence> root element, got <{root.tag}>")
    seq = SequenceAnnotations(root.attrib.get("name", ""))

    for region in root.iter("ignored_region"):
        for b in region.findall("box"):
            try:
                seq.ignore_regions.append(_box(b))
            except ValueError as exc:
                raise AnnotationError(f"bad ignored region: {exc}") from None

    for frame in root.findall("frame"):
        try:
            num = int(frame.attrib["num"])
        except (KeyError, ValueError):
            raise AnnotationError("frame without a valid integer 'num' attribute") from None
        if num < 1:
            raise AnnotationError(f"frame number {num} must be >= 1")
        gts, unknown = [], Counter()
        try:
            for target in frame.iter("target"):
                box_el = target.find("box")
                if box_el is None:
                    raise ValueError(f"target {target.attrib.get('id', '?')} has no box")
                attr = target.find("attribute")
                vtype = attr.attrib.get("vehicle_type") if attr is not None else None
                cls = vehicle_class(vtype)
                if cls is None:
                    unknown[vtype or "<missing>"] += 1
                    cls = OTHERS
                gts.append(GroundTruth(num, cls, _box(box_el)))
        except ValueError as exc:
            seq.rejected_frames[num] = str(exc)
            log.warning("sequence %s frame %d rejected: %s", seq.name, num, exc)
            continue
        gts.extend(GroundTruth(num, IGNORE_CLASS, r, ignore=True) for r in seq.ignore_regions)
        seq.frames[num] = gts
        seq.unknown_types.update(unknown)
    if seq.unknown_types:
        log.warning("sequence %s: %d targets with unknown vehicle_type mapped to others",
                    seq.name, seq.warning_count)
    return seq


def load_sequences(paths: Iterable[str | Path]) -> list[SequenceAnnotations]:
    return [parse_detrac_xml(Path(p).read_bytes()) for p in paths]


class DetectionList(list):
    """List of detections that also remembers how many scores were clamped."""

    clamped: int = 0


def _class_id(value) -> int:
    if isinstance(value, bool):
        raise ValueError("class must be an integer id or a class name")
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().lower() in CLASS_IDS:
        return CLASS_IDS[value.strip().lower()]
    raise ValueError(f"unknown class {value!r}")


def read_detections(document: str) -> DetectionList:
    out = DetectionList()
    for lineno, line in enumerate(document.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError("expected a JSON object")
            box = rec["box"]
            if not isinstance(box, list) or len(box) != 4:
                raise ValueError("box must be a list of 4 numbers")
            box = tuple(float(v) for v in box)
            if box[2] < box[0] or box[3] < box[1]:
                raise ValueError(f"box {list(box)} has max < min")
            score = float(rec["score"])
            if not math.isfinite(score):
                raise ValueError("score is not finite")
            if not 0.0 <= score <= 1.0:
                out.clamped += 1
                score = min(1.0, max(0.0, score))
            frame = int(rec["frame"])
            if "sequence" in rec:
                frame = (str(rec["sequence"]), frame)
            out.append(Detection(frame, _class_id(rec["class"]), box, score))
        except (ValueError, KeyError, TypeError) as exc:
            detail = f"missing key {exc.args[0]!r}" if isinstance(exc, KeyError) else str(exc)
            raise DetectionFormatError(f"line {lineno}: {detail}") from None
    if out.clamped:
        log.warning("%d detection scores clamped to [0, 1]", out.clamped)
    return out


def write_detections(dets: Sequence[Detection]) -> str:
    lines = []
    for d in dets:
        frame = d.frame_id
        prefix = ""
        if isinstance(frame, tuple):
            prefix = f'"sequence": {json.dumps(frame[0])}, '
            frame = frame[1]
        box = ", ".join(f"{v:.6f}" for v in d.bbox)
        lines.append(f'{{{prefix}"frame": {int(frame)}, "class": {int(d.class_id)}, '
                     f'"score": {d.score:.6f}, "box": [{box}]}}')
    return "".join(line + "\n" for line in lines)
