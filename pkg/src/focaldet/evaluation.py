"""Per-class average precision and mAP.

Matching is greedy per frame in descending score order (ties keep input
order). A detection takes the unmatched, non-ignored gt of its class with
the highest IoU at or above the threshold (ties go to the lower gt index).
Otherwise it is dropped if it overlaps an ignore-flagged gt of any class by
at least the threshold, and counted as a false positive if not. AP is the
all-point area under the precision envelope.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .boxes import iou_matrix
from .structures import CLASS_NAMES, Detection, GroundTruth

DEFAULT_IOU = 0.7


@dataclass
class ClassCurve:
    ap: float
    recall: np.ndarray
    precision: np.ndarray
    num_gt: int

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


@dataclass
class EvalResult:
    per_class: dict[int, ClassCurve]
    iou_threshold: float
    class_names: dict[int, str] = field(default_factory=dict)

    @property
    def ap(self) -> dict[int, float]:
        return {c: curve.ap for c, curve in self.per_class.items()}

    @property
    def map(self) -> float:
        if not self.per_class:
            return 0.0
        return float(np.mean([c.ap for c in self.per_class.values()]))

    def name(self, class_id: int) -> str:
        return self.class_names.get(class_id, str(class_id))

    def to_dict(self) -> dict:
        return {
            "iou_threshold": self.iou_threshold,
            "mAP": self.map,
            "classes": {
                self.name(c): {"class_id": c, "ap": curve.ap, "num_gt": curve.num_gt,
                               "pr": [[r, p] for r, p in curve.points]}
                for c, curve in self.per_class.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def to_table(self, method: str = "detector", columns: Sequence[str] = CLASS_NAMES) -> str:
        """Text table with one row: method, mAP and one AP column per class name (percent)."""
        by_name = {self.name(c): curve.ap for c, curve in self.per_class.items()}
        header = ["method", "mAP", *columns]
        row = [method, f"{100 * self.map:.2f}"]
        row += [f"{100 * by_name[c]:.2f}" if c in by_name else "-" for c in columns]
        widths = [max(len(h), len(v)) for h, v in zip(header, row)]
        fmt = lambda cells: " | ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        return "\n".join([fmt(header), "-+-".join("-" * w for w in widths), fmt(row)]) + "\n"


def _by_frame(items):
    out = defaultdict(list)
    for i, item in enumerate(items):
        out[item.frame_id].append(i)
    return out


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth], class_id: int,
                     iou_thr: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Greedy matching for one class.

    Returns ``(scores, is_tp, num_gt)`` for the detections that count, in
    ranked order; detections absorbed by ignore regions are left out.
    """
    cls_dets = [d for d in dets if d.class_id == class_id]
    order = sorted(range(len(cls_dets)), key=lambda i: -cls_dets[i].score)
    cls_gts = [g for g in gts if g.class_id == class_id and not g.ignore]
    ignore_gts = [g for g in gts if g.ignore]
    gt_frames = _by_frame(cls_gts)
    ign_frames = _by_frame(ignore_gts)
    used = {f: np.zeros(len(ix), dtype=bool) for f, ix in gt_frames.items()}

    scores, tps = [], []
    for i in order:
        det = cls_dets[i]
        ix = gt_frames.get(det.frame_id, [])
        if ix:
            ov = iou_matrix(det.bbox, [cls_gts[j].bbox for j in ix])[0]
            ov = np.where(used[det.frame_id], -1.0, ov)
            best = int(np.argmax(ov))
            if ov[best] >= iou_thr:
                used[det.frame_id][best] = True
                scores.append(det.score)
                tps.append(True)
                continue
        ign = ign_frames.get(det.frame_id, [])
        if ign and iou_matrix(det.bbox, [ignore_gts[j].bbox for j in ign]).max() >= iou_thr:
            continue
        scores.append(det.score)
        tps.append(False)
    return np.asarray(scores, dtype=np.float64), np.asarray(tps, dtype=bool), len(cls_gts)


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolated AP from a ranked recall/precision sweep."""
    if recall.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def ap_per_class(dets: Sequence[Detection], gts: Sequence[GroundTruth], class_id: int,
                 iou_thr: float = DEFAULT_IOU) -> ClassCurve:
    if not 0.0 < iou_thr <= 1.0:
        raise ValueError(f"iou_thr must lie in (0, 1], got {iou_thr}")
    _, tp, num_gt = match_detections(dets, gts, class_id, iou_thr)
    if num_gt == 0:
        raise ValueError(f"class {class_id} has no ground truth; AP is undefined")
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / num_gt
    precision = ctp / np.maximum(ctp + cfp, 1)
    return ClassCurve(average_precision(recall, precision), recall, precision.astype(np.float64), num_gt)


def map_eval(dets: Sequence[Detection], gts: Sequence[GroundTruth], class_ids: Iterable[int],
             iou_thr: float = DEFAULT_IOU, class_names: dict[int, str] | None = None) -> EvalResult:
    """AP for every class in ``class_ids`` that has ground truth; mAP is their mean."""
    class_ids = list(class_ids)
    if not class_ids:
        raise ValueError("class_ids must not be empty")
    if class_names is None:
        class_names = {i: n for i, n in enumerate(CLASS_NAMES)}
    present = {g.class_id for g in gts if not g.ignore}
    per_class = {c: ap_per_class(dets, gts, c, iou_thr) for c in class_ids if c in present}
    return EvalResult(per_class, iou_thr, dict(class_names))


def recall_at(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thr: float = 0.5,
              class_aware: bool = True) -> float:
    """Fraction of non-ignored gts covered by at least one detection at ``iou_thr``."""
    targets = [g for g in gts if not g.ignore]
    if not targets:
        return 0.0
    det_frames = _by_frame(dets)
    hit = 0
    for g in targets:
        cand = [dets[i] for i in det_frames.get(g.frame_id, [])
                if not class_aware or dets[i].class_id == g.class_id]
        if cand and iou_matrix(g.bbox, [d.bbox for d in cand]).max() >= iou_thr:
            hit += 1
    return hit / len(targets)
