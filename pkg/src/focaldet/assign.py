"""IoU-based anchor labelling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes import as_boxes, encode_boxes, iou_matrix
from .structures import GroundTruth

BACKGROUND = -1
IGNORE = -2

POS_THRESHOLD = 0.5
NEG_THRESHOLD = 0.4


@dataclass
class AnchorTargets:
    """Per-anchor targets.

    ``labels`` holds a class id for foreground anchors, ``BACKGROUND`` or
    ``IGNORE`` otherwise. ``matched_gt`` indexes the input ground-truth list
    (``-1`` when absent) and ``regression`` is only meaningful where
    ``foreground`` is true (zero elsewhere).
    """

    labels: np.ndarray
    matched_gt: np.ndarray
    regression: np.ndarray
    max_iou: np.ndarray

    @property
    def foreground(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def background(self) -> np.ndarray:
        return self.labels == BACKGROUND

    @property
    def ignored(self) -> np.ndarray:
        return self.labels == IGNORE

    @property
    def num_foreground(self) -> int:
        return int(np.count_nonzero(self.labels >= 0))


def match_anchors(
    anchors,
    gts: Sequence[GroundTruth],
    pos_thr: float = POS_THRESHOLD,
    neg_thr: float = NEG_THRESHOLD,
) -> AnchorTargets:
    """Label anchors from ground truth by IoU.

    Anchors whose best IoU reaches ``pos_thr`` become foreground (ties go to
    the lowest gt index), those below ``neg_thr`` background and the band in
    between is ignored. Every gt additionally claims its best anchor, so
    small or oddly shaped objects still get a positive. Ignore-flagged gts
    only turn would-be background anchors overlapping them by more than
    ``neg_thr`` into ignored ones.
    """
    if not 0.0 <= neg_thr <= pos_thr <= 1.0:
        raise ValueError(f"need 0 <= neg_thr <= pos_thr <= 1, got ({pos_thr}, {neg_thr})")
    anchors = as_boxes(anchors)
    n = anchors.shape[0]
    labels = np.full(n, BACKGROUND, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    regression = np.zeros((n, 4))
    max_iou = np.zeros(n)

    active = [i for i, g in enumerate(gts) if not g.ignore]
    ignored = [i for i, g in enumerate(gts) if g.ignore]

    if active:
        gt_boxes = as_boxes([gts[i].bbox for i in active])
        gt_classes = np.array([gts[i].class_id for i in active], dtype=np.int64)
        overlaps = iou_matrix(anchors, gt_boxes)
        best_gt = overlaps.argmax(axis=1)
        max_iou = overlaps[np.arange(n), best_gt]

        fg = max_iou >= pos_thr
        labels[(max_iou >= neg_thr) & ~fg] = IGNORE
        best_anchor = overlaps.argmax(axis=0)
        # lowest gt index wins a shared best anchor
        for j in range(len(active) - 1, -1, -1):
            a = best_anchor[j]
            if overlaps[a, j] > 0:
                fg[a] = True
                best_gt[a] = j
        labels[fg] = gt_classes[best_gt[fg]]
        matched[fg] = np.asarray(active)[best_gt[fg]]
        if fg.any():
            regression[fg] = encode_boxes(anchors[fg], gt_boxes[best_gt[fg]])

    if ignored:
        ign_iou = iou_matrix(anchors, [gts[i].bbox for i in ignored]).max(axis=1)
        labels[(labels == BACKGROUND) & (ign_iou > neg_thr)] = IGNORE

    return AnchorTargets(labels, matched, regression, max_iou)
