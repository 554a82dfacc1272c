"""Box geometry: IoU, dense anchor grids, regression encoding and NMS.

Boxes are continuous ``(x_min, y_min, x_max, y_max)`` rectangles in pixels,
with no ``+1`` pixel convention. Vectorised helpers take ``(N, 4)`` arrays;
the scalar helpers accept anything unpackable into four floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .structures import Detection

# exp(dw) is clamped so a runaway regressor cannot overflow the decode
DECODE_CLAMP = math.log(1000.0)


class BBox(NamedTuple):
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def is_valid(self) -> bool:
        return self.x_max >= self.x_min and self.y_max >= self.y_min

    @classmethod
    def from_xywh(cls, left: float, top: float, width: float, height: float) -> "BBox":
        return cls(left, top, left + width, top + height)


class RegressionTarget(NamedTuple):
    dx: float
    dy: float
    dw: float
    dh: float


def as_boxes(boxes) -> np.ndarray:
    """Coerce a box or a sequence of boxes into a float64 ``(N, 4)`` array."""
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.size == 0:
        return arr.reshape(0, 4)
    if arr.shape[-1] != 4:
        raise ValueError(f"boxes must have 4 coordinates, got shape {arr.shape}")
    return arr


def area(boxes: np.ndarray) -> np.ndarray:
    boxes = as_boxes(boxes)
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def iou(a, b) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        inter = 0.0
    else:
        inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU, shape ``(len(boxes_a), len(boxes_b))``."""
    a = as_boxes(boxes_a)
    b = as_boxes(boxes_b)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = area(a)[:, None] + area(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


@dataclass(frozen=True)
class PyramidLevel:
    stride: float
    scales: tuple[float, ...] = (1.0, 2 ** (1 / 3), 2 ** (2 / 3))
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)

    @property
    def anchors_per_cell(self) -> int:
        return len(self.scales) * len(self.ratios)


@dataclass(frozen=True)
class AnchorGrid:
    """Multi-level anchor lattice over an ``image_width`` x ``image_height`` image.

    Anchor ``(scale, ratio)`` at a level of stride ``s`` has area
    ``(s * scale) ** 2`` and ``height / width == ratio``.
    """

    image_width: int
    image_height: int
    levels: tuple[PyramidLevel, ...] = field(
        default_factory=lambda: tuple(PyramidLevel(s) for s in (8, 16, 32, 64, 128))
    )

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        if not self.levels:
            raise ValueError("anchor grid needs at least one level")
        strides = [lvl.stride for lvl in self.levels]
        if any(s <= 0 for s in strides):
            raise ValueError("strides must be positive")
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError(f"strides must be strictly increasing, got {strides}")
        for lvl in self.levels:
            if not lvl.scales or not lvl.ratios:
                raise ValueError("every level needs at least one scale and one ratio")
            if any(v <= 0 for v in (*lvl.scales, *lvl.ratios)):
                raise ValueError("scales and ratios must be positive")

    @classmethod
    def single_level(cls, image_width: int, image_height: int, stride: float,
                     scales: Sequence[float] = (1.0,), ratios: Sequence[float] = (1.0,)) -> "AnchorGrid":
        return cls(image_width, image_height, (PyramidLevel(stride, tuple(scales), tuple(ratios)),))

    def cells(self, level: PyramidLevel) -> tuple[int, int]:
        """(columns, rows) of the lattice at ``level``."""
        return (math.ceil(self.image_width / level.stride), math.ceil(self.image_height / level.stride))

    @property
    def num_anchors(self) -> int:
        total = 0
        for lvl in self.levels:
            cols, rows = self.cells(lvl)
            total += cols * rows * lvl.anchors_per_cell
        return total


def generate_anchors(grid: AnchorGrid) -> np.ndarray:
    """All anchors of ``grid`` as an ``(N, 4)`` array.

    Ordering is level-major, then row, column, scale and ratio, so the result
    is a pure function of the grid.
    """
    out = []
    for lvl in grid.levels:
        cols, rows = grid.cells(lvl)
        shapes = []
        for scale in lvl.scales:
            side = lvl.stride * scale
            for ratio in lvl.ratios:
                root = math.sqrt(ratio)
                shapes.append((side / root, side * root))
        wh = np.asarray(shapes, dtype=np.float64)  # (A, 2)
        cx = (np.arange(cols, dtype=np.float64) + 0.5) * lvl.stride
        cy = (np.arange(rows, dtype=np.float64) + 0.5) * lvl.stride
        cyy, cxx = np.meshgrid(cy, cx, indexing="ij")  # row-major cells
        centers = np.stack([cxx.ravel(), cyy.ravel()], axis=1)  # (C, 2)
        half = wh / 2.0
        boxes = np.empty((centers.shape[0], wh.shape[0], 4))
        boxes[..., 0] = centers[:, None, 0] - half[None, :, 0]
        boxes[..., 1] = centers[:, None, 1] - half[None, :, 1]
        boxes[..., 2] = centers[:, None, 0] + half[None, :, 0]
        boxes[..., 3] = centers[:, None, 1] + half[None, :, 1]
        out.append(boxes.reshape(-1, 4))
    return np.concatenate(out, axis=0)


def _center_size(boxes: np.ndarray):
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    return boxes[:, 0] + 0.5 * w, boxes[:, 1] + 0.5 * h, w, h


def encode_boxes(anchors, gts) -> np.ndarray:
    """Row-wise regression targets ``(dx, dy, dw, dh)`` of ``gts`` w.r.t. ``anchors``."""
    anchors = as_boxes(anchors)
    gts = as_boxes(gts)
    ax, ay, aw, ah = _center_size(anchors)
    gx, gy, gw, gh = _center_size(gts)
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("cannot encode against a zero-area anchor")
    if np.any(gw <= 0) or np.any(gh <= 0):
        raise ValueError("cannot encode a zero-area ground-truth box")
    return np.stack([(gx - ax) / aw, (gy - ay) / ah, np.log(gw / aw), np.log(gh / ah)], axis=1)


def decode_boxes(anchors, deltas) -> np.ndarray:
    """Inverse of :func:`encode_boxes`; ``dw``/``dh`` clamped at ``ln(1000)``."""
    anchors = as_boxes(anchors)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    ax, ay, aw, ah = _center_size(anchors)
    cx = ax + deltas[:, 0] * aw
    cy = ay + deltas[:, 1] * ah
    w = aw * np.exp(np.minimum(deltas[:, 2], DECODE_CLAMP))
    h = ah * np.exp(np.minimum(deltas[:, 3], DECODE_CLAMP))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def encode_box(anchor, gt) -> RegressionTarget:
    return RegressionTarget(*encode_boxes(anchor, gt)[0].tolist())


def decode_box(anchor, t) -> BBox:
    return BBox(*decode_boxes(anchor, t)[0].tolist())


# above this many boxes per class the pairwise IoU matrix is not materialised
_NMS_MATRIX_LIMIT = 4096


def _greedy_keep_streaming(boxes: np.ndarray, order: np.ndarray, iou_threshold: float) -> list[int]:
    x0, y0, x1, y1 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (x1 - x0) * (y1 - y0)
    keep = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        iw = np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest])
        ih = np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest])
        inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
        union = areas[i] + areas[rest] - inter
        ovr = np.zeros_like(inter)
        np.divide(inter, union, out=ovr, where=union > 0)
        order = rest[ovr <= iou_threshold]
    return keep


def _greedy_keep(boxes: np.ndarray, order: np.ndarray, iou_threshold: float) -> list[int]:
    """Greedy suppression over ``boxes[order]``; a box dies when its IoU with a kept box exceeds the threshold."""
    if order.size > _NMS_MATRIX_LIMIT:
        return _greedy_keep_streaming(boxes, order, iou_threshold)
    b = boxes[order]
    ovr = iou_matrix(b, b)
    dead = np.zeros(order.size, dtype=bool)
    keep = []
    for i in range(order.size):
        if dead[i]:
            continue
        keep.append(int(order[i]))
        dead[i + 1:] |= ovr[i, i + 1:] > iou_threshold
    return keep


def nms_indices(boxes, scores, classes, iou_threshold: float) -> np.ndarray:
    """Class-wise greedy NMS over arrays.

    Returns indices of the kept rows sorted by descending score; equal scores
    keep their input order.
    """
    boxes = as_boxes(boxes)
    scores = np.asarray(scores, dtype=np.float64)
    classes = np.asarray(classes)
    if scores.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    kept = []
    for c in np.unique(classes):
        cls_order = order[classes[order] == c]
        kept.extend(_greedy_keep(boxes, cls_order, iou_threshold))
    kept = np.asarray(kept, dtype=np.int64)
    # restore the global score order with input-order tie breaking
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return kept[np.argsort(rank[kept], kind="stable")]


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy class-wise non-maximum suppression over :class:`Detection` records."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    if not dets:
        return []
    keep = nms_indices([d.bbox for d in dets], [d.score for d in dets],
                       [d.class_id for d in dets], iou_threshold)
    return [dets[i] for i in keep]
