"""Seeded synthetic detection scenes.

A scene is a set of class-labelled boxes on an empty canvas plus one feature
vector per anchor of an :class:`~focaldet.boxes.AnchorGrid`. Features stand
in for a backbone: for an anchor whose best-overlapping object has IoU ``u``,
class ``c`` and regression offsets ``t`` the clean vector is

    [signal * u * onehot(c), offset_gain * t * (u >= offset_gate), 0, ..., 0]

and every entry then receives ``N(0, noise_sigma^2)`` noise. With no noise a
per-class threshold on ``signal * u`` separates foreground (``u >= 0.5``)
from background (``u < 0.4``) exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Iterator

import numpy as np

from .boxes import AnchorGrid, PyramidLevel, as_boxes, encode_boxes, generate_anchors, iou_matrix
from .structures import GroundTruth

_MASK64 = (1 << 64) - 1
MAX_PLACEMENT_ATTEMPTS = 2000


def mix64(value: int) -> int:
    """SplitMix64 finalizer; maps consecutive integers to decorrelated seeds."""
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def scene_seed(seed: int, index: int) -> int:
    return mix64((seed + index) & _MASK64)


@dataclass(frozen=True)
class SceneConfig:
    image_width: int = 256
    image_height: int = 256
    n_objects: int = 3
    class_count: int = 4
    feature_dim: int = 12
    noise_sigma: float = 0.5
    seed: int = 0
    signal: float = 4.0
    min_size: float = 16.0
    max_size: float = 112.0
    # objects are redrawn until some anchor covers them at least this well
    min_anchor_iou: float = 0.5
    max_object_overlap: float = 0.3
    offset_gate: float = 0.3
    # scale applied to the encoded box offsets carried in the features
    offset_gain: float = 4.0

    def __post_init__(self):
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image dimensions must be >= 1")
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if self.feature_dim < self.class_count + 4:
            raise ValueError("feature_dim must be at least class_count + 4")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 < self.min_size <= self.max_size:
            raise ValueError("need 0 < min_size <= max_size")

    def default_grid(self) -> AnchorGrid:
        return AnchorGrid(self.image_width, self.image_height)


@dataclass
class SyntheticScene:
    ground_truths: list[GroundTruth]
    features: np.ndarray
    seed: int = 0
    frame_id: int = 0
    class_count: int = 4

    @property
    def gt_boxes(self) -> np.ndarray:
        return as_boxes([g.bbox for g in self.ground_truths])

    @property
    def gt_classes(self) -> np.ndarray:
        return np.array([g.class_id for g in self.ground_truths], dtype=np.int64)


@lru_cache(maxsize=16)
def _anchors_for(grid: AnchorGrid) -> np.ndarray:
    anchors = generate_anchors(grid)
    anchors.setflags(write=False)
    return anchors


def anchors_for(grid: AnchorGrid) -> np.ndarray:
    """Cached, read-only anchors of ``grid``."""
    return _anchors_for(grid)


def _place_objects(cfg: SceneConfig, anchors: np.ndarray, rng: np.random.Generator):
    hi_w = min(cfg.max_size, cfg.image_width)
    hi_h = min(cfg.max_size, cfg.image_height)
    if cfg.n_objects and (cfg.min_size > hi_w or cfg.min_size > hi_h):
        raise ValueError(f"objects of size >= {cfg.min_size} do not fit the image")
    boxes = []
    for _ in range(cfg.n_objects):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            w = rng.uniform(cfg.min_size, hi_w)
            h = rng.uniform(cfg.min_size, hi_h)
            x0 = rng.uniform(0.0, cfg.image_width - w)
            y0 = rng.uniform(0.0, cfg.image_height - h)
            box = np.array([x0, y0, x0 + w, y0 + h])
            if boxes and iou_matrix(box, boxes).max() > cfg.max_object_overlap:
                continue
            if iou_matrix(anchors, box).max() < cfg.min_anchor_iou:
                continue
            boxes.append(box)
            break
        else:
            raise ValueError(
                f"could not place object {len(boxes) + 1} of {cfg.n_objects} "
                f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
    classes = rng.integers(0, cfg.class_count, size=cfg.n_objects)
    return as_boxes(boxes) if boxes else np.zeros((0, 4)), classes


def clean_features(cfg: SceneConfig, anchors: np.ndarray, gt_boxes: np.ndarray,
                   gt_classes: np.ndarray) -> np.ndarray:
    """Noise-free feature matrix, shape ``(len(anchors), feature_dim)``."""
    k = cfg.class_count
    feats = np.zeros((anchors.shape[0], cfg.feature_dim))
    if gt_boxes.shape[0] == 0:
        return feats
    overlaps = iou_matrix(anchors, gt_boxes)
    best = overlaps.argmax(axis=1)
    u = overlaps[np.arange(anchors.shape[0]), best]
    feats[np.arange(anchors.shape[0]), gt_classes[best]] = cfg.signal * u
    gated = u >= cfg.offset_gate
    if gated.any():
        feats[gated, k:k + 4] = cfg.offset_gain * encode_boxes(anchors[gated], gt_boxes[best[gated]])
    return feats


def gen_scene(cfg: SceneConfig, grid: AnchorGrid | None = None, frame_id: int = 0) -> SyntheticScene:
    """Draw one scene from ``cfg.seed``."""
    grid = grid or cfg.default_grid()
    anchors = anchors_for(grid)
    rng = np.random.default_rng(cfg.seed)
    gt_boxes, gt_classes = _place_objects(cfg, anchors, rng)
    feats = clean_features(cfg, anchors, gt_boxes, gt_classes)
    if cfg.noise_sigma > 0:
        feats += rng.normal(0.0, cfg.noise_sigma, size=feats.shape)
    gts = [GroundTruth(frame_id, int(c), tuple(float(v) for v in b)) for b, c in zip(gt_boxes, gt_classes)]
    return SyntheticScene(gts, feats, seed=cfg.seed, frame_id=frame_id, class_count=cfg.class_count)


def iter_scenes(cfg: SceneConfig, n_scenes: int, grid: AnchorGrid | None = None,
                start: int = 0) -> Iterator[SyntheticScene]:
    """Lazily yield scenes ``start .. start + n_scenes - 1``.

    Scene ``i`` uses seed ``mix64(cfg.seed + i)`` and frame id ``i``.
    """
    for i in range(start, start + n_scenes):
        yield gen_scene(replace(cfg, seed=scene_seed(cfg.seed, i)), grid, frame_id=i)


def gen_dataset(cfg: SceneConfig, n_scenes: int, grid: AnchorGrid | None = None,
                start: int = 0) -> list[SyntheticScene]:
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    return list(iter_scenes(cfg, n_scenes, grid, start))


def scene_to_json(scene: SyntheticScene, grid: AnchorGrid) -> str:
    """Serialise a scene; features are stored row-major, one list per anchor."""
    doc = {
        "format": "focaldet-scene",
        "version": 1,
        "seed": scene.seed,
        "frame_id": scene.frame_id,
        "class_count": scene.class_count,
        "grid": {
            "image_width": grid.image_width,
            "image_height": grid.image_height,
            "levels": [asdict(lvl) for lvl in grid.levels],
        },
        "ground_truths": [{"class_id": g.class_id, "box": list(g.bbox)} for g in scene.ground_truths],
        "features": scene.features.tolist(),
    }
    return json.dumps(doc)


def scene_from_json(text: str) -> tuple[SyntheticScene, AnchorGrid]:
    doc = json.loads(text)
    if doc.get("format") != "focaldet-scene":
        raise ValueError("not a focaldet scene document")
    g = doc["grid"]
    levels = tuple(PyramidLevel(lvl["stride"], tuple(lvl["scales"]), tuple(lvl["ratios"])) for lvl in g["levels"])
    grid = AnchorGrid(g["image_width"], g["image_height"], levels)
    frame = doc.get("frame_id", 0)
    gts = [GroundTruth(frame, int(r["class_id"]), tuple(float(v) for v in r["box"])) for r in doc["ground_truths"]]
    feats = np.asarray(doc["features"], dtype=np.float64).reshape(-1, len(doc["features"][0]) if doc["features"] else 0)
    scene = SyntheticScene(gts, feats, seed=doc.get("seed", 0), frame_id=frame, class_count=doc.get("class_count", 4))
    return scene, grid
