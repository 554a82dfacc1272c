"""A per-anchor scoring head trained with momentum SGD under focal loss.

The model maps each anchor's feature vector to ``K`` class logits and four
box offsets, either linearly or through one ReLU hidden layer shared by both
heads. Training follows a step learning-rate schedule with momentum and
weight decay; the classification bias starts at ``prior_bias(prior)`` so
every anchor initially scores exactly ``prior``.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .assign import IGNORE, NEG_THRESHOLD, POS_THRESHOLD, AnchorTargets, match_anchors
from .boxes import AnchorGrid, decode_boxes, nms_indices
from .focal import FocalParams, _focal_terms, _sigmoid, prior_bias
from .structures import Detection
from .synth import SyntheticScene, anchors_for

CHECKPOINT_MAGIC = b"FDTM"
CHECKPOINT_VERSION = 1
INIT_SIGMA = 0.01
TRAIN_DTYPE = np.float32


@dataclass(frozen=True)
class TrainConfig:
    """Schedule and optimiser settings.

    Defaults are the desk-scale schedule: 11k iterations with the rate cut
    tenfold at 7k and 9k. :meth:`full_schedule` gives the full 110k run.
    """

    total_iterations: int = 11_000
    base_lr: float = 0.01
    lr_drop_iterations: tuple[int, ...] = (7_000, 9_000)
    lr_drop_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_scenes: int = 2
    focal: FocalParams = field(default_factory=FocalParams)
    seed: int = 0
    hidden: int = 0
    reg_weight: float = 1.0
    smooth_l1_beta: float = 1.0
    pos_thr: float = POS_THRESHOLD
    neg_thr: float = NEG_THRESHOLD
    trace_every: int = 100

    def __post_init__(self):
        if self.total_iterations < 0:
            raise ValueError("total_iterations must be >= 0")
        drops = list(self.lr_drop_iterations)
        if drops != sorted(drops):
            raise ValueError("lr_drop_iterations must be sorted ascending")
        if drops and self.total_iterations and drops[-1] >= self.total_iterations:
            raise ValueError("lr drops must come before total_iterations")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.batch_scenes < 1:
            raise ValueError("batch_scenes must be >= 1")
        if self.hidden < 0:
            raise ValueError("hidden must be >= 0")

    @classmethod
    def full_schedule(cls, **overrides) -> "TrainConfig":
        base = dict(total_iterations=110_000, lr_drop_iterations=(70_000, 90_000))
        base.update(overrides)
        return cls(**base)


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    if not 0 <= iteration < cfg.total_iterations:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.total_iterations})")
    drops = sum(1 for d in cfg.lr_drop_iterations if d <= iteration)
    return cfg.base_lr * cfg.lr_drop_factor ** drops


@dataclass
class ToyModel:
    params: dict[str, np.ndarray]
    feature_dim: int
    num_classes: int
    hidden: int = 0

    @classmethod
    def init(cls, feature_dim: int, num_classes: int, prior: float, hidden: int = 0, seed: int = 0) -> "ToyModel":
        """Gaussian init (sigma 0.01) except the classification head.

        Classification weights start at zero and its bias at
        ``prior_bias(prior)``, so the initial foreground probability equals
        ``prior`` on every anchor regardless of its features.
        """
        rng = np.random.default_rng(seed)
        width = hidden or feature_dim
        params = {}
        if hidden:
            params["w_hidden"] = rng.normal(0.0, INIT_SIGMA, (feature_dim, hidden))
            params["b_hidden"] = rng.normal(0.0, INIT_SIGMA, hidden)
        params["w_cls"] = np.zeros((width, num_classes))
        params["b_cls"] = np.full(num_classes, prior_bias(prior))
        params["w_reg"] = rng.normal(0.0, INIT_SIGMA, (width, 4))
        params["b_reg"] = rng.normal(0.0, INIT_SIGMA, 4)
        return cls(params, feature_dim, num_classes, hidden)

    def copy(self) -> "ToyModel":
        return ToyModel({k: v.copy() for k, v in self.params.items()}, self.feature_dim, self.num_classes, self.hidden)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def _trunk(self, features: np.ndarray):
        if not self.hidden:
            return features, None
        pre = features @ self.params["w_hidden"] + self.params["b_hidden"]
        return np.maximum(pre, 0.0), pre

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Class logits ``(N, K)`` and box offsets ``(N, 4)``."""
        h, _ = self._trunk(np.asarray(features, dtype=np.float64))
        return h @ self.params["w_cls"] + self.params["b_cls"], h @ self.params["w_reg"] + self.params["b_reg"]

    def scores(self, features: np.ndarray) -> np.ndarray:
        return _sigmoid(self.forward(features)[0])

    def to_bytes(self) -> bytes:
        """Little-endian checkpoint: magic, version, dims, then float64 arrays.

        Header is ``b"FDTM"`` followed by uint32 version, feature_dim,
        num_classes and hidden width (0 for linear). Arrays follow row-major
        in the order w_hidden, b_hidden (hidden models only), w_cls, b_cls,
        w_reg, b_reg.
        """
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<4I", CHECKPOINT_VERSION, self.feature_dim, self.num_classes, self.hidden))
        for name in _param_order(self.hidden):
            buf.write(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ToyModel":
        if data[:4] != CHECKPOINT_MAGIC:
            raise ValueError("not a toy-model checkpoint (bad magic)")
        if len(data) < 20:
            raise ValueError("truncated checkpoint header")
        version, dim, k, hidden = struct.unpack_from("<4I", data, 4)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        width = hidden or dim
        shapes = {"w_hidden": (dim, hidden), "b_hidden": (hidden,), "w_cls": (width, k),
                  "b_cls": (k,), "w_reg": (width, 4), "b_reg": (4,)}
        offset = 20
        params = {}
        for name in _param_order(hidden):
            count = int(np.prod(shapes[name]))
            end = offset + 8 * count
            if end > len(data):
                raise ValueError("truncated checkpoint")
            params[name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shapes[name])
            offset = end
        if offset != len(data):
            raise ValueError("trailing bytes in checkpoint")
        return cls(params, dim, k, hidden)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ToyModel":
        return cls.from_bytes(Path(path).read_bytes())


def _param_order(hidden: int) -> list[str]:
    head = ["w_cls", "b_cls", "w_reg", "b_reg"]
    return (["w_hidden", "b_hidden"] + head) if hidden else head


@dataclass
class TrainTrace:
    records: list[tuple[int, float, float]] = field(default_factory=list)
    status: str = "completed"
    diverged_at: int | None = None
    iterations_run: int = 0

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["iteration", "loss", "lr"])
        for it, loss, lr in self.records:
            writer.writerow([it, repr(float(loss)), repr(float(lr))])
        return out.getvalue()


@dataclass
class PreparedScene:
    """Training view of a scene: non-ignored rows, ``+-1`` labels and box targets."""

    features: np.ndarray  # (n, D + 1), trailing column of ones
    labels: np.ndarray
    fg_rows: np.ndarray
    reg_targets: np.ndarray

    @property
    def num_foreground(self) -> int:
        return int(self.fg_rows.size)


def prepare_scene(features: np.ndarray, targets: AnchorTargets, num_classes: int) -> PreparedScene:
    valid = targets.labels != IGNORE
    cls = targets.labels[valid]
    y = np.where(cls[:, None] == np.arange(num_classes)[None, :], 1.0, -1.0).astype(TRAIN_DTYPE)
    fg_rows = np.flatnonzero(cls >= 0)
    x = np.ones((int(valid.sum()), features.shape[1] + 1), dtype=TRAIN_DTYPE)
    x[:, :-1] = features[valid]
    return PreparedScene(x, y, fg_rows,
                         targets.regression[valid][fg_rows])


def scene_targets(scene: SyntheticScene, grid: AnchorGrid, pos_thr: float = POS_THRESHOLD,
                  neg_thr: float = NEG_THRESHOLD) -> AnchorTargets:
    return match_anchors(anchors_for(grid), scene.ground_truths, pos_thr, neg_thr)


def _smooth_l1(diff: np.ndarray, beta: float):
    a = np.abs(diff)
    small = a < beta
    loss = np.where(small, 0.5 * diff ** 2 / beta, a - 0.5 * beta)
    grad = np.where(small, diff / beta, np.sign(diff))
    return loss, grad


def batch_gradients(model: ToyModel, batch: Sequence[PreparedScene], focal: FocalParams,
                    reg_weight: float = 1.0, beta: float = 1.0):
    """Loss and parameter gradients over a batch of prepared scenes.

    Classification (focal) and regression (smooth-L1 on foreground rows)
    sums are both divided by the batch's foreground count, floored at one.
    Scenes are reduced in the given order. Per-anchor work runs in float32;
    the accumulated gradients and the returned loss are float64.
    """
    normalizer = float(max(1, sum(p.num_foreground for p in batch)))
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    w = {k: v.astype(TRAIN_DTYPE) for k, v in model.params.items()}
    if model.hidden:
        w1 = np.vstack([w["w_hidden"], w["b_hidden"]])
        g1 = np.zeros(w1.shape)
    total = 0.0
    for p in batch:
        x = p.features
        if model.hidden:
            h = x @ w1
            active = h > 0
            np.maximum(h, 0, out=h)
        else:
            h = x[:, :-1]
        logits = h @ w["w_cls"]
        logits += w["b_cls"]
        loss, d_cls = _focal_terms(logits * p.labels, p.labels, focal.alpha, focal.gamma)
        total += float(loss.sum(dtype=np.float64))
        d_cls /= normalizer
        grads["w_cls"] += h.T @ d_cls
        grads["b_cls"] += d_cls.sum(axis=0)
        d_reg = None
        if p.fg_rows.size:
            hf = h[p.fg_rows]
            reg = (hf @ w["w_reg"]).astype(np.float64) + model.params["b_reg"]
            sl, sg = _smooth_l1(reg - p.reg_targets, beta)
            total += reg_weight * float(sl.sum())
            d_reg = (sg * (reg_weight / normalizer)).astype(TRAIN_DTYPE)
            grads["w_reg"] += hf.T @ d_reg
            grads["b_reg"] += d_reg.sum(axis=0)
        if model.hidden:
            dh = d_cls @ w["w_cls"].T
            if d_reg is not None:
                dh[p.fg_rows] += d_reg @ w["w_reg"].T
            dh *= active
            g1 += x.T @ dh
    if model.hidden:
        grads["w_hidden"] += g1[:-1]
        grads["b_hidden"] += g1[-1]
    return total / normalizer, grads


def train(cfg: TrainConfig, data: Sequence[SyntheticScene], grid: AnchorGrid,
          model: ToyModel | None = None) -> tuple[ToyModel, TrainTrace]:
    """Momentum SGD on focal classification plus smooth-L1 box loss.

    Update rule: ``v <- m v - lr (g + wd w); w <- w + v``. Mini-batches are
    drawn from a seeded per-epoch permutation of ``data``. A non-finite loss
    or parameter stops training with ``trace.status == "diverged"``.
    """
    if not data:
        raise ValueError("training data is empty")
    feature_dim = data[0].features.shape[1]
    num_classes = data[0].class_count
    if model is None:
        model = ToyModel.init(feature_dim, num_classes, cfg.focal.prior, cfg.hidden, cfg.seed)
    else:
        model = model.copy()
    trace = TrainTrace()
    if cfg.total_iterations == 0:
        return model, trace

    prepared = [prepare_scene(s.features, scene_targets(s, grid, cfg.pos_thr, cfg.neg_thr), num_classes)
                for s in data]
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    queue: list[int] = []

    for it in range(cfg.total_iterations):
        idx = []
        while len(idx) < cfg.batch_scenes:
            if not queue:
                queue = rng.permutation(len(prepared)).tolist()
            idx.append(queue.pop())
        batch = [prepared[i] for i in idx]
        lr = lr_at(cfg, it)
        # overflow is expected on the way to divergence and is reported through the trace
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = batch_gradients(model, batch, cfg.focal, cfg.reg_weight, cfg.smooth_l1_beta)
        if not np.isfinite(loss):
            trace.records.append((it, loss, lr))
            trace.status, trace.diverged_at, trace.iterations_run = "diverged", it, it
            return model, trace
        if it % cfg.trace_every == 0:
            trace.records.append((it, loss, lr))
        with np.errstate(over="ignore", invalid="ignore"):
            for name, w in model.params.items():
                v = velocity[name]
                v *= cfg.momentum
                v -= lr * (grads[name] + cfg.weight_decay * w)
                w += v
        if not model.is_finite():
            trace.status, trace.diverged_at, trace.iterations_run = "diverged", it, it + 1
            return model, trace
    trace.iterations_run = cfg.total_iterations
    return model, trace


def predict(model: ToyModel, scene: SyntheticScene, grid: AnchorGrid, score_thr: float = 0.05,
            nms_thr: float = 0.5, max_candidates: int = 1000) -> list[Detection]:
    """Score, threshold, decode and class-wise NMS one scene.

    At most ``max_candidates`` (anchor, class) pairs enter NMS, taken by
    descending score.
    """
    anchors = anchors_for(grid)
    logits, offsets = model.forward(scene.features)
    scores = _sigmoid(logits)
    a_idx, c_idx = np.nonzero(scores > score_thr)
    if a_idx.size == 0:
        return []
    cand = scores[a_idx, c_idx]
    order = np.argsort(-cand, kind="stable")[:max_candidates]
    a_idx, c_idx, cand = a_idx[order], c_idx[order], cand[order]
    boxes = decode_boxes(anchors[a_idx], offsets[a_idx])
    boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0.0, grid.image_width)
    boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0.0, grid.image_height)
    keep = nms_indices(boxes, cand, c_idx, nms_thr)
    return [Detection(scene.frame_id, int(c_idx[i]), tuple(float(v) for v in boxes[i]), float(cand[i])) for i in keep]
