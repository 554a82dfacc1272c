"""Loss-distribution analysis and the gamma/alpha sweep harness.

The CDF of normalised loss for a group of samples is built by sorting the
per-sample losses ascending, dividing their running sum by the total and
plotting it against the fraction of samples seen. A curve that hugs the
diagonal means every sample contributes alike; a late jump means a few hard
samples carry most of the loss.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .assign import BACKGROUND, IGNORE
from .boxes import AnchorGrid
from .detector import ToyModel, TrainConfig, predict, scene_targets, train
from .evaluation import map_eval
from .focal import FocalParams, _focal_terms
from .synth import SyntheticScene, scene_seed

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass
class CdfCurve:
    gamma: float
    group: str
    sample_fraction: np.ndarray
    cum_loss_fraction: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.sample_fraction.tolist(), self.cum_loss_fraction.tolist()))

    def at(self, fractions) -> np.ndarray:
        """Cumulative loss fraction at arbitrary sample fractions (step interpolation)."""
        fractions = np.asarray(fractions, dtype=np.float64)
        n = self.sample_fraction.size
        idx = np.floor(fractions * n + 1e-9).astype(np.int64)
        padded = np.concatenate([[0.0], self.cum_loss_fraction])
        return padded[np.clip(idx, 0, n)]

    def resample(self, n_points: int) -> "CdfCurve":
        grid = np.arange(1, n_points + 1) / n_points
        return CdfCurve(self.gamma, self.group, grid, self.at(grid))


def _as_losses(losses) -> np.ndarray:
    arr = np.asarray(losses, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("loss list is empty")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("losses must be finite and non-negative")
    return arr


def loss_cdf(losses, gamma: float = float("nan"), group: str = "") -> CdfCurve:
    arr = np.sort(_as_losses(losses))
    total = arr.sum()
    if total <= 0:
        raise ValueError("all losses are zero; the normalised CDF is undefined")
    cum = np.cumsum(arr) / total
    cum[-1] = 1.0
    frac = np.arange(1, arr.size + 1) / arr.size
    return CdfCurve(gamma, group, frac, cum)


def hardest_share(losses, top_fraction: float) -> float:
    """Share of the total loss held by the ``ceil(top_fraction * n)`` largest losses."""
    if not 0.0 < top_fraction <= 1.0:
        raise ValueError("top_fraction must lie in (0, 1]")
    arr = np.sort(_as_losses(losses))
    total = arr.sum()
    if total <= 0:
        raise ValueError("all losses are zero")
    k = math.ceil(top_fraction * arr.size - 1e-9)
    return float(arr[arr.size - k:].sum() / total)


def ks_distance(a: CdfCurve, b: CdfCurve) -> float:
    """Largest vertical gap between two curves over the union of their sample fractions."""
    grid = np.union1d(a.sample_fraction, b.sample_fraction)
    return float(np.max(np.abs(a.at(grid) - b.at(grid))))


@dataclass
class SampledAnchors:
    """Class logits and one-vs-all labels of a seeded uniform anchor sample."""

    pos_logits: np.ndarray
    pos_labels: np.ndarray
    neg_logits: np.ndarray
    neg_labels: np.ndarray
    pos_available: int
    neg_available: int

    @property
    def complete(self) -> bool:
        """False when a group had fewer anchors than requested."""
        return self.pos_complete and self.neg_complete

    pos_complete: bool = True
    neg_complete: bool = True

    def losses(self, params: FocalParams) -> tuple[np.ndarray, np.ndarray]:
        """Per-anchor focal loss (summed over classes) for positives and negatives."""
        def per_anchor(logits, labels):
            if logits.size == 0:
                return np.zeros(0)
            loss, _ = _focal_terms(logits * labels, labels, params.alpha, params.gamma, want_grad=False)
            return loss.sum(axis=1)
        return per_anchor(self.pos_logits, self.pos_labels), per_anchor(self.neg_logits, self.neg_labels)


class _Reservoir:
    """Keeps the rows with the ``n`` smallest random keys: a uniform sample without replacement."""

    def __init__(self, n: int):
        self.n = n
        self.keys = np.zeros(0)
        self.rows = None
        self.seen = 0

    def offer(self, keys: np.ndarray, rows: np.ndarray):
        self.seen += keys.size
        if keys.size == 0:
            return
        if self.rows is None:
            self.keys, self.rows = keys, rows
        else:
            self.keys = np.concatenate([self.keys, keys])
            self.rows = np.concatenate([self.rows, rows])
        if self.keys.size > 2 * self.n:
            self._trim()

    def _trim(self):
        if self.keys.size > self.n:
            part = np.argpartition(self.keys, self.n - 1)[: self.n]
            self.keys, self.rows = self.keys[part], self.rows[part]

    def result(self, width: int) -> np.ndarray:
        self._trim()
        if self.rows is None:
            return np.zeros((0, width))
        order = np.argsort(self.keys, kind="stable")
        return self.rows[order]


def sample_anchors(model: ToyModel, scenes: Iterable[SyntheticScene], grid: AnchorGrid,
                   n_neg: int, n_pos: int, seed: int = 0, stop_when_full: bool = False) -> SampledAnchors:
    """Run ``model`` over ``scenes`` and keep a seeded uniform sample of anchors.

    Background-assigned anchors form the negative pool and foreground ones
    the positive pool; ignored anchors are in neither. Which anchors are
    drawn depends only on ``seed`` and the scenes, not on the model.

    With ``stop_when_full`` the scene stream is cut after the first scene at
    which both pools have at least the requested number of anchors; the
    sample is then uniform over the scenes consumed so far.
    """
    if n_neg < 1 or n_pos < 1:
        raise ValueError("n_neg and n_pos must be >= 1")
    k = model.num_classes
    rng = np.random.default_rng(seed)
    pos, neg = _Reservoir(n_pos), _Reservoir(n_neg)
    for scene in scenes:
        targets = scene_targets(scene, grid)
        logits = model.forward(scene.features)[0]
        labels = np.where(targets.labels[:, None] == np.arange(k)[None, :], 1.0, -1.0)
        rows = np.concatenate([logits, labels], axis=1)
        keys = rng.random(targets.labels.size)
        is_pos = targets.labels >= 0
        is_neg = targets.labels == BACKGROUND
        pos.offer(keys[is_pos], rows[is_pos])
        neg.offer(keys[is_neg], rows[is_neg])
        if stop_when_full and pos.seen >= n_pos and neg.seen >= n_neg:
            break
    p = pos.result(2 * k)
    q = neg.result(2 * k)
    return SampledAnchors(p[:, :k], p[:, k:], q[:, :k], q[:, k:], pos.seen, neg.seen,
                          pos.seen >= n_pos, neg.seen >= n_neg)


def collect_losses(model: ToyModel, scenes: Iterable[SyntheticScene], grid: AnchorGrid, params: FocalParams,
                   n_neg: int = 10**6, n_pos: int = 10**4, seed: int = 0):
    """``(pos_losses, neg_losses, sample)`` under ``params``; see :func:`sample_anchors`."""
    sample = sample_anchors(model, scenes, grid, n_neg, n_pos, seed)
    pos, neg = sample.losses(params)
    return pos, neg, sample


def cdf_curves(sample: SampledAnchors, gammas: Sequence[float], alpha: float = 0.25) -> list[CdfCurve]:
    """Positive and negative curves for each evaluation gamma on one fixed sample."""
    curves = []
    for g in gammas:
        pos, neg = sample.losses(FocalParams(gamma=g, alpha=alpha))
        curves.append(loss_cdf(pos, g, POSITIVE))
        curves.append(loss_cdf(neg, g, NEGATIVE))
    return curves


def curves_to_csv(curves: Sequence[CdfCurve], n_points: int | None = 1000) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["gamma", "group", "sample_fraction", "cum_loss_fraction"])
    for c in curves:
        c = c.resample(n_points) if n_points else c
        for f, v in zip(c.sample_fraction, c.cum_loss_fraction):
            w.writerow([f"{c.gamma:g}", c.group, f"{f:.6f}", f"{v:.9f}"])
    return out.getvalue()


# default sweep rows: (gamma, alpha)
TABLE_GRID = ((0.0, 0.75), (0.1, 0.75), (0.2, 0.75), (0.5, 0.5), (1.0, 0.25), (2.0, 0.25), (5.0, 0.25))


@dataclass
class SweepRow:
    gamma: float
    alpha: float
    map: float | None
    status: str

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"


def pair_grid(gammas: Sequence[float], alphas: Sequence[float]) -> list[tuple[float, float]]:
    """Pair gammas with alphas row by row; a single alpha is shared by every row."""
    gammas, alphas = list(gammas), list(alphas)
    if not gammas or not alphas:
        raise ValueError("gammas and alphas must be non-empty")
    if len(alphas) == 1:
        alphas = alphas * len(gammas)
    if len(alphas) != len(gammas):
        raise ValueError("need one alpha per gamma, or a single alpha")
    return list(zip(gammas, alphas))


def evaluate_model(model: ToyModel, scenes: Sequence[SyntheticScene], grid: AnchorGrid,
                   iou_thr: float = 0.5, score_thr: float = 0.05) -> float:
    dets, gts = [], []
    for s in scenes:
        dets.extend(predict(model, s, grid, score_thr=score_thr))
        gts.extend(s.ground_truths)
    k = model.num_classes
    return map_eval(dets, gts, range(k), iou_thr, class_names={i: str(i) for i in range(k)}).map


def _run_cell(args):
    index, gamma, alpha, base, train_data, eval_data, grid, iou_thr = args
    focal = FocalParams(gamma=gamma, alpha=alpha, prior=base.focal.prior)
    cfg = replace(base, focal=focal, seed=scene_seed(base.seed, index) & 0xFFFFFFFF)
    model, trace = train(cfg, train_data, grid)
    if trace.diverged or not model.is_finite():
        return SweepRow(gamma, alpha, None, "diverged")
    return SweepRow(gamma, alpha, evaluate_model(model, eval_data, grid, iou_thr), trace.status)


def sweep(gammas: Sequence[float], alphas: Sequence[float], base: TrainConfig,
          train_data: Sequence[SyntheticScene], eval_data: Sequence[SyntheticScene], grid: AnchorGrid,
          iou_thr: float = 0.5, workers: int = 1) -> list[SweepRow]:
    """Train and score one toy model per (gamma, alpha) row.

    Cell ``i`` trains with seed ``mix64(base.seed + i)``; results do not depend
    on ``workers``.
    """
    cells = [(i, g, a, base, train_data, eval_data, grid, iou_thr)
             for i, (g, a) in enumerate(pair_grid(gammas, alphas))]
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["gamma", "alpha", "map"])
    for r in rows:
        w.writerow([f"{r.gamma:g}", f"{r.alpha:g}", "diverged" if r.map is None else f"{100 * r.map:.2f}"])
    return out.getvalue()
