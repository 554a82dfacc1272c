"""Sigmoid cross-entropy and focal loss on logits, with analytic gradients.

Everything is written in terms of the pre-sigmoid score ``x`` and a label
``y`` in ``{-1, +1}``. With ``z = y * x`` we have ``p_t = sigmoid(z)`` and
``-log(p_t) = log(1 + exp(-z))``, which stays finite for any finite logit.

All functions broadcast over numpy arrays and return python floats for
scalar input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np


@dataclass(frozen=True)
class FocalParams:
    """Focusing exponent, foreground weight and initial foreground prior."""

    gamma: float = 2.0
    alpha: float = 0.25
    prior: float = 0.01

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.prior < 1.0:
            raise ValueError(f"prior must lie in (0, 1), got {self.prior}")

    @property
    def in_robust_region(self) -> bool:
        return 0.5 <= self.gamma <= 5.0 and 0.25 <= self.alpha <= 0.75


class LossSample(NamedTuple):
    logit: float
    label: int


def _out(value):
    return float(value) if np.ndim(value) == 0 else value


def _signed(logit, y):
    y = np.asarray(y)
    if np.any((y != 1) & (y != -1)):
        raise ValueError("labels must be -1 or +1")
    return np.asarray(logit, dtype=np.float64) * y


def _sigmoid(v):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    return _out(_sigmoid(x))


def p_t(logit, y):
    """Probability the model assigns to the true label."""
    return _out(_sigmoid(_signed(logit, y)))


def _log_terms(z):
    # -log(p_t) and log(1 - p_t) from z = y * x, branch-free:
    # -log p_t = relu(-z) + log1p(exp(-|z|)),  -log(1 - p_t) = relu(z) + log1p(exp(-|z|))
    l = np.log1p(np.exp(-np.abs(z)))
    rz = np.maximum(z, 0)
    return l + (rz - z), -(rz + l)


def ce_loss(logit, y):
    """``-log(p_t)`` in the stable form ``log(1 + exp(-y * logit))``."""
    return _out(_log_terms(_signed(logit, y))[0])


def _focal_terms(z, y, alpha, gamma, want_grad=True):
    """Loss and d/dlogit from the signed logit ``z = y * x`` (labels unchecked).

    Works in the dtype of ``z``. With ``q = 1 - p_t`` the loss is
    ``a_t q^g (-log p_t)``; using ``dq/dz = -p_t q`` and
    ``d(-log p_t)/dz = -q``,

        dL/dz = -a_t q^g (q + g p_t (-log p_t)),   dL/dx = y dL/dz.
    """
    ce, log_q = _log_terms(z)
    mod = np.exp(gamma * log_q) if gamma else 1.0
    # alpha for y = +1, 1 - alpha for y = -1
    a_t = 0.5 + (alpha - 0.5) * y
    weight = a_t * mod
    loss = weight * ce
    if not want_grad:
        return loss, None
    q = np.exp(log_q)
    pt = np.exp(-ce)
    return loss, -y * weight * (q + gamma * pt * ce)


def focal_loss(logit, y, params: FocalParams):
    """``alpha_t * (1 - p_t) ** gamma * -log(p_t)``; exactly 0 once ``p_t`` rounds to 1."""
    z = _signed(logit, y)
    loss, _ = _focal_terms(z, np.asarray(y), params.alpha, params.gamma, want_grad=False)
    return _out(loss)


def focal_grad(logit, y, params: FocalParams):
    """Analytic derivative of :func:`focal_loss` with respect to the logit."""
    z = _signed(logit, y)
    _, grad = _focal_terms(z, np.asarray(y), params.alpha, params.gamma)
    return _out(grad)


def focal_loss_and_grad(logit, y, params: FocalParams):
    z = _signed(logit, y)
    loss, grad = _focal_terms(z, np.asarray(y), params.alpha, params.gamma)
    return _out(loss), _out(grad)


def prior_bias(prior: float) -> float:
    """Output bias whose sigmoid equals ``prior``: ``-log((1 - prior) / prior)``."""
    if not 0.0 < prior < 1.0:
        raise ValueError(f"prior must lie in (0, 1), got {prior}")
    return -math.log((1.0 - prior) / prior)


def positive_normalizer(labels) -> float:
    """Number of positive labels, floored at one."""
    return float(max(1, int(np.count_nonzero(np.asarray(labels) == 1))))


def batch_loss(samples: Iterable[LossSample], params: FocalParams, normalizer: float | None = None) -> float:
    """Summed focal loss divided by ``normalizer``.

    The default normalizer is the number of positive samples, floored at 1.
    Summation is sequential in input order so the result is reproducible.
    """
    samples = list(samples)
    if not samples:
        return 0.0
    logits = np.array([s[0] for s in samples], dtype=np.float64)
    labels = np.array([s[1] for s in samples])
    if normalizer is None:
        normalizer = positive_normalizer(labels)
    if not normalizer > 0:
        raise ValueError("normalizer must be positive")
    total = 0.0
    for v in focal_loss(logits, labels, params):
        total += float(v)
    return total / normalizer
