import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from focaldet.focal import (FocalParams, LossSample, batch_loss, ce_loss, focal_grad, focal_loss,
                            focal_loss_and_grad, p_t, positive_normalizer, prior_bias, sigmoid)

logits = st.floats(-50, 50, allow_nan=False)
labels = st.sampled_from([-1, 1])


def naive_focal(x, y, gamma, alpha):
    # direct transcription in exact arithmetic-friendly form, for moderate logits only
    p = 1.0 / (1.0 + math.exp(-x))
    pt = p if y == 1 else 1.0 - p
    at = alpha if y == 1 else 1.0 - alpha
    return -at * (1.0 - pt) ** gamma * math.log(pt)


@given(st.floats(-15, 15), labels, st.sampled_from([0.0, 0.5, 1.0, 2.0, 5.0]), st.sampled_from([0.25, 0.5, 0.75]))
def test_matches_naive_formula(x, y, gamma, alpha):
    got = focal_loss(x, y, FocalParams(gamma, alpha))
    assert got == pytest.approx(naive_focal(x, y, gamma, alpha), rel=1e-9, abs=1e-15)


def test_hand_values():
    # x = 0: p_t = 1/2, (1 - p_t)^2 = 1/4, -log p_t = log 2
    assert focal_loss(0.0, 1, FocalParams(2.0, 0.25)) == pytest.approx(0.25 * 0.25 * math.log(2))
    assert focal_loss(0.0, -1, FocalParams(2.0, 0.25)) == pytest.approx(0.75 * 0.25 * math.log(2))
    assert ce_loss(0.0, 1) == pytest.approx(math.log(2))
    assert p_t(3.0, -1) == pytest.approx(1 / (1 + math.exp(3)))


@given(logits, labels)
def test_gamma_zero_alpha_half_is_half_ce(x, y):
    assert focal_loss(x, y, FocalParams(0.0, 0.5)) == pytest.approx(0.5 * ce_loss(x, y), rel=1e-12, abs=0)


@given(logits, labels, st.floats(0, 5), st.floats(0, 1))
def test_focal_never_exceeds_weighted_ce(x, y, gamma, alpha):
    at = alpha if y == 1 else 1 - alpha
    assert 0.0 <= focal_loss(x, y, FocalParams(gamma, alpha)) <= at * ce_loss(x, y) * (1 + 1e-12)


@given(st.floats(-1e3, 1e3), labels, st.floats(0, 5))
def test_finite_over_wide_range(x, y, gamma):
    loss, grad = focal_loss_and_grad(x, y, FocalParams(gamma, 0.25))
    assert math.isfinite(loss) and math.isfinite(grad)


def test_confident_correct_has_tiny_loss():
    assert focal_loss(40.0, 1, FocalParams()) < 1e-30
    assert ce_loss(-800.0, -1) == 0.0


@given(st.floats(-20, 20), labels, st.sampled_from([0.0, 0.5, 1.0, 2.0, 5.0]), st.sampled_from([0.25, 0.5, 0.75]))
def test_gradient_matches_central_difference(x, y, gamma, alpha):
    params = FocalParams(gamma, alpha)
    h = 1e-5 * max(1.0, abs(x))
    fd = (focal_loss(x + h, y, params) - focal_loss(x - h, y, params)) / (2 * h)
    g = focal_grad(x, y, params)
    assert g == pytest.approx(fd, rel=1e-5, abs=1e-12)


def test_gradient_sign():
    # positive label pushes the logit up, negative pushes it down
    assert focal_grad(0.0, 1, FocalParams()) < 0 < focal_grad(0.0, -1, FocalParams())


def test_vectorised_matches_scalar():
    xs = np.linspace(-10, 10, 21)
    ys = np.where(np.arange(21) % 2, 1, -1)
    vec = focal_loss(xs, ys, FocalParams())
    assert np.allclose(vec, [focal_loss(float(x), int(y), FocalParams()) for x, y in zip(xs, ys)], rtol=1e-15)


def test_labels_must_be_signed():
    with pytest.raises(ValueError):
        focal_loss(0.0, 0, FocalParams())


def test_prior_bias():
    assert prior_bias(0.5) == 0.0
    assert sigmoid(prior_bias(0.01)) == pytest.approx(0.01, abs=1e-15)
    assert prior_bias(0.01) == pytest.approx(-math.log(99))
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            prior_bias(bad)


def test_params_validation():
    with pytest.raises(ValueError):
        FocalParams(gamma=-1)
    with pytest.raises(ValueError):
        FocalParams(alpha=1.5)
    with pytest.raises(ValueError):
        FocalParams(prior=1.0)
    assert FocalParams().in_robust_region
    assert not FocalParams(gamma=0.0, alpha=0.75).in_robust_region


def test_batch_loss_normalises_by_positives():
    samples = [LossSample(0.0, 1), LossSample(0.0, -1), LossSample(0.0, -1)]
    p = FocalParams(0.0, 0.5)
    assert batch_loss(samples, p) == pytest.approx(1.5 * math.log(2))
    assert batch_loss(samples, p, normalizer=3) == pytest.approx(0.5 * math.log(2))
    # no positives: normaliser floors at one
    assert batch_loss([LossSample(0.0, -1)], p) == pytest.approx(0.5 * math.log(2))
    assert batch_loss([], p) == 0.0
    assert positive_normalizer([-1, -1]) == 1.0
    with pytest.raises(ValueError):
        batch_loss(samples, p, normalizer=0)
