import numpy as np
import pytest
from hypothesis import given, strategies as st

from focaldet.analysis import (NEGATIVE, POSITIVE, TABLE_GRID, CdfCurve, cdf_curves, collect_losses, curves_to_csv,
                               hardest_share, ks_distance, loss_cdf, pair_grid, sample_anchors, sweep,
                               sweep_to_csv)
from focaldet.detector import ToyModel, TrainConfig
from focaldet.focal import FocalParams
from focaldet.synth import SceneConfig, gen_dataset
from test_detector import perfect_model

losses = st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=200).filter(lambda v: sum(v) > 0)


def test_cdf_hand_example():
    c = loss_cdf([2, 1, 1])
    assert c.points == pytest.approx([(1 / 3, 0.25), (2 / 3, 0.5), (1.0, 1.0)])


def test_uniform_losses_give_the_diagonal():
    c = loss_cdf([3.0] * 8)
    assert np.allclose(c.cum_loss_fraction, c.sample_fraction)


def test_dominant_loss_jumps_at_the_end():
    c = loss_cdf([0.001] * 999 + [100])
    assert c.cum_loss_fraction[-2] == pytest.approx(0.999 / 100.999)
    assert c.points[-1] == (1.0, 1.0)


@given(losses)
def test_cdf_is_monotone_and_ends_at_one(values):
    c = loss_cdf(values)
    assert np.all(np.diff(c.cum_loss_fraction) >= 0)
    assert np.all(np.diff(c.sample_fraction) > 0)
    assert c.points[-1] == (1.0, 1.0)
    assert np.all((c.cum_loss_fraction >= 0) & (c.cum_loss_fraction <= 1))


def test_cdf_errors():
    with pytest.raises(ValueError):
        loss_cdf([])
    with pytest.raises(ValueError):
        loss_cdf([0.0, 0.0])
    with pytest.raises(ValueError):
        loss_cdf([1.0, -1.0])


def test_hardest_share_examples():
    assert hardest_share([1.0] * 10, 0.2) == pytest.approx(0.2)
    assert hardest_share([0, 0, 0, 10], 0.25) == 1.0
    # ceil: 0.3 of 4 samples is 2 samples
    assert hardest_share([1, 2, 3, 4], 0.3) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        hardest_share([], 0.5)
    with pytest.raises(ValueError):
        hardest_share([1.0], 0.0)


@given(losses, st.floats(0.01, 1))
def test_hardest_share_agrees_with_cdf(values, frac):
    c = loss_cdf(values)
    k = int(np.ceil(frac * len(values) - 1e-9))
    before = 0.0 if k == len(values) else c.cum_loss_fraction[len(values) - k - 1]
    assert hardest_share(values, frac) == pytest.approx(1 - before, abs=1e-9)


def test_ks_distance():
    a = loss_cdf([1.0] * 4)
    b = loss_cdf([0, 0, 0, 1.0])
    assert ks_distance(a, b) == pytest.approx(0.75)
    assert ks_distance(a, a) == 0.0
    # different sample counts are compared on the union grid
    assert ks_distance(loss_cdf([1.0] * 3), loss_cdf([1.0] * 6)) == pytest.approx(1 / 6)


def test_resample_and_csv():
    c = loss_cdf(np.arange(1, 11, dtype=float), gamma=2.0, group=POSITIVE)
    r = c.resample(5)
    assert r.sample_fraction.tolist() == pytest.approx([0.2, 0.4, 0.6, 0.8, 1.0])
    assert r.cum_loss_fraction[1] == pytest.approx(10 / 55)
    text = curves_to_csv([c], n_points=5).splitlines()
    assert text[0] == "gamma,group,sample_fraction,cum_loss_fraction"
    assert text[-1] == "2,positive,1.000000,1.000000000"


SMALL = SceneConfig(image_width=96, image_height=96, n_objects=2, min_size=16, max_size=48, seed=3)


def test_sampling_sizes_flags_and_determinism():
    grid = SMALL.default_grid()
    scenes = gen_dataset(SMALL, 3, grid)
    model = ToyModel.init(SMALL.feature_dim, 4, 0.01, seed=1)
    s1 = sample_anchors(model, scenes, grid, n_neg=500, n_pos=5, seed=4)
    s2 = sample_anchors(model, scenes, grid, n_neg=500, n_pos=5, seed=4)
    assert s1.neg_logits.shape == (500, 4) and s1.pos_logits.shape == (5, 4)
    assert np.array_equal(s1.neg_logits, s2.neg_logits) and s1.complete
    big = sample_anchors(model, scenes, grid, n_neg=10**6, n_pos=10**4, seed=4)
    assert not big.complete and not big.pos_complete and not big.neg_complete
    assert big.pos_logits.shape[0] == big.pos_available
    # every positive row carries exactly one +1 label
    assert np.all((big.pos_labels == 1).sum(axis=1) == 1)
    assert np.all(big.neg_labels == -1)


def test_sample_is_uniform_over_the_stream():
    grid = SMALL.default_grid()
    scenes = gen_dataset(SMALL, 4, grid)
    model = ToyModel.init(SMALL.feature_dim, 4, 0.01, seed=1)
    # with zero-weight init every logit is equal, so tag rows by their feature sum instead
    per_scene = sum(1 for _ in scenes)
    counts = np.zeros(per_scene)
    for seed in range(40):
        s = sample_anchors(ToyModel({**model.params, "w_cls": np.ones((SMALL.feature_dim, 4))}, SMALL.feature_dim, 4, 0),
                           scenes, grid, n_neg=200, n_pos=1, seed=seed)
        totals = [sc.features.sum(axis=1) for sc in scenes]
        for row in s.neg_logits[:, 0]:
            counts[[np.any(np.isclose(t, row - model.params["b_cls"][0], atol=1e-9)) for t in totals].index(True)] += 1
    # four equal-sized scenes: each should receive about a quarter of the draws
    assert np.all(np.abs(counts / counts.sum() - 0.25) < 0.05)


def test_perfect_model_positive_losses_are_tiny():
    cfg = SceneConfig(seed=8, noise_sigma=0.0)
    grid = cfg.default_grid()
    pos, neg, _ = collect_losses(perfect_model(cfg, gain=1000.0, iou_cut=0.45), gen_dataset(cfg, 2, grid), grid, FocalParams(), n_neg=1000,
                                 n_pos=10**4, seed=0)
    # forced low-IoU matches are the only positives the threshold model can miss
    assert np.mean(pos < 1e-6) > 0.9


def test_cdf_curves_cover_groups_and_gammas():
    grid = SMALL.default_grid()
    model = ToyModel.init(SMALL.feature_dim, 4, 0.01, seed=1)
    s = sample_anchors(model, gen_dataset(SMALL, 2, grid), grid, 100, 5, seed=0)
    curves = cdf_curves(s, [0.0, 2.0])
    assert [(c.gamma, c.group) for c in curves] == [(0.0, POSITIVE), (0.0, NEGATIVE), (2.0, POSITIVE), (2.0, NEGATIVE)]


def test_pair_grid():
    assert pair_grid([0, 1], [0.5]) == [(0, 0.5), (1, 0.5)]
    assert pair_grid([0, 1], [0.75, 0.25]) == [(0, 0.75), (1, 0.25)]
    with pytest.raises(ValueError):
        pair_grid([0, 1, 2], [0.1, 0.2])
    with pytest.raises(ValueError):
        pair_grid([], [0.5])
    assert [g for g, _ in TABLE_GRID] == [0, 0.1, 0.2, 0.5, 1, 2, 5]


def test_single_cell_sweep_and_diverged_cell():
    grid = SMALL.default_grid()
    data = gen_dataset(SMALL, 3, grid)
    held = gen_dataset(SMALL, 2, grid, start=100)
    base = TrainConfig(total_iterations=100, lr_drop_iterations=())
    rows = sweep([2.0], [0.25], base, data, held, grid)
    assert len(rows) == 1 and rows[0].map is not None and rows[0].status == "completed"
    with np.errstate(all="ignore"):
        bad = sweep([0.0], [0.5], TrainConfig(total_iterations=50, lr_drop_iterations=(), base_lr=1e30, momentum=0.0),
                    data, held, grid)
    assert bad[0].diverged
    text = sweep_to_csv(rows + bad).splitlines()
    assert text[0] == "gamma,alpha,map"
    assert text[2] == "0,0.5,diverged"
