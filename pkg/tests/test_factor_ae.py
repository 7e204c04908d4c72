from dataclasses import replace

import numpy as np
import pytest

from codeal.errors import DimensionMismatch, EmptyControlSet, InvalidConfig
from codeal.factor_ae import (AEConfig, control_stats, fit_multi_output_ae, fit_single_output_ae, init_ae,
                              permuted)
from codeal.nn import TrainConfig
from codeal.panel import four_block_indicator
from codeal.simulation import DgpConfig, generate


def quick(epochs=300, seed=0, **kw):
    return AEConfig(train=TrainConfig(learning_rate=3e-3, epochs=epochs, batch_size=32, seed=seed), **kw)


def test_rank_one_held_out():
    rng = np.random.default_rng(0)
    lam, f = rng.uniform(0.5, 1.5, 30), rng.standard_normal(60)
    Y = np.outer(lam, f)
    W = four_block_indicator(30, 60, 20, 40)
    ae = fit_multi_output_ae(Y, W, 1, quick(600))
    held = W == 1
    assert float(np.mean((ae.reconstruct(Y, W) - Y)[held] ** 2)) < 1e-2


def test_constant_panel():
    Y = np.full((8, 20), 3.5)
    W = four_block_indicator(8, 20, 4, 10)
    ae = fit_multi_output_ae(Y, W, 1, quick(50))
    assert float(np.mean((ae.reconstruct(Y, W) - 3.5) ** 2)) < 1e-4
    assert ae.predict_cell(Y[:, 15], 6, W[:, 15]) == pytest.approx(3.5, abs=1e-2)


def test_zero_panel():
    Y = np.zeros((5, 30))
    ae = fit_single_output_ae(Y, np.zeros((5, 30)), 2, quick(20))
    assert ae.losses[-1] < 1e-10


def two_unit_panel(seed):
    f = np.random.default_rng(seed).standard_normal(50)
    return np.vstack([2 * f, -f]), np.zeros((2, 50))


@pytest.mark.parametrize("seed", range(5))
def test_multi_beats_single_on_heterogeneous_units(seed):
    Y, W = two_unit_panel(seed)
    cfg = quick(200, seed)
    multi = fit_multi_output_ae(Y, W, 1, cfg)
    single = fit_single_output_ae(Y, W, 1, cfg)
    assert single.losses[-1] > multi.losses[-1]
    assert single.train_mse > multi.train_mse


def test_homogeneous_units_similar_losses():
    rng = np.random.default_rng(1)
    f = rng.standard_normal(80)
    Y = np.tile(np.sin(2 * f), (10, 1)) + 0.3 * rng.standard_normal((10, 80))
    W = np.zeros(Y.shape)
    cfg = quick(300)
    multi = fit_multi_output_ae(Y, W, 1, cfg).losses[-1]
    single = fit_single_output_ae(Y, W, 1, cfg).losses[-1]
    assert abs(multi - single) <= 0.1 * max(multi, single)


def test_predict_cell_matches_reconstruction():
    rng = np.random.default_rng(2)
    Y = rng.standard_normal((6, 25))
    W = four_block_indicator(6, 25, 3, 15)
    ae = fit_multi_output_ae(Y, W, 2, quick(100))
    R = ae.reconstruct(Y, W)
    for i, t in [(0, 0), (4, 20), (5, 14)]:
        assert ae.predict_cell(Y[:, t], i, W[:, t]) == pytest.approx(R[i, t], abs=1e-12)
    ctrl = W == 0
    resid = (R - Y)[ctrl]
    assert abs(R[0, 3] - Y[0, 3]) < 5 * np.sqrt(ae.train_mse) + 1e-9
    assert ae.train_mse == pytest.approx(float(np.mean(resid ** 2)))
    with pytest.raises(DimensionMismatch):
        ae.predict_cell(Y[:4, 0], 0)
    with pytest.raises(DimensionMismatch):
        ae.predict_cell(Y[:, 0], 6)
    with pytest.raises(DimensionMismatch):
        ae.reconstruct(Y[:5])


def test_standardization_round_trip():
    rng = np.random.default_rng(3)
    Y = rng.standard_normal((7, 40))
    W = np.zeros(Y.shape)
    Y = (Y - Y.mean(axis=1, keepdims=True)) / Y.std(axis=1, keepdims=True)
    center, scale = control_stats(Y, W)
    np.testing.assert_allclose(center, 0.0, atol=1e-12)
    np.testing.assert_allclose(scale, 1.0, atol=1e-12)
    ae = fit_multi_output_ae(Y, W, 2, quick(30))
    raw = ae.decoders.forward(ae.encoder.forward(Y.T))[:, :, 0].T
    np.testing.assert_allclose(ae.reconstruct(Y, W), raw, atol=1e-8)


def test_control_stats_ignores_treated_cells():
    Y = np.array([[1.0, 3.0, 100.0], [2.0, 2.0, 2.0]])
    W = np.array([[0, 0, 1], [0, 0, 0]])
    center, scale = control_stats(Y, W)
    np.testing.assert_allclose(center, [2.0, 2.0])
    np.testing.assert_allclose(scale, [1.0, 1.0])


@pytest.mark.parametrize("mode", ["masked", "controls"])
def test_treated_values_never_reach_the_loss(mode):
    rng = np.random.default_rng(4)
    Y = rng.standard_normal((10, 30))
    W = four_block_indicator(10, 30, 6, 20)
    poisoned = np.where(W == 1, 1e6, Y)
    cfg = quick(40, encoder_input=mode)
    a = fit_multi_output_ae(Y, W, 2, cfg)
    b = fit_multi_output_ae(poisoned, W, 2, cfg)
    assert a.losses == b.losses
    np.testing.assert_array_equal(a.reconstruct(Y, W), b.reconstruct(poisoned, W))


def test_full_encoder_sees_treated_values_but_targets_do_not():
    # same encoder inputs, poisoned targets: only possible through the mask
    rng = np.random.default_rng(5)
    Y = rng.standard_normal((10, 30))
    W = four_block_indicator(10, 30, 6, 20)
    cfg = quick(40)
    a = fit_multi_output_ae(Y, W, 2, cfg)
    b = fit_multi_output_ae(np.where(W == 1, Y + 50.0, Y), W, 2, cfg)
    assert a.losses != b.losses


def test_permutation_equivariance():
    rng = np.random.default_rng(6)
    Y = rng.standard_normal((8, 30))
    W = four_block_indicator(8, 30, 5, 20)
    perm = rng.permutation(8)
    cfg = quick(60)
    center, scale = control_stats(Y, W)
    start = init_ae(8, 2, cfg, seed=11, center=center, scale=scale)
    a = fit_multi_output_ae(Y, W, 2, cfg, initial=start)
    b = fit_multi_output_ae(Y[perm], W[perm], 2, cfg, initial=permuted(start, perm))
    np.testing.assert_allclose(a.losses, b.losses, rtol=1e-9)
    np.testing.assert_allclose(a.reconstruct(Y, W)[perm], b.reconstruct(Y[perm], W[perm]), atol=1e-8)


def test_sine_multi_not_worse_than_single():
    wins = 0
    for seed in range(10):
        sim = generate(DgpConfig(N=60, T=100, N1=30, T1=50, K=4, factor_kind="sine", seed=seed))
        p = sim.panel
        untreated = p.Y - sim.tau[:, None] * p.W
        treated = p.W == 1
        errs = [np.mean((fit(p.Y, p.W, 4).reconstruct(p.Y, p.W) - untreated)[treated] ** 2)
                for fit in (fit_multi_output_ae, fit_single_output_ae)]
        wins += errs[0] <= errs[1]
    assert wins >= 8


def test_errors():
    with pytest.raises(EmptyControlSet):
        fit_multi_output_ae(np.ones((3, 4)), np.ones((3, 4)), 1)
    with pytest.raises(DimensionMismatch):
        fit_multi_output_ae(np.ones((3, 4)), np.zeros((3, 5)), 1)
    with pytest.raises(InvalidConfig):
        fit_multi_output_ae(np.ones((3, 4)), np.zeros((3, 4)), 1, replace(quick(1), encoder_input="half"))
    W = np.ones((3, 4))
    W[:, 0] = 0
    with pytest.raises(EmptyControlSet):
        fit_multi_output_ae(np.ones((3, 4)), W, 1, quick(1, encoder_input="controls"))


def test_shapes_and_determinism():
    rng = np.random.default_rng(7)
    Y = rng.standard_normal((9, 20))
    W = four_block_indicator(9, 20, 5, 12)
    a = fit_multi_output_ae(Y, W, 3, quick(10))
    b = fit_multi_output_ae(Y, W, 3, quick(10))
    assert a.k1 == 3 and a.n_units == 9 and a.decoders.heads == 9
    assert a.encode(Y, W).shape == (20, 3)
    np.testing.assert_array_equal(a.reconstruct(Y, W), b.reconstruct(Y, W))
    single = fit_single_output_ae(Y, W, 3, quick(10))
    assert single.shared and single.reconstruct(Y, W).shape == (9, 20)
