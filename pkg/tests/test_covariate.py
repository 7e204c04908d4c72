import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codeal.covariate import (CovariateModel, adjust, fit_covariates, fit_covariates_dnn,
                              fit_covariates_linear, no_adjustment)
from codeal.errors import InvalidConfig, NoControlUnits, RankDeficientDesign, ShapeMismatch
from codeal.nn import TrainConfig
from codeal.panel import PanelDataset
from codeal.simulation import DgpConfig, generate


def panel_from(Y, X, W=None):
    Y = np.asarray(Y, float)
    return PanelDataset(Y, np.zeros(Y.shape, np.int8) if W is None else W, X)


def test_dnn_recovers_linear_effect():
    X = np.random.default_rng(0).standard_normal((100, 1))
    Y = np.repeat(3 * X, 6, axis=1)
    model = fit_covariates_dnn(panel_from(Y, X))
    assert float(np.mean(adjust(panel_from(Y, X), model) ** 2)) < 1e-2
    grid = np.linspace(-1.5, 1.5, 7)[:, None]
    np.testing.assert_allclose(model.predict(grid), np.repeat(3 * grid, 6, axis=1), atol=0.3)


def test_dnn_uses_controls_only():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 2))
    Y = rng.standard_normal((30, 4))
    W = np.zeros((30, 4), np.int8)
    W[20:, 2:] = 1
    cfg = TrainConfig(epochs=30)
    a = fit_covariates_dnn(panel_from(Y, X, W), hidden=(8,), config=cfg)
    Y2 = Y.copy()
    Y2[20:, 2:] += 100.0
    b = fit_covariates_dnn(panel_from(Y2, X, W), hidden=(8,), config=cfg)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_none_is_identity():
    rng = np.random.default_rng(1)
    p = panel_from(rng.standard_normal((5, 7)), rng.standard_normal((5, 2)))
    model = fit_covariates(p, "none")
    np.testing.assert_array_equal(adjust(p, model), p.Y)
    assert not model.predict(p.X).any()


def test_tanh_variance_reduction():
    # compared on the untreated outcomes: the treatment shift is not a covariate effect
    wins = 0
    for seed in range(10):
        sim = generate(DgpConfig(N=40, T=30, N1=20, T1=15, P=3, K=4, covariate_kind="tanh", seed=seed))
        p = sim.panel
        model = fit_covariates_dnn(p, config=TrainConfig(weight_decay=0.1, epochs=200))
        untreated = p.Y - sim.tau[:, None] * p.W
        wins += (untreated - model.predict(p.X)).var() < untreated.var()
    assert wins >= 9


def test_linear_exact_interpolation():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((20, 3))
    u = np.array([1.0, -2.0, 0.5])
    Y = np.repeat((X @ u)[:, None], 5, axis=1)
    model = fit_covariates_linear(panel_from(Y, X))
    np.testing.assert_allclose(model.models[:, 1:], np.tile(u, (5, 1)), atol=1e-10)
    np.testing.assert_allclose(model.models[:, 0], 0.0, atol=1e-10)


def test_linear_collinear_design():
    x = np.arange(6.0)
    X = np.column_stack([x, 2 * x])
    with pytest.raises(RankDeficientDesign):
        fit_covariates_linear(panel_from(np.ones((6, 3)), X))
    fit_covariates_linear(panel_from(np.ones((6, 3)), X), ridge=0.1)


def test_linear_matches_pseudo_inverse():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((50, 3))
    Y = rng.standard_normal((50, 4))
    W = np.zeros((50, 4), np.int8)
    W[35:, 2:] = 1
    model = fit_covariates_linear(panel_from(Y, X, W))
    D = np.column_stack([np.ones(50), X])
    for t in range(4):
        rows = W[:, t] == 0
        np.testing.assert_allclose(model.models[t], np.linalg.pinv(D[rows]) @ Y[rows, t], atol=1e-8)


def test_linear_decomposition_oracle():
    sim = generate(DgpConfig(N=30, T=20, N1=15, T1=10, covariate_kind="matrix_linear", noise_sd=0.0, seed=4))
    factor_free = sim.panel.with_outcomes(sim.covariate)
    model = fit_covariates_linear(factor_free)
    np.testing.assert_allclose(adjust(factor_free, model), 0.0, atol=1e-8)


@given(st.integers(0, 10 ** 6), st.sampled_from(["linear", "dnn", "none"]))
@settings(max_examples=15, deadline=None)
def test_adjust_is_invertible(seed, kind):
    rng = np.random.default_rng(seed)
    p = panel_from(rng.standard_normal((12, 5)), rng.standard_normal((12, 2)))
    model = fit_covariates(p, kind, hidden=(4,), config=TrainConfig(epochs=3))
    np.testing.assert_allclose(adjust(p, model) + model.predict(p.X), p.Y, atol=1e-12)


def test_constant_prediction():
    Y = np.arange(12.0).reshape(3, 4)
    model = CovariateModel("linear", 4, 1, models=np.tile([2.5, 0.0], (4, 1)))
    np.testing.assert_array_equal(adjust(panel_from(Y, np.ones((3, 1))), model), Y - 2.5)


def test_errors():
    p = panel_from(np.ones((4, 3)), np.ones((4, 1)))
    with pytest.raises(ShapeMismatch):
        adjust(panel_from(np.ones((4, 5)), np.ones((4, 1))), no_adjustment(p))
    with pytest.raises(ShapeMismatch):
        fit_covariates_linear(panel_from(np.arange(12.0).reshape(4, 3), np.arange(4.0)[:, None])).predict(np.ones((2, 3)))
    W = np.zeros((4, 3), np.int8)
    W[:, 2] = 1
    with pytest.raises(NoControlUnits):
        fit_covariates_linear(panel_from(np.ones((4, 3)), np.arange(4.0)[:, None], W))
    with pytest.raises(InvalidConfig):
        fit_covariates(panel_from(np.ones((4, 3)), np.zeros((4, 0))), "linear")
    with pytest.raises(InvalidConfig):
        fit_covariates(p, "spline")


def test_shared_trunk_and_threads():
    rng = np.random.default_rng(5)
    p = panel_from(rng.standard_normal((20, 4)), rng.standard_normal((20, 2)))
    cfg = TrainConfig(epochs=5)
    shared = fit_covariates_dnn(p, hidden=(4,), config=cfg, shared_trunk=True)
    assert shared.predict(p.X).shape == (20, 4)
    a = fit_covariates_dnn(p, hidden=(4,), config=cfg)
    b = fit_covariates_dnn(p, hidden=(4,), config=cfg, threads=3)
    np.testing.assert_array_equal(a.predict(p.X), b.predict(p.X))
