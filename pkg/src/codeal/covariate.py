"""Removal of time-varying covariate effects ``g_t(X_i)``.

Three kinds of model share one interface:

* ``dnn``: one ReLU network per period, fit on that period's control units.
* ``linear``: per-period least squares with an intercept; periods in which
  every unit is untreated pool all units, others use controls only (the two
  coincide, since the controls of an untreated period are all units).
* ``none``: the identity adjustment.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidConfig, NoControlUnits, RankDeficientDesign, ShapeMismatch
from .nn import TrainConfig, init_dense, train
from .seeding import derive_seed

KINDS = ("dnn", "linear", "none")

# Per-period fits see at most N points and a target dominated by the factor
# component, so the networks are trained with a strong L2 penalty.
COVARIATE_TRAIN = TrainConfig(weight_decay=0.1)


@dataclass
class CovariateModel:
    kind: str
    n_periods: int
    n_covariates: int
    models: list = field(default_factory=list)
    x_center: Optional[np.ndarray] = None
    x_scale: Optional[np.ndarray] = None
    y_center: Optional[np.ndarray] = None
    y_scale: Optional[np.ndarray] = None
    shared_trunk: bool = False
    losses: list = field(default_factory=list)

    def predict(self, X):
        """Matrix of fitted effects ``G[i, t] = g_t(X_i)``."""
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        if self.kind == "none":
            return np.zeros((n, self.n_periods))
        if X.ndim != 2 or X.shape[1] != self.n_covariates:
            raise ShapeMismatch(f"model expects {self.n_covariates} covariates, got {X.shape}")
        if self.kind == "linear":
            coef = np.asarray(self.models)  # (T, P + 1), intercept first
            return coef[:, 0][None, :] + X @ coef[:, 1:].T
        Xs = (X - self.x_center) / self.x_scale
        if self.shared_trunk:
            net = self.models[0]
            grid = np.linspace(0.0, 1.0, self.n_periods) if self.n_periods > 1 else np.zeros(1)
            inp = np.concatenate([np.repeat(Xs, self.n_periods, axis=0),
                                  np.tile(grid, n)[:, None]], axis=1)
            G = net.forward(inp)[:, 0].reshape(n, self.n_periods)
        else:
            G = np.column_stack([net.forward(Xs)[:, 0] for net in self.models])
        return G * self.y_scale + self.y_center


def _controls(W, t):
    ctrl = np.asarray(W)[:, t] == 0
    if not ctrl.any():
        raise NoControlUnits(t)
    return ctrl


def _scale(v, axis=0):
    center = v.mean(axis=axis)
    scale = v.std(axis=axis)
    return center, np.where(scale > 1e-12, scale, 1.0)


def fit_covariates_dnn(panel, hidden=(32, 32), config=COVARIATE_TRAIN, shared_trunk=False,
                       threads=1):
    """Fit ``g_t`` per period by a ReLU network on that period's control units."""
    P = panel.n_covariates
    T = panel.n_periods
    if P == 0:
        raise InvalidConfig("covariate removal requested but the panel has no covariates")
    Y, W = panel.Y, panel.W
    ctrl = [_controls(W, t) for t in range(T)]
    x_center, x_scale = _scale(panel.X)
    Xs = (panel.X - x_center) / x_scale
    y_center = np.array([Y[c, t].mean() for t, c in enumerate(ctrl)])
    y_scale = np.array([_scale(Y[c, t])[1] for t, c in enumerate(ctrl)])
    model = CovariateModel("dnn", T, P, x_center=x_center, x_scale=x_scale,
                           y_center=y_center, y_scale=y_scale, shared_trunk=shared_trunk)
    dims = (P,) + tuple(hidden) + (1,)

    if shared_trunk:
        # one network over (X_i, t / (T - 1)); per-period target standardization kept
        grid = np.linspace(0.0, 1.0, T) if T > 1 else np.zeros(1)
        inp = np.concatenate([np.repeat(Xs, T, axis=0), np.tile(grid, panel.n_units)[:, None]], axis=1)
        target = ((Y - y_center) / y_scale).reshape(-1)
        mask = (W == 0).reshape(-1)
        net = init_dense((P + 1,) + tuple(hidden) + (1,), seed=derive_seed(config.seed, "cov-shared"))
        net, trace = train(net, inp, target, mask, config.with_seed(derive_seed(config.seed, "cov-shared-batches")))
        model.models = [net]
        model.losses = [trace[-1]]
        return model

    def fit_one(t):
        c = ctrl[t]
        target = (Y[c, t] - y_center[t]) / y_scale[t]
        net = init_dense(dims, seed=derive_seed(config.seed, "cov-init", t))
        net, trace = train(net, Xs[c], target, None, config.with_seed(derive_seed(config.seed, "cov-batches", t)))
        return net, trace[-1]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            fitted = list(pool.map(fit_one, range(T)))
    else:
        fitted = [fit_one(t) for t in range(T)]
    model.models = [f[0] for f in fitted]
    model.losses = [f[1] for f in fitted]
    return model


def fit_covariates_linear(panel, ridge=0.0):
    """Per-period least squares of ``Y_it`` on ``(1, X_i)``.

    The intercept is never penalized. With ``ridge == 0`` a rank-deficient
    design raises ``RankDeficientDesign``.
    """
    P = panel.n_covariates
    T = panel.n_periods
    if P == 0:
        raise InvalidConfig("covariate removal requested but the panel has no covariates")
    if ridge < 0:
        raise InvalidConfig("ridge penalty must be non-negative")
    Y, W = panel.Y, panel.W
    design = np.column_stack([np.ones(panel.n_units), panel.X])
    penalty = ridge * np.diag(np.r_[0.0, np.ones(P)])
    coefs = []
    for t in range(T):
        c = _controls(W, t)  # every unit when period t is untreated
        D = design[c]
        if ridge == 0 and np.linalg.matrix_rank(D) < P + 1:
            raise RankDeficientDesign(f"period {t}: covariate design is rank deficient")
        gram = D.T @ D + penalty
        coefs.append(np.linalg.solve(gram, D.T @ Y[c, t]))
    return CovariateModel("linear", T, P, models=np.array(coefs))


def no_adjustment(panel):
    return CovariateModel("none", panel.n_periods, panel.n_covariates)


def fit_covariates(panel, kind, hidden=(32, 32), config=COVARIATE_TRAIN, ridge=0.0,
                   shared_trunk=False, threads=1):
    if kind == "dnn":
        return fit_covariates_dnn(panel, hidden, config, shared_trunk, threads)
    if kind == "linear":
        return fit_covariates_linear(panel, ridge)
    if kind == "none":
        return no_adjustment(panel)
    raise InvalidConfig(f"unknown covariate removal {kind!r}; choose from {KINDS}")


def adjust(panel, model):
    """Covariate-adjusted outcomes ``Y_it - g_t(X_i)`` on every cell, treated ones included."""
    if model.n_periods != panel.n_periods:
        raise ShapeMismatch(f"model covers {model.n_periods} periods, panel has {panel.n_periods}")
    if model.kind == "none":
        return np.array(panel.Y, dtype=float)
    return panel.Y - model.predict(panel.X)
