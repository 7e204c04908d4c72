"""Reference imputation methods: difference-in-differences, vertical
regression and nuclear-norm matrix completion (soft-impute).

The two four-block methods take a ``FourBlockView`` and return the imputed
D region, shape ``(N - N1, T - T1)``. An alternative outcome matrix of the
view's shape (for example the covariate-adjusted one) may be passed as ``Y``.
MC-NNM works on any observation pattern and returns a full matrix.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (EmptyRegion, InsufficientPrePeriods, InvalidConfig, NoObservedCells,
                     NonConvergence, RankDeficientDesign)
from .seeding import substream


def _regions(view, Y):
    Y = np.asarray(view.Y if Y is None else Y, dtype=float)
    if Y.shape != view.shape:
        raise InvalidConfig(f"outcome matrix {Y.shape} does not match view {view.shape}")
    n1, t1 = view.n_control, view.n_pre
    n, t = Y.shape
    if n1 == 0 or t1 == 0 or n1 == n or t1 == t:
        raise EmptyRegion(f"four-block regions are empty (N1={n1}, T1={t1}, shape={Y.shape})")
    return Y, n1, t1


def did_impute(view, Y=None):
    """Two-way additive imputation of the D block.

    ``Y_hat[i, t] = mean_pre(Y_i) + mean_controls(Y_t) - mean(A)``.
    """
    Y, n1, t1 = _regions(view, Y)
    unit_pre = Y[n1:, :t1].mean(axis=1)
    control_post = Y[:n1, t1:].mean(axis=0)
    return unit_pre[:, None] + control_post[None, :] - Y[:n1, :t1].mean()


def _design(controls):
    """Intercept plus one column per control unit; rows are periods."""
    return np.column_stack([np.ones(controls.shape[1]), controls.T])


def _ridge_solve(D, targets, lam):
    penalty = np.diag(np.r_[0.0, np.ones(D.shape[1] - 1)])
    return np.linalg.solve(D.T @ D + lam * penalty, D.T @ targets)


def ridge_grid(controls_pre):
    """Scale-adaptive penalty grid from the centered control design."""
    centered = controls_pre - controls_pre.mean(axis=1, keepdims=True)
    scale = float((centered ** 2).sum()) / max(controls_pre.shape[0], 1)
    if not scale > 0:
        scale = 1.0
    return scale * np.logspace(-4, 2, 13)


def loo_ridge(D, targets, grid):
    """Penalty minimizing the closed-form leave-one-period-out error."""
    penalty = np.diag(np.r_[0.0, np.ones(D.shape[1] - 1)])
    best, best_score = grid[0], math.inf
    for lam in grid:
        try:
            H = D @ np.linalg.solve(D.T @ D + lam * penalty, D.T)
        except np.linalg.LinAlgError:
            continue
        lev = 1.0 - np.diag(H)
        if np.any(lev < 1e-10):
            continue
        resid = (targets - H @ targets) / lev[:, None]
        score = float(np.mean(resid ** 2))
        if score < best_score:
            best, best_score = lam, score
    return float(best)


def vertical_regression_fit(view, ridge=None, Y=None):
    """Coefficients ``(N1 + 1, N - N1)`` (intercept first) and the penalty used."""
    Y, n1, t1 = _regions(view, Y)
    if t1 < 2:
        raise InsufficientPrePeriods(f"vertical regression needs at least 2 pre-periods, got {t1}")
    D = _design(Y[:n1, :t1])
    targets = Y[n1:, :t1].T
    if ridge is None:
        ridge = loo_ridge(D, targets, ridge_grid(Y[:n1, :t1]))
    if ridge < 0:
        raise InvalidConfig("ridge penalty must be non-negative")
    if ridge == 0 and np.linalg.matrix_rank(D) < D.shape[1]:
        raise RankDeficientDesign(
            f"{n1} control units and {t1} pre-periods: unpenalized design is rank deficient")
    return _ridge_solve(D, targets, ridge), float(ridge)


def vertical_regression_impute(view, ridge=None, Y=None):
    """Predict each treated unit from contemporaneous control outcomes.

    With ``ridge=None`` the penalty is chosen by leave-one-out over the
    pre-periods, pooled across the treated units of the view.
    """
    beta, _ = vertical_regression_fit(view, ridge, Y)
    Y, n1, t1 = _regions(view, Y)
    return (_design(Y[:n1, t1:]) @ beta).T


@dataclass
class SoftImputeState:
    low_rank: np.ndarray
    row_effects: np.ndarray
    col_effects: np.ndarray
    lam: float
    iterations: int = 0
    rel_change: float = math.inf
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: list = field(default_factory=list)
    converged: bool = False

    def fitted(self):
        return self.low_rank + self.row_effects[:, None] + self.col_effects[None, :]


def shrink(Z, lam):
    """Singular-value soft-thresholding; returns the matrix and its singular values."""
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    s = np.maximum(s - lam, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep], s


def _masked_means(R, obs):
    counts = obs.sum(axis=1)
    return np.where(obs, R, 0.0).sum(axis=1) / np.maximum(counts, 1)


def objective(Y, obs, state):
    resid = np.where(obs, Y - state.fitted(), 0.0)
    return 0.5 * float((resid ** 2).sum()) + state.lam * float(state.singular_values.sum())


def soft_impute(Y, obs, lam, fixed_effects=True, tol=1e-5, max_iter=500, initial=None):
    """Minimize ``0.5 * ||P_obs(Y - L - a 1' - 1 b')||^2 + lam * ||L||_*``.

    Block coordinate descent: exact updates of the effects, then one
    majorize-minimize step on ``L``. Every step is non-increasing in the
    objective, which is recorded after each iteration.
    """
    Y = np.asarray(Y, dtype=float)
    obs = np.asarray(obs, dtype=bool)
    n, t = Y.shape
    if initial is None:
        state = SoftImputeState(np.zeros((n, t)), np.zeros(n), np.zeros(t), float(lam))
    else:
        state = SoftImputeState(initial.low_rank.copy(), initial.row_effects.copy(),
                                initial.col_effects.copy(), float(lam),
                                singular_values=np.linalg.svd(initial.low_rank, compute_uv=False))
    Yo = np.where(obs, Y, 0.0)
    previous = state.fitted()
    for it in range(1, max_iter + 1):
        if fixed_effects:
            state.row_effects = _masked_means(Yo - state.low_rank - state.col_effects[None, :], obs)
            state.col_effects = _masked_means((Yo - state.low_rank - state.row_effects[:, None]).T, obs.T)
        R = Yo - state.row_effects[:, None] - state.col_effects[None, :]
        state.low_rank, state.singular_values = shrink(np.where(obs, R, state.low_rank), state.lam)
        current = state.fitted()
        state.objective.append(objective(Y, obs, state))
        state.rel_change = float(np.linalg.norm(current - previous) / max(np.linalg.norm(previous), 1e-12))
        state.iterations = it
        previous = current
        if state.rel_change < tol:
            state.converged = True
            break
    return state


@dataclass
class MCNNMFit:
    imputed: np.ndarray
    state: SoftImputeState
    lambdas: np.ndarray
    validation_mse: np.ndarray


def lambda_grid(Y, obs, fixed_effects=True, count=10):
    """Log-spaced penalties from ``0.5`` down to ``1e-4`` times the top
    singular value of the zero-filled (and effect-centered) observed matrix."""
    R = np.where(obs, Y, 0.0)
    if fixed_effects:
        a = _masked_means(R, obs)
        b = _masked_means((R - a[:, None]).T, obs.T)
        R = np.where(obs, R - a[:, None] - b[None, :], 0.0)
    top = float(np.linalg.norm(R, 2))
    if not top > 0:
        top = 1.0
    return top * np.geomspace(0.5, 1e-4, count)


def continuation(Y, obs, lam, fixed_effects=True, steps=10):
    """Decreasing penalties ending at ``lam``; small penalties converge
    very slowly from a cold start."""
    top = lambda_grid(Y, obs, fixed_effects, 2)[0]
    if lam >= top or lam <= 0:
        return [lam]
    return list(np.geomspace(top, lam, steps))


def mc_nnm_impute(Y, W, lambdas=None, fixed_effects=True, tol=1e-5, max_iter=500, seed=0,
                  holdout=0.1):
    """Nuclear-norm matrix completion of the cells with ``W == 1``.

    With more than one candidate penalty, a seed-derived ``holdout`` share
    of observed cells is masked, each penalty is fitted on the rest (warm
    started along a decreasing path) and the penalty with the smallest
    validation error is refitted on every observed cell.
    """
    Y = np.asarray(Y, dtype=float)
    obs = np.asarray(W) == 0
    if not obs.any():
        raise NoObservedCells("matrix completion needs at least one observed cell")
    if tol <= 0:
        raise InvalidConfig("tol must be positive")
    grid = lambda_grid(Y, obs, fixed_effects) if lambdas is None else np.atleast_1d(np.asarray(lambdas, float))
    grid = np.sort(grid)[::-1]
    scores = np.full(len(grid), np.nan)
    best = 0
    if len(grid) > 1:
        cells = np.flatnonzero(obs.ravel())
        n_val = min(max(1, int(round(holdout * len(cells)))), len(cells) - 1)
        if n_val >= 1:
            picked = substream(seed, "mc-nnm-holdout").choice(cells, n_val, replace=False)
            val = np.zeros(obs.size, dtype=bool)
            val[picked] = True
            val = val.reshape(obs.shape)
            train_obs = obs & ~val
            state = None
            for lam in continuation(Y, train_obs, grid[0], fixed_effects)[:-1]:
                state = soft_impute(Y, train_obs, lam, fixed_effects, tol, max_iter, state)
            for k, lam in enumerate(grid):
                state = soft_impute(Y, train_obs, lam, fixed_effects, tol, max_iter, state)
                scores[k] = float(np.mean((state.fitted() - Y)[val] ** 2))
            best = int(np.nanargmin(scores))
    # the objective is convex, so the warm-started path only affects speed
    state = None
    for lam in continuation(Y, obs, grid[best], fixed_effects):
        state = soft_impute(Y, obs, lam, fixed_effects, tol, max_iter, state)
    if not state.converged:
        warnings.warn(NonConvergence(max_iter), stacklevel=2)
    return MCNNMFit(np.where(obs, Y, state.fitted()), state, grid, scores)
