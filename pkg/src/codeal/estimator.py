"""Counterfactual imputation for four-block and staggered adoption panels.

The covariate model is fitted once on the whole panel. Each treated block
``(xi0, eta0)`` then gets its own four-block subpanel in which the whole D
region is treated as missing, an imputation method fills D, and only the
target block is written back. Subproblems read observed data and the global
covariate fit only, so their order does not matter.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import baselines
from .covariate import KINDS as REMOVALS
from .covariate import COVARIATE_TRAIN, fit_covariates
from .errors import CodealError, InvalidConfig, InvalidStaggeredPanel, SubproblemError, UnknownEstimator
from .factor_ae import AEConfig, fit_multi_output_ae, fit_single_output_ae
from .nn import TrainConfig
from .panel import AttEstimate, att_from_imputation, build_four_block, extract_block_partition, validate_and_sort
from .seeding import derive_seed

ESTIMATORS = ("codeal", "single-ae", "did", "vert-reg", "mc-nnm")
AE_ESTIMATORS = ("codeal", "single-ae")


@dataclass(frozen=True)
class EstimatorConfig:
    estimator: str = "codeal"
    covariate_removal: str = "dnn"
    k: Optional[int] = None  # factor dimension, needed by the autoencoders
    ae: AEConfig = AEConfig()
    covariate_hidden: tuple = (32, 32)
    covariate_train: TrainConfig = COVARIATE_TRAIN
    covariate_ridge: float = 0.0
    vr_ridge: Optional[float] = None  # None selects by leave-one-out
    mc_lambdas: Optional[tuple] = None
    mc_fixed_effects: bool = True
    mc_tol: float = 1e-5
    mc_max_iter: int = 500
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise UnknownEstimator(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")
        if self.covariate_removal not in REMOVALS:
            raise InvalidConfig(f"unknown covariate removal {self.covariate_removal!r}; choose from {REMOVALS}")
        if self.threads < 1:
            raise InvalidConfig("threads must be at least 1")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


@dataclass
class ImputationResult:
    """Imputed untreated outcomes in the caller's unit order.

    ``provenance[i, t]`` is 0 for observed cells and ``k + 1`` for cells
    imputed by ``subproblems[k]``.
    """

    counterfactuals: np.ndarray
    provenance: np.ndarray
    subproblems: list
    att: AttEstimate
    diagnostics: dict = field(default_factory=dict)
    estimator: str = "codeal"
    covariate_removal: str = "none"

    def source(self, i, t):
        k = int(self.provenance[i, t])
        return "observed" if k == 0 else self.subproblems[k - 1]


def _needs_k(config):
    k = config.ae.k1 if config.ae.k1 is not None else config.k
    if k is None or k < 1:
        raise InvalidConfig("autoencoder estimators need a positive factor dimension k")
    return int(k)


def impute_view(view, Yt, G, config, seed):
    """Impute the D block of one four-block view.

    ``Yt`` is the covariate-adjusted view and ``G`` the fitted covariate
    effects on the view; the returned block is on the original outcome scale
    together with a diagnostics dict.
    """
    n1, t1 = view.n_control, view.n_pre
    kind = config.estimator
    diag = {"rows": len(view.rows), "cols": len(view.cols), "k1": view.k1, "k2": view.k2}
    if kind in AE_ESTIMATORS:
        ae_cfg = replace(config.ae, train=config.ae.train.with_seed(seed))
        fit = fit_multi_output_ae if kind == "codeal" else fit_single_output_ae
        ae = fit(Yt, view.W, _needs_k(config), ae_cfg)
        block = ae.reconstruct(Yt, view.W)[n1:, t1:]
        diag.update(final_loss=ae.losses[-1] if ae.losses else None, train_mse=ae.train_mse)
    elif kind == "did":
        block = baselines.did_impute(view, Yt)
    elif kind == "vert-reg":
        beta, lam = baselines.vertical_regression_fit(view, config.vr_ridge, Yt)
        block = (baselines._design(Yt[:n1, t1:]) @ beta).T
        diag.update(ridge=lam)
    else:
        fit = baselines.mc_nnm_impute(Yt, view.W, config.mc_lambdas, config.mc_fixed_effects,
                                      config.mc_tol, config.mc_max_iter, seed)
        block = fit.imputed[n1:, t1:]
        diag.update(lam=fit.state.lam, iterations=fit.state.iterations, converged=fit.state.converged)
    return block + G[n1:, t1:], diag


def impute_four_block(view, covariate_model, k=None, ae_config=AEConfig(), seed=0, estimator="codeal"):
    """Impute the whole D region of ``view``: adjust with the covariate model,
    fill D on the adjusted scale and add the covariate effects back."""
    G = covariate_model.predict(view.X)[:, view.cols]
    config = EstimatorConfig(estimator=estimator, covariate_removal=covariate_model.kind, k=k,
                             ae=ae_config, seed=seed)
    block, _ = impute_view(view, view.Y - G, G, config, seed)
    return block


def codeal_staggered(panel, config=EstimatorConfig(), covariate_model=None):
    """Impute every treated cell of a staggered panel block by block.

    The panel may come in any unit order; it is sorted internally and the
    result is mapped back. A pre-fitted covariate model may be supplied to
    skip the covariate stage.
    """
    try:
        ordered, perm = validate_and_sort(panel)
        partition = extract_block_partition(ordered.W)
    except CodealError as exc:
        if isinstance(exc, InvalidStaggeredPanel):
            raise
        raise InvalidStaggeredPanel(str(exc)) from exc

    if config.estimator in AE_ESTIMATORS:
        _needs_k(config)
    removal = config.covariate_removal
    if covariate_model is None:
        covariate_model = fit_covariates(
            ordered, removal, hidden=config.covariate_hidden,
            config=config.covariate_train.with_seed(derive_seed(config.seed, "covariate")),
            ridge=config.covariate_ridge, threads=config.threads)
    G = covariate_model.predict(ordered.X)
    Yt = ordered.Y - G

    Y0 = np.where(ordered.W == 0, ordered.Y, np.nan)
    provenance = np.zeros(ordered.shape, dtype=np.int32)
    blocks = partition.subproblems()

    def solve(block):
        xi0, eta0 = block
        try:
            view = build_four_block(ordered, partition, xi0, eta0)
            sub_seed = derive_seed(config.seed, "subproblem", xi0, eta0)
            D, diag = impute_view(view, view.take(Yt), view.take(G), config, sub_seed)
        except CodealError as exc:
            raise SubproblemError(block, exc) from exc
        return view, D, diag

    if config.threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            solved = list(pool.map(solve, blocks))
    else:
        solved = [solve(b) for b in blocks]

    diagnostics = {}
    for k, (block, (view, D, diag)) in enumerate(zip(blocks, solved), start=1):
        rows, cols = view.target_rows, view.target_cols
        rs, cs = view.target_in_d()
        Y0[rows.start:rows.stop, cols.start:cols.stop] = D[rs, cs]
        provenance[rows.start:rows.stop, cols.start:cols.stop] = k
        diagnostics[block] = diag

    # back to the caller's unit order
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(len(perm))
    Y0 = Y0[inverse]
    provenance = provenance[inverse]
    return ImputationResult(
        counterfactuals=Y0,
        provenance=provenance,
        subproblems=list(blocks),
        att=att_from_imputation(panel, Y0),
        diagnostics=diagnostics,
        estimator=config.estimator,
        covariate_removal=covariate_model.kind,
    )


def run_estimator(panel, config=EstimatorConfig()):
    """Uniform entry point for CoDEAL and the baselines."""
    if isinstance(config, str):
        config = EstimatorConfig(estimator=config)
    if config.estimator not in ESTIMATORS:
        raise UnknownEstimator(f"unknown estimator {config.estimator!r}")
    return codeal_staggered(panel, config)
