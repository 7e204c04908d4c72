"""Synthetic panels with known counterfactuals, error metrics and replicated runs."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InvalidConfig, NoTreatedCells
from .estimator import EstimatorConfig, run_estimator
from .panel import PanelDataset, four_block_indicator
from .seeding import substream

FACTOR_KINDS = ("linear", "sine", "polynomial", "relu_mlp")
COVARIATE_KINDS = ("none", "matrix_linear", "vector_linear", "tanh", "poly", "log", "relu")
DESIGNS = ("four_block", "staggered")

MLP_HIDDEN = 10
COV_RELU_HIDDEN = 32


@dataclass(frozen=True)
class DgpConfig:
    N: int = 100
    T: int = 200
    N1: int = 50
    T1: int = 100
    P: int = 3
    K: int = 4
    design: str = "four_block"
    r: int = 2
    factor_kind: str = "linear"
    covariate_kind: str = "none"
    noise_sd: float = 0.5
    tau_mean: float = 12.0
    tau_spread: float = 5.0
    tau_spread_is_variance: bool = True
    constants_per: str = "unit"  # C1, C2 drawn per unit, or "dataset" for one draw per panel
    seed: int = 0

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise InvalidConfig(f"design must be one of {DESIGNS}, got {self.design!r}")
        if self.factor_kind not in FACTOR_KINDS:
            raise InvalidConfig(f"factor kind must be one of {FACTOR_KINDS}, got {self.factor_kind!r}")
        if self.covariate_kind not in COVARIATE_KINDS:
            raise InvalidConfig(f"covariate kind must be one of {COVARIATE_KINDS}, got {self.covariate_kind!r}")
        if self.constants_per not in ("dataset", "unit"):
            raise InvalidConfig("constants_per must be 'dataset' or 'unit'")
        if min(self.N, self.T, self.K) < 1 or self.P < 0:
            raise InvalidConfig("N, T, K must be positive and P non-negative")
        if self.design == "four_block" and not (0 < self.N1 < self.N and 0 < self.T1 < self.T):
            raise InvalidConfig("four-block design needs 0 < N1 < N and 0 < T1 < T")
        if self.design == "staggered" and not (2 <= self.r <= min(self.N, self.T)):
            raise InvalidConfig("staggered design needs 2 <= r <= min(N, T)")
        if self.covariate_kind != "none" and self.P == 0:
            raise InvalidConfig(f"covariate kind {self.covariate_kind!r} needs P >= 1")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


PRESETS = {
    "config1": DgpConfig(N=100, T=200, N1=50, T1=100, P=3, K=4),
    "config2": DgpConfig(N=200, T=120, N1=100, T1=60, P=5, K=3),
    "config3": DgpConfig(N=100, T=120, P=3, K=4, design="staggered", r=5),
    "config4": DgpConfig(N=200, T=120, P=3, K=3, design="staggered", r=5),
}


@dataclass(frozen=True)
class SimulatedPanel:
    panel: PanelDataset
    factor: np.ndarray     # phi_i(F_t)
    covariate: np.ndarray  # g_t(X_i)
    tau: np.ndarray        # per-unit effect, defined for every unit
    noise: np.ndarray

    @property
    def untreated(self):
        """Noise-free counterfactual ``Y(0) - eps``."""
        return self.factor + self.covariate


def equal_split(total, parts):
    base, extra = divmod(total, parts)
    return [base + (1 if k < extra else 0) for k in range(parts)]


def staggered_indicator(N, T, r):
    """Groups of units adopting at successive segment boundaries; group 1 never adopts."""
    sizes = equal_split(N, r)
    lengths = equal_split(T, r)
    row_edges = np.concatenate([[0], np.cumsum(sizes)])
    col_edges = np.concatenate([[0], np.cumsum(lengths)])
    W = np.zeros((N, T), dtype=np.int8)
    for xi in range(2, r + 1):
        start = col_edges[r + 1 - xi]  # first period of segment r + 2 - xi
        W[row_edges[xi - 1]:row_edges[xi], start:] = 1
    return W


def treatment_pattern(cfg):
    if cfg.design == "four_block":
        return four_block_indicator(cfg.N, cfg.T, cfg.N1, cfg.T1)
    return staggered_indicator(cfg.N, cfg.T, cfg.r)


def _constants(cfg, name):
    rng = substream(cfg.seed, "constants", name)
    if cfg.constants_per == "dataset":
        return float(rng.standard_normal())
    return rng.standard_normal(cfg.N)[:, None]


def factor_effect(cfg, F, Lam):
    kind = cfg.factor_kind
    if kind == "linear":
        return 0.5 * _constants(cfg, "C1") * (Lam @ F.T)
    if kind == "sine":
        return 2.0 * _constants(cfg, "C1") * np.sin(Lam @ F.T)
    if kind == "polynomial":
        quad = np.einsum("tk,tk->t", F, F)[None, :]
        return 0.2 * _constants(cfg, "C1") * (Lam @ F.T) + 0.2 * _constants(cfg, "C2") * quad
    # per-unit one-hidden-layer ReLU map of the factors
    rng = substream(cfg.seed, "factor-mlp")
    h = MLP_HIDDEN
    R1 = rng.normal(0.0, 0.5, (cfg.N, h, cfg.K))
    b1 = rng.normal(0.0, 0.5, (cfg.N, h))
    R2 = rng.normal(0.0, 0.5, (cfg.N, h))
    b2 = rng.normal(0.0, 0.5, cfg.N)
    hidden = np.maximum(np.einsum("ihk,tk->ith", R1, F) + b1[:, None, :], 0.0)
    return np.einsum("ith,ih->it", hidden, R2) + b2[:, None]


def covariate_effect(cfg, X):
    kind = cfg.covariate_kind
    N, T, P = cfg.N, cfg.T, cfg.P
    if kind == "none":
        return np.zeros((N, T))
    rng = substream(cfg.seed, "covariate-weights")
    if kind == "matrix_linear":
        U = rng.normal(1.0, 1.0, (P, T))
        return X @ U
    if kind == "vector_linear":
        U = rng.normal(1.0, 1.0, P)
        return np.repeat((X @ U)[:, None], T, axis=1)
    if kind in ("tanh", "poly", "log"):
        w = rng.standard_normal((P, T))
        b = rng.standard_normal(T)
        lin = X @ w
        if kind == "tanh":
            return np.sqrt(np.tanh(np.abs(lin))) + b
        if kind == "poly":
            return np.sqrt(np.abs(lin)) + b
        return np.log(np.abs(lin + b))
    # relu: independent two-layer map per period
    h = COV_RELU_HIDDEN
    R1 = rng.normal(0.0, math.sqrt(2.0 / P), (T, P, h))
    b1 = rng.normal(0.0, 1.0, (T, h))
    R2 = rng.normal(0.0, math.sqrt(2.0 / h), (T, h))
    b2 = rng.normal(0.0, 1.0, T)
    hidden = np.maximum(np.einsum("ip,tph->ith", X, R1) + b1[None, :, :], 0.0)
    return np.einsum("ith,th->it", hidden, R2) + b2[None, :]


def generate(cfg):
    """Draw one panel. Every random object has its own named substream, so
    changing the factor or covariate kind leaves the other draws untouched."""
    X = substream(cfg.seed, "X").standard_normal((cfg.N, cfg.P))
    F = substream(cfg.seed, "F").standard_normal((cfg.T, cfg.K))
    Lam = substream(cfg.seed, "Lambda").standard_normal((cfg.N, cfg.K))
    sd = math.sqrt(cfg.tau_spread) if cfg.tau_spread_is_variance else cfg.tau_spread
    tau = substream(cfg.seed, "tau").normal(cfg.tau_mean, sd, cfg.N)
    noise = substream(cfg.seed, "eps").normal(0.0, 1.0, (cfg.N, cfg.T)) * cfg.noise_sd
    W = treatment_pattern(cfg)
    factor = factor_effect(cfg, F, Lam)
    cov = covariate_effect(cfg, X)
    Y = factor + cov + tau[:, None] * W + noise
    panel = PanelDataset(Y, W, X,
                         tuple(f"u{i:03d}" for i in range(cfg.N)),
                         tuple(f"t{t:03d}" for t in range(cfg.T)))
    return SimulatedPanel(panel, factor, cov, tau, noise)


def metrics(panel, tau_true, Y0):
    """MAE and MSE of the implied cell effects against the true unit effects."""
    treated = panel.W.astype(bool)
    if not treated.any():
        raise NoTreatedCells("metrics need at least one treated cell")
    tau_true = np.asarray(tau_true, dtype=float)
    err = (panel.Y - np.asarray(Y0, dtype=float) - tau_true[:, None])[treated]
    return float(np.abs(err).mean()), float((err ** 2).mean())


RESULT_COLUMNS = ("estimator", "covariateRemoval", "factorKind", "covariateKind", "config", "R",
                  "maeMean", "maeSe", "mseMean", "mseSe")


def mean_se(values):
    """Mean and standard error ``sd / sqrt(R)``; the error is None when R == 1."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()), None
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


@dataclass
class ResultRow:
    estimator: str
    covariate_removal: str
    factor_kind: str
    covariate_kind: str
    config: str
    mae: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    att: list = field(default_factory=list)  # per-unit ATT of every replication

    @property
    def R(self):
        return len(self.mae)

    def summary(self):
        mae_mean, mae_se = mean_se(self.mae)
        mse_mean, mse_se = mean_se(self.mse)
        return {"estimator": self.estimator, "covariateRemoval": self.covariate_removal,
                "factorKind": self.factor_kind, "covariateKind": self.covariate_kind,
                "config": self.config, "R": self.R, "maeMean": mae_mean, "maeSe": mae_se,
                "mseMean": mse_mean, "mseSe": mse_se}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


@dataclass
class ExperimentResult:
    dgp: DgpConfig
    config_name: str
    rows: list

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in self.rows:
            s = row.summary()
            w.writerow([_fmt(s[c]) for c in RESULT_COLUMNS])
        return buf.getvalue()

    def to_json(self, extra=None):
        doc = {"config": {"name": self.config_name, "dgp": asdict(self.dgp)},
               "estimators": {f"{r.estimator}/{r.covariate_removal}": {k: r.summary()[k] for k in
                              ("maeMean", "maeSe", "mseMean", "mseSe", "R")} for r in self.rows},
               "perUnitAtt": {f"{r.estimator}/{r.covariate_removal}": r.att[0] if r.att else []
                              for r in self.rows}}
        if extra:
            doc["config"].update(extra)
        return json.dumps(doc, indent=2, sort_keys=True)


def parse_estimator(entry):
    """``"codeal/dnn"`` or ``("codeal", "dnn")`` to an (estimator, removal) pair."""
    if isinstance(entry, str):
        name, _, removal = entry.partition("/")
        return name.strip(), (removal.strip() or "none")
    name, removal = entry
    return name, removal


def run_experiment(config, estimators, R, base=None, config_name="custom", threads=1):
    """Replicate ``generate`` + every estimator ``R`` times.

    Replication ``k`` uses seed ``config.seed + k``; estimators share the
    replication's panel, so comparisons are paired. ``base`` supplies the
    estimator hyperparameters (an ``EstimatorConfig``).
    """
    if R < 1:
        raise InvalidConfig("replications R must be at least 1")
    base = EstimatorConfig() if base is None else base
    pairs = [parse_estimator(e) for e in estimators]
    cfgs = [replace(base, estimator=name, covariate_removal=removal,
                    k=base.k if base.k is not None else config.K, threads=1)
            for name, removal in pairs]

    def replicate(k):
        rep = config.with_seed(config.seed + k)
        sim = generate(rep)
        out = []
        for cfg in cfgs:
            result = run_estimator(sim.panel, cfg.with_seed(rep.seed))
            out.append(metrics(sim.panel, sim.tau, result.counterfactuals)
                       + ([None if math.isnan(v) else float(v) for v in result.att.per_unit],))
        return out

    if threads > 1 and R > 1:
        with ThreadPoolExecutor(threads) as pool:
            reps = list(pool.map(replicate, range(R)))
    else:
        reps = [replicate(k) for k in range(R)]

    rows = [ResultRow(name, removal, config.factor_kind, config.covariate_kind, config_name)
            for name, removal in pairs]
    for rep in reps:
        for row, (mae, mse, att) in zip(rows, rep):
            row.mae.append(mae)
            row.mse.append(mse)
            row.att.append(att)
    return ExperimentResult(config, config_name, rows)
