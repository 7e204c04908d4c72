"""Autoencoder factor models for covariate-adjusted panels.

A column ``Y~_{.t}`` of the adjusted panel is the encoder input, the encoder
emits a ``k1``-dimensional code, and decoder ``i`` maps the code to the
prediction for unit ``i``. The multi-output model has one decoder per unit;
the single-output benchmark shares a single decoder across units.

Inputs are standardized per unit with the mean and standard deviation of that
unit's control entries, and decoder outputs are mapped back with the same
statistics. Training minimizes the squared error over control cells only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptyControlSet, InvalidConfig, NonFiniteLoss
from .nn import INF, Adam, DenseBank, DenseNet, TrainConfig, init_bank, init_dense, minibatches, project_max_norm
from .seeding import derive_seed

ENCODER_INPUTS = ("full", "masked", "controls")


@dataclass(frozen=True)
class AEConfig:
    k1: Optional[int] = None  # bottleneck width; falls back to the factor dimension K
    encoder_hidden: tuple = (64,)
    decoder_hidden: tuple = (8,)
    encoder_input: str = "full"  # "full", "masked" (treated entries zeroed) or "controls"
    clamp: float = INF
    weight_bound: float = INF
    train: TrainConfig = TrainConfig(learning_rate=3e-3, epochs=400, batch_size=32,
                                      weight_decay=1e-3)

    def bottleneck(self, k):
        return int(self.k1 if self.k1 is not None else k)


@dataclass
class FactorAE:
    encoder: DenseNet
    decoders: DenseBank
    center: np.ndarray
    scale: np.ndarray
    encoder_input: str = "full"
    encoder_rows: Optional[np.ndarray] = None
    losses: list = field(default_factory=list)
    train_mse: float = math.nan

    @property
    def n_units(self):
        return len(self.center)

    @property
    def k1(self):
        return self.encoder.dims[-1]

    @property
    def shared(self):
        return self.decoders.heads == 1 and self.n_units > 1

    def _inputs(self, Yt, W=None):
        S = (np.asarray(Yt, dtype=float) - self.center[:, None]) / self.scale[:, None]
        if self.encoder_input == "masked" and W is not None:
            S = np.where(np.asarray(W) == 0, S, 0.0)
        elif self.encoder_input == "controls":
            S = S[self.encoder_rows]
        return S

    def _decode(self, z):
        out = self.decoders.forward(z)[:, :, 0]
        if out.shape[1] != self.n_units:
            out = np.broadcast_to(out, (z.shape[0], self.n_units))
        return out

    def encode(self, Yt, W=None):
        """Codes for every column of ``Yt``; shape ``(T, k1)``."""
        return self.encoder.forward(self._inputs(Yt, W).T)

    def reconstruct(self, Yt, W=None):
        """Decoder predictions for every cell, in the original outcome scale."""
        Yt = np.asarray(Yt, dtype=float)
        if Yt.ndim != 2 or Yt.shape[0] != self.n_units:
            raise DimensionMismatch(f"panel with {self.n_units} units expected, got {Yt.shape}")
        out = self._decode(self.encode(Yt, W)).T
        return out * self.scale[:, None] + self.center[:, None]

    def predict_cell(self, column, i, treated=None):
        column = np.asarray(column, dtype=float)
        if column.shape != (self.n_units,):
            raise DimensionMismatch(f"column of length {self.n_units} expected, got {column.shape}")
        if not 0 <= i < self.n_units:
            raise DimensionMismatch(f"unit index {i} out of range")
        W = None if treated is None else np.asarray(treated)[:, None]
        return float(self.reconstruct(column[:, None], W)[i, 0])


def control_stats(Yt, W):
    """Per-unit mean and sd over control entries; sd 1 where undefined or zero."""
    ctrl = np.asarray(W) == 0
    counts = ctrl.sum(axis=1)
    safe = np.maximum(counts, 1)
    center = np.where(ctrl, Yt, 0.0).sum(axis=1) / safe
    var = np.where(ctrl, (Yt - center[:, None]) ** 2, 0.0).sum(axis=1) / safe
    scale = np.sqrt(var)
    scale = np.where((counts > 1) & (scale > 1e-12), scale, 1.0)
    return center, scale


def init_ae(n_units, k1, config=AEConfig(), shared=False, seed=0, center=None, scale=None,
            encoder_rows=None):
    if config.encoder_input not in ENCODER_INPUTS:
        raise InvalidConfig(f"encoder_input must be one of {ENCODER_INPUTS}")
    if config.encoder_input == "controls":
        if encoder_rows is None or len(encoder_rows) == 0:
            raise EmptyControlSet("controls-only encoder needs at least one never-treated row")
        d_in = len(encoder_rows)
    else:
        encoder_rows = None
        d_in = n_units
    enc = init_dense((d_in,) + tuple(config.encoder_hidden) + (k1,),
                     seed=derive_seed(seed, "ae-encoder"), clamp=INF, weight_bound=config.weight_bound)
    heads = 1 if shared else n_units
    dec = init_bank(heads, (k1,) + tuple(config.decoder_hidden) + (1,),
                    seed=derive_seed(seed, "ae-decoders"), clamp=config.clamp,
                    weight_bound=config.weight_bound)
    center = np.zeros(n_units) if center is None else center
    scale = np.ones(n_units) if scale is None else scale
    return FactorAE(enc, dec, center, scale, config.encoder_input, encoder_rows)


def _clone(ae):
    dec = ae.decoders
    return FactorAE(ae.encoder.copy(),
                    DenseBank([m.copy() for m in dec.weights], [b.copy() for b in dec.biases],
                              dec.clamp, dec.weight_bound),
                    ae.center.copy(), ae.scale.copy(), ae.encoder_input,
                    None if ae.encoder_rows is None else ae.encoder_rows.copy())


def _fit(Yt, W, k1, config, shared, initial=None):
    Yt = np.asarray(Yt, dtype=float)
    W = np.asarray(W)
    if Yt.ndim != 2 or W.shape != Yt.shape:
        raise DimensionMismatch(f"Y~ {Yt.shape} and W {W.shape} must be matching matrices")
    ctrl = W == 0
    if not ctrl.any():
        raise EmptyControlSet("no untreated cells to train on")
    n, t = Yt.shape
    tc = config.train
    if initial is None:
        center, scale = control_stats(Yt, W)
        never = np.flatnonzero(ctrl.all(axis=1))
        ae = init_ae(n, k1, config, shared, tc.seed, center, scale, never)
    else:
        ae = _clone(initial)

    # samples are columns; fully treated columns carry no loss
    cols = np.flatnonzero(ctrl.any(axis=0))
    inputs = ae._inputs(Yt, W).T[cols]
    targets = ((Yt - ae.center[:, None]) / ae.scale[:, None]).T[cols]
    mask = ctrl.T[cols].astype(float)

    enc, dec = ae.encoder, ae.decoders
    params = enc.params() + dec.params()
    opt = Adam(params, tc.learning_rate, tc.adam_betas, tc.adam_eps, tc.weight_decay)
    rng = np.random.default_rng(derive_seed(tc.seed, "ae-batches"))
    batch = tc.resolved_batch(len(cols))
    n_enc = len(enc.params())
    total_count = mask.sum()
    trace = []
    for _ in range(tc.epochs):
        epoch_loss = 0.0
        for idx in minibatches(rng, len(cols), batch):
            mb = mask[idx]
            count = mb.sum()
            if count == 0:
                continue
            z = enc.forward(inputs[idx], keep=True)
            out = dec.forward(z, keep=True)[:, :, 0]
            resid = (out - targets[idx]) * mb
            loss = float((resid ** 2).sum() / count)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"autoencoder loss became {loss}")
            epoch_loss += loss * count
            g = 2.0 * resid / count
            if ae.shared:
                g = g.sum(axis=1, keepdims=True)
            gw_d, gb_d, gz = dec.backward(g[:, :, None], need_input_grad=True)
            gw_e, gb_e = enc.backward(gz)
            opt.step(gw_e + gb_e + gw_d + gb_d)
            project_max_norm(params[:n_enc], enc.weight_bound)
            project_max_norm(params[n_enc:], dec.weight_bound)
        trace.append(epoch_loss / total_count)
    enc._trace = dec._trace = None
    ae.losses = trace
    fitted = ae.reconstruct(Yt, W)
    ae.train_mse = float(np.mean((fitted - Yt)[ctrl] ** 2))
    return ae


def fit_multi_output_ae(Yt, W, k1, config=AEConfig(), initial=None):
    """Jointly fit the shared encoder and one decoder per unit on the control cells."""
    return _fit(Yt, W, k1, config, shared=False, initial=initial)


def fit_single_output_ae(Yt, W, k1, config=AEConfig(), initial=None):
    """Benchmark variant: one decoder shared by every unit."""
    return _fit(Yt, W, k1, config, shared=True, initial=initial)


def permuted(ae, perm):
    """Relabel units: unit ``k`` of the result is unit ``perm[k]`` of ``ae``."""
    perm = np.asarray(perm)
    out = _clone(ae)
    if ae.encoder_input == "controls":
        inverse = np.argsort(perm)
        out.encoder_rows = np.sort(inverse[ae.encoder_rows])
        order = np.argsort(inverse[ae.encoder_rows])
        out.encoder.weights[0] = out.encoder.weights[0][:, order]
    else:
        out.encoder.weights[0] = out.encoder.weights[0][:, perm]
    if ae.decoders.heads > 1:
        out.decoders.weights = [m[perm] for m in out.decoders.weights]
        out.decoders.biases = [b[perm] for b in out.decoders.biases]
    out.center = ae.center[perm]
    out.scale = ae.scale[perm]
    return out
