"""Dense ReLU networks with hand-written reverse mode and an Adam optimizer.

Everything runs in float64 on numpy. Two network containers are provided:

``DenseNet``
    One affine/ReLU stack ``L_{L+1} o relu o L_L o ... o relu o L_1`` with an
    optional entrywise output truncation ``sgn(h) * min(|h|, B)`` and an
    optional max-norm bound ``C`` enforced on every weight and bias after each
    optimizer step.

``DenseBank``
    ``H`` independent networks with identical layer widths that read the same
    input. Parameters carry a leading head axis so that all heads are
    evaluated with one batched matrix product per layer. Used for the
    per-unit decoders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptyMask, NoForwardState, NonFiniteLoss, ZeroDimension

INF = math.inf


def _check_dims(dims):
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ZeroDimension("a network needs at least an input and an output dimension")
    if any(d < 1 for d in dims):
        raise ZeroDimension(f"all layer widths must be >= 1, got {dims}")
    return dims


def _he_uniform(rng, shape, fan_in):
    # U(-a, a) has variance a^2 / 3 = 2 / fan_in
    a = math.sqrt(6.0 / fan_in)
    return rng.uniform(-a, a, size=shape)


def _truncate(h, bound):
    if math.isinf(bound):
        return h
    return np.clip(h, -bound, bound)


class DenseNet:
    """Feed-forward ReLU network; no activation after the last affine map."""

    def __init__(self, weights, biases, clamp=INF, weight_bound=INF):
        if len(weights) != len(biases) or not weights:
            raise DimensionMismatch("need one bias per weight matrix")
        for k, (m, b) in enumerate(zip(weights, biases)):
            if m.ndim != 2 or b.shape != (m.shape[0],):
                raise DimensionMismatch(f"layer {k}: weight {m.shape} / bias {b.shape}")
            if k and m.shape[1] != weights[k - 1].shape[0]:
                raise DimensionMismatch(f"layer {k} expects {m.shape[1]} inputs, "
                                        f"previous layer emits {weights[k - 1].shape[0]}")
        self.weights = [np.asarray(m, dtype=float) for m in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.clamp = float(clamp)
        self.weight_bound = float(weight_bound)
        self._trace = None

    @property
    def dims(self):
        return (self.weights[0].shape[1],) + tuple(m.shape[0] for m in self.weights)

    @property
    def depth(self):
        """Number of hidden layers (``L``)."""
        return len(self.weights) - 1

    def params(self):
        return self.weights + self.biases

    def copy(self):
        return DenseNet([m.copy() for m in self.weights], [b.copy() for b in self.biases],
                        self.clamp, self.weight_bound)

    def forward(self, x, keep=False):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.ndim != 2 or a.shape[1] != self.dims[0]:
            raise DimensionMismatch(f"expected input of width {self.dims[0]}, got shape {x.shape}")
        acts = [a]
        n_layers = len(self.weights)
        for k, (m, b) in enumerate(zip(self.weights, self.biases)):
            h = a @ m.T + b
            if k < n_layers - 1:
                a = np.maximum(h, 0.0)
                acts.append(a)
            else:
                a = h
        out = _truncate(a, self.clamp)
        if keep:
            self._trace = (acts, a, single)
        return out[0] if single else out

    def backward(self, upstream):
        """Parameter gradients for the most recent ``forward(..., keep=True)``.

        Returns ``(weight_grads, bias_grads)`` summed over the batch.
        """
        if self._trace is None:
            raise NoForwardState("call forward(x, keep=True) before backward")
        acts, h_out, single = self._trace
        g = np.asarray(upstream, dtype=float)
        g = g[None, :] if single else g
        if g.shape != h_out.shape:
            raise DimensionMismatch(f"upstream gradient {g.shape} vs output {h_out.shape}")
        if not math.isinf(self.clamp):
            g = g * (np.abs(h_out) < self.clamp)
        n_layers = len(self.weights)
        gw = [None] * n_layers
        gb = [None] * n_layers
        for k in range(n_layers - 1, -1, -1):
            gw[k] = g.T @ acts[k]
            gb[k] = g.sum(axis=0)
            if k:
                g = (g @ self.weights[k]) * (acts[k] > 0)
        return gw, gb

    def input_grad(self, upstream):
        """Gradient with respect to the input of the recorded forward pass."""
        if self._trace is None:
            raise NoForwardState("call forward(x, keep=True) before input_grad")
        acts, h_out, single = self._trace
        g = np.asarray(upstream, dtype=float)
        g = g[None, :] if single else g
        if not math.isinf(self.clamp):
            g = g * (np.abs(h_out) < self.clamp)
        for k in range(len(self.weights) - 1, -1, -1):
            g = g @ self.weights[k]
            if k:
                g = g * (acts[k] > 0)
        return g[0] if single else g


def init_dense(dims, seed=0, clamp=INF, weight_bound=INF, rng=None):
    """He-uniform weights and zero biases; deterministic given ``seed``."""
    dims = _check_dims(dims)
    rng = np.random.default_rng(seed) if rng is None else rng
    weights = [_he_uniform(rng, (dims[k + 1], dims[k]), dims[k]) for k in range(len(dims) - 1)]
    biases = [np.zeros(d) for d in dims[1:]]
    net = DenseNet(weights, biases, clamp, weight_bound)
    project_max_norm(net.params(), weight_bound)
    return net


class DenseBank:
    """``H`` independent networks of identical widths evaluated on a shared input.

    ``forward`` maps ``(n, d0)`` to ``(n, H, d_out)``.
    """

    def __init__(self, weights, biases, clamp=INF, weight_bound=INF):
        self.weights = [np.asarray(m, dtype=float) for m in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        heads = {m.shape[0] for m in self.weights} | {b.shape[0] for b in self.biases}
        if len(heads) != 1:
            raise DimensionMismatch("all layers must share the same head count")
        self.clamp = float(clamp)
        self.weight_bound = float(weight_bound)
        self._trace = None

    @property
    def heads(self):
        return self.weights[0].shape[0]

    @property
    def dims(self):
        return (self.weights[0].shape[2],) + tuple(m.shape[1] for m in self.weights)

    def params(self):
        return self.weights + self.biases

    def head(self, j):
        """Extract head ``j`` as a standalone ``DenseNet``."""
        return DenseNet([m[j].copy() for m in self.weights], [b[j].copy() for b in self.biases],
                        self.clamp, self.weight_bound)

    def forward(self, z, keep=False):
        z = np.asarray(z, dtype=float)
        if z.ndim != 2 or z.shape[1] != self.dims[0]:
            raise DimensionMismatch(f"expected input of width {self.dims[0]}, got shape {z.shape}")
        # internal layout is (head, feature, sample) so bias adds broadcast over samples
        h = self.weights[0] @ z.T + self.biases[0][:, :, None]
        acts = [z]
        for m, b in zip(self.weights[1:], self.biases[1:]):
            a = np.maximum(h, 0.0)
            acts.append(a)
            h = m @ a + b[:, :, None]
        h = h.transpose(2, 0, 1)
        out = _truncate(h, self.clamp)
        if keep:
            self._trace = (acts, h)
        return out

    def backward(self, upstream, need_input_grad=False):
        """Gradients for the recorded forward pass; upstream has shape ``(n, H, d_out)``."""
        if self._trace is None:
            raise NoForwardState("call forward(z, keep=True) before backward")
        acts, h_out = self._trace
        g = np.asarray(upstream, dtype=float)
        if g.shape != h_out.shape:
            raise DimensionMismatch(f"upstream gradient {g.shape} vs output {h_out.shape}")
        if not math.isinf(self.clamp):
            g = g * (np.abs(h_out) < self.clamp)
        g = np.ascontiguousarray(g.transpose(1, 2, 0))  # (H, d, n)
        n_layers = len(self.weights)
        gw = [None] * n_layers
        gb = [None] * n_layers
        for k in range(n_layers - 1, 0, -1):
            a = acts[k]
            gw[k] = g @ a.transpose(0, 2, 1)
            gb[k] = g.sum(axis=2)
            m = self.weights[k]
            if m.shape[1] == 1:
                back = m.transpose(0, 2, 1) * g
            else:
                back = m.transpose(0, 2, 1) @ g
            g = back * (a > 0)
        H, d1, n = g.shape
        gw[0] = g @ acts[0]
        gb[0] = g.sum(axis=2)
        gin = None
        if need_input_grad:
            gin = g.reshape(H * d1, n).T @ self.weights[0].reshape(H * d1, -1)
        return gw, gb, gin


def init_bank(heads, dims, seed=0, clamp=INF, weight_bound=INF, rng=None):
    dims = _check_dims(dims)
    if heads < 1:
        raise ZeroDimension("a bank needs at least one head")
    rng = np.random.default_rng(seed) if rng is None else rng
    weights = [_he_uniform(rng, (heads, dims[k + 1], dims[k]), dims[k]) for k in range(len(dims) - 1)]
    biases = [np.zeros((heads, d)) for d in dims[1:]]
    bank = DenseBank(weights, biases, clamp, weight_bound)
    project_max_norm(bank.params(), weight_bound)
    return bank


def project_max_norm(params, bound):
    """Clip every parameter entry into ``[-bound, bound]`` in place."""
    if math.isinf(bound):
        return
    for p in params:
        np.clip(p, -bound, bound, out=p)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: Optional[int] = None  # None: full batch below 1024 samples, else 256
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    weight_decay: float = 0.0
    validation_fraction: float = 0.0  # > 0 holds samples out and keeps the best epoch
    patience: int = 50

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    def resolved_batch(self, n_samples):
        if self.batch_size is not None:
            return min(self.batch_size, n_samples)
        return n_samples if n_samples < 1024 else 256

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def minibatches(rng, n, batch):
    if batch >= n:
        yield np.arange(n)
        return
    order = rng.permutation(n)
    for start in range(0, n, batch):
        yield order[start:start + batch]


def train(net, inputs, targets, mask=None, config=TrainConfig()):
    """Minibatch Adam on mean squared error over the masked entries.

    ``mask`` may be ``None`` (all entries), a per-sample boolean vector, or a
    boolean array shaped like ``targets``. Returns a trained copy of ``net``
    and the per-epoch loss trace.
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{x.shape[0]} inputs vs {y.shape[0]} targets")
    if mask is None:
        m = np.ones(y.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.ndim == 1:
            m = np.broadcast_to(m[:, None], y.shape)
    if m.shape != y.shape:
        raise DimensionMismatch(f"mask {m.shape} vs targets {y.shape}")
    keep = m.any(axis=1)
    if not keep.any():
        raise EmptyMask("mask selects no samples")
    x, y, m = x[keep], y[keep], m[keep].astype(float)
    held = None
    n_val = int(round(config.validation_fraction * len(x)))
    if n_val >= 1 and len(x) - n_val >= 1:
        order = np.random.default_rng(config.seed).permutation(len(x))
        held = (x[order[:n_val]], y[order[:n_val]], m[order[:n_val]])
        x, y, m = x[order[n_val:]], y[order[n_val:]], m[order[n_val:]]

    net = net.copy()
    opt = Adam(net.params(), config.learning_rate, config.adam_betas, config.adam_eps,
               config.weight_decay)
    rng = np.random.default_rng(config.seed)
    batch = config.resolved_batch(len(x))
    trace = []
    best, best_loss, stale = net, math.inf, 0
    for _ in range(config.epochs):
        total = 0.0
        for idx in minibatches(rng, len(x), batch):
            xb, yb, mb = x[idx], y[idx], m[idx]
            count = mb.sum()
            if count == 0:
                continue
            pred = net.forward(xb, keep=True)
            resid = (pred - yb) * mb
            loss = float((resid ** 2).sum() / count)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss}")
            total += loss * count
            gw, gb = net.backward(2.0 * resid / count)
            opt.step(gw + gb)
            project_max_norm(net.params(), net.weight_bound)
        trace.append(total / m.sum())
        if held is not None:
            xv, yv, mv = held
            val = float((((net.forward(xv) - yv) * mv) ** 2).sum() / max(mv.sum(), 1.0))
            if val < best_loss:
                best, best_loss, stale = net.copy(), val, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    net._trace = None
    if held is not None:
        net = best
    return net, trace


def save_text(net, path):
    """Write ``net`` as text: dims line, bounds line, then one row-major array per line."""
    lines = [" ".join(str(d) for d in net.dims), f"{net.clamp!r} {net.weight_bound!r}"]
    for p in net.params():
        lines.append(" ".join(format(v, ".17g") for v in np.ravel(p)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_text(path):
    rows = Path(path).read_text().splitlines()
    dims = [int(v) for v in rows[0].split()]
    clamp, bound = (float(v) for v in rows[1].split())
    n_layers = len(dims) - 1
    flat = [np.array([float(v) for v in row.split()]) for row in rows[2:2 + 2 * n_layers]]
    weights = [flat[k].reshape(dims[k + 1], dims[k]) for k in range(n_layers)]
    biases = [flat[n_layers + k].reshape(dims[k + 1]) for k in range(n_layers)]
    return DenseNet(weights, biases, clamp, bound)
