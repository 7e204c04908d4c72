"""Panel containers and staggered-adoption geometry.

Block indices ``(xi, eta)`` are 1-based throughout, matching the usual way
staggered designs are drawn: group ``xi = 1`` holds the never-treated units,
segment ``eta = 1`` the periods before any unit adopts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    AlwaysTreatedUnit,
    DimensionMismatch,
    MissingImputedCell,
    NoNeverTreatedUnit,
    NonBinaryIndicator,
    NoTreatedCells,
    ReversedTreatment,
    ShapeMismatch,
    UnsortedPanel,
    UntreatedTargetBlock,
)


@dataclass(frozen=True)
class PanelDataset:
    """Outcomes ``Y`` (N x T), treatment indicators ``W`` (N x T), covariates ``X`` (N x P)."""

    Y: np.ndarray
    W: np.ndarray
    X: Optional[np.ndarray] = None
    unit_labels: tuple = ()
    period_labels: tuple = ()

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        W_raw = np.asarray(self.W)
        if Y.ndim != 2:
            raise ShapeMismatch(f"Y must be a matrix, got shape {Y.shape}")
        if W_raw.shape != Y.shape:
            raise ShapeMismatch(f"W shape {W_raw.shape} differs from Y shape {Y.shape}")
        if not np.isin(W_raw, (0, 1)).all():
            raise NonBinaryIndicator("treatment indicators must be exactly 0 or 1")
        n, t = Y.shape
        X = np.zeros((n, 0)) if self.X is None else np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1) if X.size else np.zeros((n, 0))
        if X.shape[0] != n:
            raise ShapeMismatch(f"X has {X.shape[0]} rows, panel has {n} units")
        units = tuple(str(u) for u in self.unit_labels) or tuple(str(i) for i in range(n))
        periods = tuple(str(p) for p in self.period_labels) or tuple(str(j) for j in range(t))
        if len(units) != n or len(periods) != t:
            raise ShapeMismatch("label lists must match the panel dimensions")
        for name, arr in (("Y", Y), ("W", W_raw.astype(np.int8)), ("X", X)):
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "unit_labels", units)
        object.__setattr__(self, "period_labels", periods)

    @property
    def shape(self):
        return self.Y.shape

    @property
    def n_units(self):
        return self.Y.shape[0]

    @property
    def n_periods(self):
        return self.Y.shape[1]

    @property
    def n_covariates(self):
        return self.X.shape[1]

    def permute(self, order):
        order = np.asarray(order)
        return PanelDataset(self.Y[order], self.W[order], self.X[order],
                            tuple(self.unit_labels[i] for i in order), self.period_labels)

    def with_outcomes(self, Y):
        return PanelDataset(Y, self.W, self.X, self.unit_labels, self.period_labels)


def adoption_times(W):
    """First treated period per unit; never-treated units get ``T``."""
    W = np.asarray(W)
    n, t = W.shape
    treated = W.astype(bool)
    first = np.where(treated.any(axis=1), treated.argmax(axis=1), t)
    return first


def check_staggered(W):
    W = np.asarray(W)
    if not np.isin(W, (0, 1)).all():
        raise NonBinaryIndicator("treatment indicators must be exactly 0 or 1")
    drops = np.argwhere(np.diff(W.astype(np.int8), axis=1) < 0)
    if len(drops):
        i, t = drops[0]
        raise ReversedTreatment(int(i), int(t) + 1)
    if W.shape[0] and W.any(axis=1).all():
        raise NoNeverTreatedUnit("at least one unit must never be treated")


def validate_and_sort(panel):
    """Order units as never-treated first, then latest to earliest adopters.

    Returns ``(sorted_panel, perm)`` where ``perm[k]`` is the original index of
    sorted row ``k``. Ties keep their original order.
    """
    check_staggered(panel.W)
    first = adoption_times(panel.W)
    perm = np.argsort(-first, kind="stable")
    return panel.permute(perm), perm


@dataclass(frozen=True)
class BlockPartition:
    group_sizes: tuple
    segment_lengths: tuple
    treated_blocks: frozenset

    @property
    def r(self):
        return len(self.group_sizes)

    @property
    def row_edges(self):
        return np.concatenate([[0], np.cumsum(self.group_sizes)]).astype(int)

    @property
    def col_edges(self):
        return np.concatenate([[0], np.cumsum(self.segment_lengths)]).astype(int)

    def rows(self, xi):
        e = self.row_edges
        return range(e[xi - 1], e[xi])

    def cols(self, eta):
        e = self.col_edges
        return range(e[eta - 1], e[eta])

    def reconstruct(self):
        re, ce = self.row_edges, self.col_edges
        W = np.zeros((re[-1], ce[-1]), dtype=np.int8)
        for xi, eta in self.treated_blocks:
            W[re[xi - 1]:re[xi], ce[eta - 1]:ce[eta]] = 1
        return W

    def subproblems(self):
        """Treated blocks in the order the staggered loop visits them."""
        r = self.r
        out = []
        for xi0 in range(2, r + 1):
            for eta0 in range(r + 2 - xi0, r + 1):
                if (xi0, eta0) in self.treated_blocks:
                    out.append((xi0, eta0))
        return out


def extract_block_partition(W):
    W = np.asarray(W)
    check_staggered(W)
    n, t = W.shape
    first = adoption_times(W)
    if np.any(np.diff(first) > 0):
        raise UnsortedPanel("rows must be in descending order of adoption time")
    if np.any(first == 0):
        raise AlwaysTreatedUnit("a unit treated in every period has no untreated data")
    # group boundaries wherever the adoption time changes
    cuts = np.flatnonzero(np.diff(first)) + 1
    row_edges = np.concatenate([[0], cuts, [n]])
    group_sizes = tuple(int(v) for v in np.diff(row_edges))
    times = np.unique(first[first < t])
    col_edges = np.concatenate([[0], times, [t]])
    segment_lengths = tuple(int(v) for v in np.diff(col_edges))
    treated = set()
    for a in range(len(group_sizes)):
        for b in range(len(segment_lengths)):
            blk = W[row_edges[a]:row_edges[a + 1], col_edges[b]:col_edges[b + 1]]
            if blk.all():
                treated.add((a + 1, b + 1))
    part = BlockPartition(group_sizes, segment_lengths, frozenset(treated))
    assert np.array_equal(part.reconstruct(), W.astype(np.int8))
    return part


@dataclass(frozen=True)
class FourBlockView:
    """A four-block subpanel built around target block ``(xi0, eta0)``.

    ``W`` is the constructed four-block indicator: every cell of region D is
    marked missing, including cells of D that were observed untreated in the
    parent panel.
    """

    Y: np.ndarray
    W: np.ndarray
    X: np.ndarray
    n_control: int
    n_pre: int
    rows: np.ndarray
    cols: np.ndarray
    target_rows: range
    target_cols: range
    block: tuple
    k1: int
    k2: int

    @property
    def shape(self):
        return self.Y.shape

    def take(self, M):
        """Slice a parent-shaped matrix down to this view."""
        return np.asarray(M)[np.ix_(self.rows, self.cols)]

    def target_in_d(self):
        """Row/column slices of the target block inside the D region."""
        n1, t1 = self.n_control, self.n_pre
        return (slice(self.target_rows.start - n1, self.target_rows.stop - n1),
                slice(self.target_cols.start - t1, self.target_cols.stop - t1))

    def regions(self):
        """Group and segment index ranges (1-based, inclusive) of A, B, C, D."""
        xi0, eta0 = self.block
        k1, k2 = self.k1, self.k2
        return {
            "A": ((1, k1), (1, k2)),
            "B": ((1, k1), (k2 + 1, eta0)),
            "C": ((k1 + 1, xi0), (1, k2)),
            "D": ((k1 + 1, xi0), (k2 + 1, eta0)),
        }


def four_block_indicator(n, t, n_control, n_pre):
    W = np.zeros((n, t), dtype=np.int8)
    W[n_control:, n_pre:] = 1
    return W


def build_four_block(panel, partition, xi0, eta0):
    if (xi0, eta0) not in partition.treated_blocks:
        raise UntreatedTargetBlock(f"block {(xi0, eta0)} is not a treated block")
    r = partition.r
    k1 = r + 1 - eta0
    k2 = r + 1 - xi0
    re, ce = partition.row_edges, partition.col_edges
    rows = np.arange(re[xi0])
    cols = np.arange(ce[eta0])
    n1, t1 = int(re[k1]), int(ce[k2])
    return FourBlockView(
        Y=panel.Y[np.ix_(rows, cols)],
        W=four_block_indicator(len(rows), len(cols), n1, t1),
        X=panel.X[rows],
        n_control=n1,
        n_pre=t1,
        rows=rows,
        cols=cols,
        target_rows=range(int(re[xi0 - 1]), int(re[xi0])),
        target_cols=range(int(ce[eta0 - 1]), int(ce[eta0])),
        block=(xi0, eta0),
        k1=k1,
        k2=k2,
    )


@dataclass(frozen=True)
class AttEstimate:
    """Unit-level ATT. ``per_unit`` is NaN for units that are never treated."""

    per_unit: np.ndarray
    treated_counts: np.ndarray

    @property
    def treated_units(self):
        return np.flatnonzero(self.treated_counts > 0)

    def as_dict(self, labels=None):
        labels = labels or [str(i) for i in range(len(self.per_unit))]
        return {labels[i]: float(self.per_unit[i]) for i in self.treated_units}


def att_from_imputation(panel, Y0):
    Y0 = np.asarray(Y0, dtype=float)
    if Y0.shape != panel.shape:
        raise DimensionMismatch(f"imputed matrix {Y0.shape} vs panel {panel.shape}")
    treated = panel.W.astype(bool)
    bad = np.argwhere(treated & ~np.isfinite(Y0))
    if len(bad):
        raise MissingImputedCell(int(bad[0][0]), int(bad[0][1]))
    counts = treated.sum(axis=1)
    gaps = np.where(treated, panel.Y - np.where(treated, Y0, 0.0), 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = np.where(counts > 0, gaps / np.maximum(counts, 1), np.nan)
    return AttEstimate(tau, counts)


def aggregate_att(estimate, panel=None):
    """Treated-cell weighted mean of the unit effects."""
    counts = estimate.treated_counts
    if counts.sum() == 0:
        raise NoTreatedCells("no treated cells to average over")
    keep = counts > 0
    return float(np.sum(estimate.per_unit[keep] * counts[keep]) / counts.sum())
