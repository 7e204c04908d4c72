"""CSV ingestion and export, and the INI run configuration.

Matrix files have a header row whose first cell names the unit column and
whose remaining cells are period (or covariate) labels; every following row
starts with a unit label. Lines starting with ``#`` are comments. Numbers are
written with 17 significant digits, so a save/load round trip is exact.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import (DataError, HeaderMismatch, InvalidConfig, JoinFailure, MissingFile,
                     NonBinaryIndicator, NonNumericCell)
from .estimator import EstimatorConfig
from .panel import PanelDataset, validate_and_sort
from .simulation import PRESETS, DgpConfig

ROLLING_WINDOW = 14


@dataclass(frozen=True)
class LabeledMatrix:
    rows: tuple
    cols: tuple
    values: np.ndarray
    corner: str = "unit"


def _data_lines(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    with path.open(newline="") as fh:
        text = [line for line in fh if not line.startswith("#") and line.strip()]
    return list(csv.reader(text))


def read_matrix(path):
    """Parse a labeled numeric CSV. Cell positions in errors are 1-based data rows/columns."""
    lines = _data_lines(path)
    if not lines:
        raise HeaderMismatch(f"{path}: empty file")
    header = [h.strip() for h in lines[0]]
    cols = tuple(header[1:])
    if len(set(cols)) != len(cols):
        raise HeaderMismatch(f"{path}: duplicate column labels")
    rows, values = [], []
    for r, line in enumerate(lines[1:], start=1):
        if len(line) != len(header):
            raise HeaderMismatch(f"{path}: row {r} has {len(line)} fields, header has {len(header)}")
        label = line[0].strip()
        vals = []
        for c, cell in enumerate(line[1:], start=1):
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericCell(r, c, cell) from None
            if not math.isfinite(v):
                raise NonNumericCell(r, c, cell)
            vals.append(v)
        rows.append(label)
        values.append(vals)
    if len(set(rows)) != len(rows):
        raise HeaderMismatch(f"{path}: duplicate unit labels")
    arr = np.array(values, dtype=float).reshape(len(rows), len(cols))
    return LabeledMatrix(tuple(rows), cols, arr, header[0] if header else "unit")


def format_matrix(values, rows, cols, corner="unit", integer=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([corner, *cols])
    for label, row in zip(rows, np.asarray(values)):
        w.writerow([label, *(str(int(v)) if integer else format(float(v), ".17g") for v in row)])
    return buf.getvalue()


def write_text(path, text, header=None):
    """Write ``text`` with an optional leading ``#`` comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text((f"# {header}\n" if header else "") + text)


def _align(target, source, name):
    """Reorder ``source`` rows to follow the unit labels of ``target``."""
    index = {u: k for k, u in enumerate(source.rows)}
    for u in target.rows:
        if u not in index:
            raise JoinFailure(u)
    extra = set(source.rows) - set(target.rows)
    if extra:
        raise JoinFailure(sorted(extra)[0])
    return source.values[[index[u] for u in target.rows]]


def load_panel(y_path, w_path, x_path=None, sort=True):
    """Read outcome, treatment and (optional) covariate files into a panel.

    Rows are joined on unit labels. The returned panel is sorted into
    staggered order (never-treated units first) unless ``sort`` is False.
    """
    Y = read_matrix(y_path)
    W = read_matrix(w_path)
    if W.cols != Y.cols:
        raise HeaderMismatch("outcome and treatment files have different period columns")
    w = _align(Y, W, "treatment")
    if not np.isin(w, (0.0, 1.0)).all():
        raise NonBinaryIndicator("treatment file must contain only 0 and 1")
    if x_path is not None:
        X = read_matrix(x_path)
        x = _align(Y, X, "covariate")
    else:
        x = np.zeros((len(Y.rows), 0))
    panel = PanelDataset(Y.values, w.astype(np.int8), x, Y.rows, Y.cols)
    if sort:
        panel, _ = validate_and_sort(panel)
    return panel


def save_panel(panel, directory, covariate_names=None, header=None):
    """Write ``y.csv``, ``w.csv`` and (when P > 0) ``x.csv``; returns the paths."""
    d = Path(directory)
    units, periods = panel.unit_labels, panel.period_labels
    paths = {"y": d / "y.csv", "w": d / "w.csv"}
    write_text(paths["y"], format_matrix(panel.Y, units, periods), header)
    write_text(paths["w"], format_matrix(panel.W, units, periods, integer=True), header)
    if panel.n_covariates:
        names = covariate_names or tuple(f"x{j + 1}" for j in range(panel.n_covariates))
        paths["x"] = d / "x.csv"
        write_text(paths["x"], format_matrix(panel.X, units, names), header)
    return paths


def read_unit_values(path, column=None):
    """Map unit label to a value from a two-column (or named-column) CSV."""
    m = read_matrix(path)
    j = 0 if column is None else m.cols.index(column) if column in m.cols else None
    if j is None:
        raise HeaderMismatch(f"{path}: no column {column!r}")
    return dict(zip(m.rows, m.values[:, j]))


def rolling_mean(values, window):
    """Trailing mean; positions with fewer than ``window`` values are NaN."""
    v = np.asarray(values, dtype=float)
    out = np.full(len(v), np.nan)
    if window < 1:
        raise InvalidConfig("rolling window must be at least 1")
    if len(v) >= window:
        c = np.concatenate([[0.0], np.cumsum(v)])
        out[window - 1:] = (c[window:] - c[:-window]) / window
    return out


def counterfactual_series(panel, Y0, window=ROLLING_WINDOW):
    """Per-period totals over units that are ever treated.

    The counterfactual total uses observed values in untreated cells and
    ``Y0`` in treated cells. Returns a dict of equal-length columns.
    """
    Y0 = np.asarray(Y0, dtype=float)
    if Y0.shape != panel.shape:
        raise DataError(f"counterfactual matrix {Y0.shape} does not match panel {panel.shape}")
    ever = panel.W.any(axis=1)
    treated = panel.W.astype(bool)
    cf = np.where(treated, Y0, panel.Y)
    observed = panel.Y[ever].sum(axis=0)
    counter = cf[ever].sum(axis=0)
    cols = {"period": list(panel.period_labels), "treatedUnits": treated.sum(axis=0).tolist(),
            "observed": observed, "counterfactual": counter}
    if window:
        cols["observedRolling"] = rolling_mean(observed, window)
        cols["counterfactualRolling"] = rolling_mean(counter, window)
    return cols


def format_series(cols):
    """CSV text of a dict of equal-length columns; NaN is written as an empty cell."""
    names = list(cols)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for k in range(len(cols[names[0]])):
        row = []
        for n in names:
            v = cols[n][k]
            if isinstance(v, (float, np.floating)):
                row.append("" if math.isnan(v) else format(float(v), ".17g"))
            else:
                row.append(str(v))
        w.writerow(row)
    return buf.getvalue()


def export_counterfactual_series(result, panel, window=ROLLING_WINDOW):
    """CSV text of ``counterfactual_series`` for an imputation result."""
    return format_series(counterfactual_series(panel, result.counterfactuals, window))


# run configuration -------------------------------------------------------

SECTIONS = ("run", "dgp", "estimator", "ae", "ae_train", "covariate_train")


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs besides file paths."""

    preset: str = "config1"
    dgp: DgpConfig = PRESETS["config1"]
    estimators: tuple = ("codeal/none", "single-ae/none", "did/none")
    reps: int = 1
    estimator: EstimatorConfig = EstimatorConfig()

    def with_seed(self, seed):
        return replace(self, dgp=self.dgp.with_seed(seed), estimator=self.estimator.with_seed(seed))


def _number(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _parse(text, default):
    t = text.strip()
    low = t.lower()
    if isinstance(default, bool):
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InvalidConfig(f"expected a boolean, got {text!r}")
    if isinstance(default, tuple) or (default is None and "," in t):
        parts = [p.strip() for p in t.strip("()").split(",") if p.strip()]
        if default and all(isinstance(v, str) for v in default):
            return tuple(parts)
        return tuple(_number(p) for p in parts)
    if isinstance(default, str):
        return t
    if low in ("", "none"):
        return None
    if isinstance(default, int):
        return int(t)
    if isinstance(default, float):
        return float(t)
    try:
        return _number(t)
    except ValueError:
        return t


def _update(obj, section, items, skip=()):
    names = {f.name: f for f in fields(obj)}
    changes = {}
    for key, text in items:
        if key in skip:
            continue
        if key not in names or hasattr(getattr(obj, key), "__dataclass_fields__"):
            raise InvalidConfig(f"[{section}] unknown key {key!r}")
        try:
            changes[key] = _parse(text, getattr(obj, key))
        except ValueError as exc:
            raise InvalidConfig(f"[{section}] {key}: {exc}") from None
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"[{section}] {exc}") from None


def parse_run_config(text, base=None):
    """Apply an INI document on top of ``base`` (defaults when None)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfig(f"config file: {exc}") from None
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise InvalidConfig(f"unknown config sections {sorted(unknown)}")
    rc = base or RunConfig()
    if cp.has_section("run"):
        run = dict(cp.items("run"))
        preset = run.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise InvalidConfig(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            rc = replace(rc, preset=preset, dgp=PRESETS[preset])
        for key, text in run.items():
            if key == "estimators":
                rc = replace(rc, estimators=tuple(e.strip() for e in text.split(",") if e.strip()))
            elif key == "reps":
                rc = replace(rc, reps=int(text))
            else:
                raise InvalidConfig(f"[run] unknown key {key!r}")
    if cp.has_section("dgp"):
        rc = replace(rc, dgp=_update(rc.dgp, "dgp", cp.items("dgp")))
    est = rc.estimator
    if cp.has_section("estimator"):
        est = _update(est, "estimator", cp.items("estimator"))
    if cp.has_section("ae"):
        est = replace(est, ae=_update(est.ae, "ae", cp.items("ae")))
    if cp.has_section("ae_train"):
        est = replace(est, ae=replace(est.ae, train=_update(est.ae.train, "ae_train", cp.items("ae_train"))))
    if cp.has_section("covariate_train"):
        est = replace(est, covariate_train=_update(est.covariate_train, "covariate_train",
                                                   cp.items("covariate_train")))
    return replace(rc, estimator=est)


def load_run_config(path, base=None):
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"no such config file: {p}")
    return parse_run_config(p.read_text(), base)


def _show(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_show(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _section(obj, skip=()):
    return {f.name: _show(getattr(obj, f.name)) for f in fields(obj) if f.name not in skip}


def format_run_config(rc):
    """The effective configuration as an INI document that parses back to ``rc``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["run"] = {"preset": rc.preset, "estimators": ", ".join(rc.estimators), "reps": str(rc.reps)}
    cp["dgp"] = _section(rc.dgp)
    cp["estimator"] = _section(rc.estimator, skip=("ae", "covariate_train"))
    cp["ae"] = _section(rc.estimator.ae, skip=("train",))
    cp["ae_train"] = _section(rc.estimator.ae.train)
    cp["covariate_train"] = _section(rc.estimator.covariate_train)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
