"""Command-line driver.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure,
1 anything else. Failures print one JSON line to stderr with the error type.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CodealError, DataError, HeaderMismatch, JoinFailure, NumericError, SubproblemError
from .estimator import ESTIMATORS, run_estimator
from .covariate import KINDS as REMOVALS
from .fileio import (ROLLING_WINDOW, RunConfig, counterfactual_series, format_matrix,
                     format_run_config, format_series, load_panel, load_run_config, read_matrix,
                     read_unit_values, save_panel, write_text)
from .panel import aggregate_att
from .simulation import PRESETS, generate, metrics, run_experiment

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config file)")
    p.add_argument("--json", action="store_true", help="print a JSON summary instead of text")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1, bit-reproducible)")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp header in outputs")
    p.add_argument("--config", help="INI file with [run], [dgp], [estimator], [ae], [ae_train], "
                                    "[covariate_train] sections")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="codeal",
        description="Counterfactual imputation for panel data with covariate-adjusted "
                    "multi-output autoencoders, plus baselines and simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="replicated simulation study, results as CSV/JSON")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), help="simulation design (default config1)")
    p.add_argument("--reps", type=int, help="replications R")
    p.add_argument("--estimators", help="comma list of estimator/removal, e.g. codeal/dnn,did/linear")
    p.add_argument("--out", help="directory for results.csv and results.json")
    p.add_argument("--save-panel", help="also write the first replication's panel and true effects here")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")

    p = sub.add_parser("impute", help="impute counterfactuals for a panel stored as CSV files")
    _common(p)
    p.add_argument("--y", required=True, help="outcome CSV (units x periods)")
    p.add_argument("--w", required=True, help="treatment CSV, 0/1 (units x periods)")
    p.add_argument("--x", help="covariate CSV (units x covariates)")
    p.add_argument("--estimator", choices=ESTIMATORS, help="default: from config, else codeal")
    p.add_argument("--covariate-removal", choices=REMOVALS,
                   help="default: from config; 'none' when no covariate file is given")
    p.add_argument("--k", type=int, help="factor dimension for the autoencoders")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")

    p = sub.add_parser("evaluate", help="MAE/MSE of imputed counterfactuals against true effects")
    _common(p)
    p.add_argument("--y", required=True)
    p.add_argument("--w", required=True)
    p.add_argument("--counterfactual", required=True, help="counterfactuals.csv written by impute")
    p.add_argument("--tau", required=True, help="CSV of unit,tau true unit effects")
    p.add_argument("--out", help="optional file for the metrics JSON")

    p = sub.add_parser("export-counterfactual",
                       help="per-period observed vs counterfactual totals over treated units")
    _common(p)
    p.add_argument("--y", required=True)
    p.add_argument("--w", required=True)
    p.add_argument("--counterfactual", required=True, help="counterfactuals.csv written by impute")
    p.add_argument("--window", type=int, default=ROLLING_WINDOW,
                   help=f"rolling-mean window, 0 disables (default {ROLLING_WINDOW})")
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def _stamp(args):
    """One timestamp header per invocation, or None when suppressed."""
    if args.no_timestamp:
        return None
    if not hasattr(args, "stamp"):
        args.stamp = f"generated by codeal {__version__} at {_dt.datetime.now(_dt.timezone.utc).isoformat()}"
    return args.stamp


def _run_config(args):
    rc = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    est = replace(rc.estimator, threads=args.threads)
    return replace(rc, estimator=est)


def _emit(args, text_lines, doc):
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print("\n".join(text_lines))


def _plain(v):
    """JSON-safe copy: tuples become lists, non-finite floats become None."""
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def cmd_simulate(args):
    rc = _run_config(args)
    if args.preset:
        rc = replace(rc, preset=args.preset, dgp=PRESETS[args.preset].with_seed(rc.dgp.seed))
    if args.reps is not None:
        rc = replace(rc, reps=args.reps)
    if args.estimators:
        rc = replace(rc, estimators=tuple(e.strip() for e in args.estimators.split(",") if e.strip()))
    if args.print_config:
        print(format_run_config(rc), end="")
        return EXIT_OK
    if args.save_panel:
        sim = generate(rc.dgp)
        save_panel(sim.panel, args.save_panel, header=_stamp(args))
        units = sim.panel.unit_labels
        write_text(Path(args.save_panel) / "tau.csv",
                   format_matrix(sim.tau[:, None], units, ("tau",)), _stamp(args))
    result = run_experiment(rc.dgp, rc.estimators, rc.reps, rc.estimator, rc.preset, args.threads)
    doc = json.loads(result.to_json({"reps": rc.reps, "seed": rc.dgp.seed}))
    if not args.no_timestamp:
        doc["generatedAt"] = _stamp(args)
    if args.out:
        out = Path(args.out)
        write_text(out / "results.csv", result.to_csv(), _stamp(args))
        write_text(out / "results.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    lines = [f"{rc.preset} {rc.dgp.factor_kind}/{rc.dgp.covariate_kind} R={rc.reps} seed={rc.dgp.seed}"]
    for row in result.rows:
        s = row.summary()
        se = "" if s["maeSe"] is None else f" ({s['maeSe']:.3f})"
        lines.append(f"  {row.estimator}/{row.covariate_removal}: MAE {s['maeMean']:.3f}{se} "
                     f"MSE {s['mseMean']:.3f}")
    _emit(args, lines, doc)
    return EXIT_OK


def cmd_impute(args):
    rc = _run_config(args)
    est = rc.estimator
    if args.estimator:
        est = replace(est, estimator=args.estimator)
    if args.covariate_removal:
        est = replace(est, covariate_removal=args.covariate_removal)
    elif not args.x:
        est = replace(est, covariate_removal="none")
    if args.k is not None:
        est = replace(est, k=args.k)
    if args.print_config:
        print(format_run_config(replace(rc, estimator=est)), end="")
        return EXIT_OK
    panel = load_panel(args.y, args.w, args.x)
    result = run_estimator(panel, est)
    out = Path(args.out)
    stamp = _stamp(args)
    units, periods = panel.unit_labels, panel.period_labels
    write_text(out / "counterfactuals.csv", format_matrix(result.counterfactuals, units, periods), stamp)
    write_text(out / "provenance.csv", format_matrix(result.provenance, units, periods, integer=True), stamp)
    treated = result.att.treated_units
    write_text(out / "att.csv", format_series({
        "unit": [units[i] for i in treated],
        "tau": result.att.per_unit[treated],
        "treatedPeriods": result.att.treated_counts[treated].tolist()}), stamp)
    overall = aggregate_att(result.att)
    doc = {
        "config": {"estimator": _plain(asdict(est)), "inputs": {"y": args.y, "w": args.w, "x": args.x},
                   "subproblems": [list(b) for b in result.subproblems]},
        "estimators": {f"{est.estimator}/{result.covariate_removal}": {"overallAtt": overall}},
        "perUnitAtt": [{"unit": units[i], "tau": float(result.att.per_unit[i]),
                        "treatedPeriods": int(result.att.treated_counts[i])} for i in treated],
    }
    if stamp:
        doc["generatedAt"] = stamp
    write_text(out / "summary.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    lines = [f"{est.estimator}/{result.covariate_removal}: {len(treated)} treated units, "
             f"{len(result.subproblems)} subproblems, overall ATT {overall:.4f}"]
    lines += [f"  {r['unit']}: {r['tau']:.4f}" for r in doc["perUnitAtt"][:10]]
    if len(treated) > 10:
        lines.append(f"  ... {len(treated) - 10} more in {out / 'att.csv'}")
    _emit(args, lines, doc)
    return EXIT_OK


def _aligned_counterfactual(panel, path):
    cf = read_matrix(path)
    if cf.cols != panel.period_labels:
        raise HeaderMismatch("counterfactual file periods differ from the panel")
    index = {u: k for k, u in enumerate(cf.rows)}
    missing = [u for u in panel.unit_labels if u not in index]
    if missing:
        raise JoinFailure(missing[0])
    return cf.values[[index[u] for u in panel.unit_labels]]


def cmd_evaluate(args):
    panel = load_panel(args.y, args.w)
    Y0 = _aligned_counterfactual(panel, args.counterfactual)
    truth = read_unit_values(args.tau)
    treated = panel.W.any(axis=1)
    tau = np.zeros(panel.n_units)
    for i, u in enumerate(panel.unit_labels):
        if u in truth:
            tau[i] = truth[u]
        elif treated[i]:
            raise JoinFailure(u)
    mae, mse = metrics(panel, tau, Y0)
    doc = {"mae": mae, "mse": mse, "treatedCells": int(panel.W.sum())}
    if args.out:
        write_text(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _emit(args, [f"MAE {mae:.6f}", f"MSE {mse:.6f}", f"treated cells {doc['treatedCells']}"], doc)
    return EXIT_OK


def cmd_export(args):
    panel = load_panel(args.y, args.w)
    Y0 = _aligned_counterfactual(panel, args.counterfactual)

    write_text(args.out, format_series(counterfactual_series(panel, Y0, args.window)), _stamp(args))
    cols = counterfactual_series(panel, Y0, 0)
    gap = cols["observed"] - cols["counterfactual"]
    doc = {"periods": panel.n_periods, "treatedUnits": int(panel.W.any(axis=1).sum()),
           "totalGap": float(gap.sum()), "out": args.out}
    _emit(args, [f"wrote {panel.n_periods} periods to {args.out}", f"total gap {doc['totalGap']:.4f}"], doc)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "impute": cmd_impute, "evaluate": cmd_evaluate,
            "export-counterfactual": cmd_export}


def exit_code(exc):
    if isinstance(exc, SubproblemError):
        return exit_code(exc.cause)
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_OTHER


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        parser.print_usage(sys.stderr)
        print("codeal: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (CodealError, ValueError) as exc:  # ValueError: invalid values inside config dataclasses
        code = exit_code(exc) if isinstance(exc, CodealError) else EXIT_DATA
        print(json.dumps({"error": type(exc).__name__, "exitCode": code, "message": str(exc)}),
              file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
