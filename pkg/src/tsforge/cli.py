"""Command-line surface: ingest, diagnose, run, and cv subcommands.

Each subcommand is a thin shell over the library; failures map to typed
exit codes (2 input format, 3 diagnostic infeasibility, 4 model failure,
5 configuration error).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from datetime import date
from pathlib import Path

import numpy as np

from . import diagnostics, transforms
from .config import load_config
from .errors import DiagnosticError, ToolkitError
from .pipeline import cv_pipeline, run_pipeline
from .series import aggregate_events, read_event_csv, read_series_csv, write_series_csv


def cmd_ingest(args) -> int:
    events = read_event_csv(args.input)
    origin = date.fromisoformat(args.origin) if args.origin else None
    ts = aggregate_events(events, args.step_months, origin=origin)
    write_series_csv(args.output, ts)
    print(f"n={len(ts)} sum={ts.values.sum():.0f} span={ts.start}..{ts.end} step={ts.step_months}mo")
    return 0


def _diagnosis_payload(ts, max_lag, one_difference):
    if one_difference:
        ts, _ = transforms.difference(ts, d=1)
    n = len(ts)
    lag = max_lag or min(20, n // 2 - 1)
    if lag < 1:
        raise DiagnosticError(f"series of length {n} too short for a correlogram")
    try:
        acf_result = diagnostics.acf(ts, lag)
        pacf_result = diagnostics.pacf(ts, lag)
        adf = diagnostics.adf_test(ts)
    except ValueError as exc:
        raise DiagnosticError(str(exc)) from exc
    p, q = diagnostics.suggest_orders(acf_result, pacf_result)
    return ts, {
        "adf": {
            "statistic": adf.statistic,
            "pvalue": adf.p_value,
            "lags": adf.lags_used,
            "nobs": adf.n_obs,
            "critical_values": adf.critical_values,
            "verdict": adf.verdict,
        },
        "acf": acf_result.values.tolist(),
        "pacf": pacf_result.values.tolist(),
        "band": acf_result.band,
        "suggested_orders": {"p": p, "q": q},
    }


def cmd_diagnose(args) -> int:
    ts = read_series_csv(args.input)
    ts, payload = _diagnosis_payload(ts, args.max_lag, args.difference)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "diagnosis.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if args.period:
        try:
            parts = transforms.decompose(ts, args.period)
        except ValueError as exc:
            raise DiagnosticError(str(exc)) from exc
        for name, component in (("trend", parts.trend), ("seasonal", parts.seasonal),
                                ("residual", parts.residual)):
            with open(outdir / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["timestamp", "value"])
                for stamp, value in zip(component.timestamps(), component.values):
                    writer.writerow([stamp.isoformat(), "" if np.isnan(value) else repr(float(value))])

    adf = payload["adf"]
    rejected = adf["verdict"] == "Data is stationary"
    print(f"ADF statistic {adf['statistic']:.6f}  p-value {adf['pvalue']:.6f}  "
          f"lags {adf['lags']}  observations {adf['nobs']}")
    print("Reject the null hypothesis" if rejected else "Fail to reject the null hypothesis")
    print(adf["verdict"])
    print(f"suggested orders: p={payload['suggested_orders']['p']} q={payload['suggested_orders']['q']}")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    metrics = run_pipeline(config, args.input, args.output_dir)
    print(f"family={metrics['family']} mape={metrics['mape']:.4f} "
          f"grouped_mape={metrics['grouped_mape']:.4f} rmse={metrics['rmse']:.6f}")
    print(f"outputs written to {args.output_dir}")
    return 0


def cmd_cv(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    report = cv_pipeline(config, args.input, args.output_dir)
    scored = [c for c in report["candidates"] if c["mean_score"] is not None]
    print(f"family={report['family']} candidates={len(report['candidates'])} "
          f"scored={len(scored)} folds={len(report['folds'])}")
    print(f"winner: {report['winner']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsforge",
        description="Time-series forecasting toolkit: event aggregation, "
                    "stationarity diagnostics, and three model families.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="aggregate an event CSV into a regular series")
    ingest.add_argument("--input", required=True, help="event CSV with a Date column (MM/DD/YYYY)")
    ingest.add_argument("--step-months", type=int, required=True)
    ingest.add_argument("--origin", help="aggregation origin YYYY-MM-DD (default: first event's month)")
    ingest.add_argument("--output", required=True, help="series CSV to write")
    ingest.set_defaults(func=cmd_ingest)

    diagnose = sub.add_parser("diagnose", help="stationarity diagnostics and decomposition")
    diagnose.add_argument("--input", required=True, help="series CSV (timestamp,value)")
    diagnose.add_argument("--output-dir", required=True)
    diagnose.add_argument("--period", type=int, help="seasonal period for decomposition CSVs")
    diagnose.add_argument("--max-lag", type=int, help="correlogram depth (default min(20, n/2-1))")
    diagnose.add_argument("--difference", action="store_true",
                          help="diagnose the once-differenced series instead")
    diagnose.set_defaults(func=cmd_diagnose)

    run = sub.add_parser("run", help="fit, forecast, and evaluate one configuration")
    run.add_argument("--config", required=True, help="pipeline config (INI)")
    run.add_argument("--input", required=True, help="event CSV or series CSV")
    run.add_argument("--output-dir", required=True)
    run.add_argument("--seed", type=int, help="override the config seed")
    run.set_defaults(func=cmd_run)

    cv = sub.add_parser("cv", help="expanding-window grid search for the configured family")
    cv.add_argument("--config", required=True)
    cv.add_argument("--input", required=True)
    cv.add_argument("--output-dir", required=True)
    cv.add_argument("--seed", type=int, help="override the config seed")
    cv.set_defaults(func=cmd_cv)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
