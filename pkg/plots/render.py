#!/usr/bin/env python3
"""Render comparison figures from experiment metric files.

Consumes the experiment artifacts — metrics.csv (one row per trial, method,
and mode) and summary.json (aggregate statistics and metadata) — and writes
one multi-panel figure per comparison mode (filtering, smoothing): histograms
of rmse_x, accuracy_z, and log_odds_z per method, plus a chi2 panel with the
chi-square reference density overlaid (degrees of freedom taken from the
summary metadata). If the summary carries per-trial bound improvements, a
histogram of those is written as well.

The script only reads its inputs, uses fixed figure geometry so identical
inputs yield identical files, and exits 2 on schema problems.

Usage:
    python render.py --csv PATH --summary PATH --out DIR --format png
    python render.py --self-test
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

EXPECTED_COLUMNS = [
    "trial",
    "method",
    "mode",
    "rmse_x",
    "accuracy_z",
    "log_odds_z",
    "chi2",
    "elbo",
    "failed",
]
METRIC_PANELS = ["rmse_x", "accuracy_z", "log_odds_z", "chi2"]
MODES = ["filtering", "smoothing"]
BINS = 30
FIGURE_DPI = 100

plt.rcParams["svg.hashsalt"] = "render"


class SchemaError(Exception):
    """Input files do not match the expected schema; maps to exit 2."""


def chi2_pdf(x, df):
    """Chi-square density, written out to keep the script dependency-light."""
    x = np.asarray(x, dtype=float)
    half = df / 2.0
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(
        (half - 1.0) * np.log(x[pos])
        - x[pos] / 2.0
        - half * math.log(2.0)
        - math.lgamma(half)
    )
    return out


def load_rows(csv_path):
    """Parse metrics.csv; returns non-failed rows as plain dicts."""
    try:
        with open(csv_path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            raw = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read {csv_path}: {exc}") from exc
    if header is None:
        raise SchemaError(f"{csv_path} is empty")
    if header != EXPECTED_COLUMNS:
        missing = [c for c in EXPECTED_COLUMNS if c not in header]
        unexpected = [c for c in header if c not in EXPECTED_COLUMNS]
        parts = []
        if missing:
            parts.append(f"missing columns: {', '.join(missing)}")
        if unexpected:
            parts.append(f"unexpected columns: {', '.join(unexpected)}")
        if not parts:
            parts.append(f"column order differs: {header}")
        raise SchemaError(f"{csv_path} schema mismatch ({'; '.join(parts)})")
    if not raw:
        raise SchemaError(f"{csv_path} has no data rows")
    rows = []
    for record in raw:
        if len(record) != len(EXPECTED_COLUMNS):
            raise SchemaError(
                f"{csv_path}: row has {len(record)} fields, expected "
                f"{len(EXPECTED_COLUMNS)}"
            )
        row = dict(zip(EXPECTED_COLUMNS, record))
        try:
            if int(row["failed"]):
                continue
            rows.append(
                {
                    "method": row["method"],
                    "mode": row["mode"],
                    **{m: float(row[m]) for m in METRIC_PANELS},
                }
            )
        except ValueError as exc:
            raise SchemaError(f"{csv_path}: non-numeric row: {exc}") from exc
    if not rows:
        raise SchemaError(f"{csv_path} has no data rows")
    return rows


def load_summary(summary_path):
    try:
        doc = json.loads(Path(summary_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise SchemaError(f"cannot read {summary_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{summary_path} is not valid JSON: {exc}") from exc
    if "chi2_reference_df" not in doc:
        raise SchemaError(f"{summary_path} lacks 'chi2_reference_df'")
    return doc


def _histogram_panel(ax, by_method, metric, df=None):
    values = np.concatenate(list(by_method.values()))
    low, high = float(values.min()), float(values.max())
    if low == high:
        low, high = low - 0.5, high + 0.5
    edges = np.linspace(low, high, BINS + 1)
    for method in sorted(by_method):
        ax.hist(
            by_method[method],
            bins=edges,
            density=True,
            histtype="stepfilled",
            alpha=0.45,
            label=method,
        )
    if df is not None:
        grid = np.linspace(max(low, 0.0), high, 400)
        ax.plot(
            grid,
            chi2_pdf(grid, df),
            color="black",
            linestyle="--",
            linewidth=1.2,
            label=f"chi-square({df})",
        )
    ax.set_xlabel(metric)
    ax.set_ylabel("density")
    ax.legend(fontsize=8)


def render_comparison(csv_path, summary_path, out_dir, fmt="png"):
    """Write one figure per comparison mode; returns the written paths."""
    rows = load_rows(csv_path)
    summary = load_summary(summary_path)
    df = int(summary["chi2_reference_df"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    save_kwargs = {"format": fmt}
    if fmt == "svg":
        save_kwargs["metadata"] = {"Date": None}

    written = []
    for mode in MODES:
        mode_rows = [r for r in rows if r["mode"] == mode]
        if not mode_rows:
            continue
        methods = sorted({r["method"] for r in mode_rows})
        fig, axes = plt.subplots(2, 2, figsize=(9.0, 7.0), dpi=FIGURE_DPI)
        fig.suptitle(f"{mode} comparison ({', '.join(methods)})")
        for ax, metric in zip(axes.ravel(), METRIC_PANELS):
            by_method = {
                method: np.array(
                    [r[metric] for r in mode_rows if r["method"] == method]
                )
                for method in methods
            }
            _histogram_panel(
                ax, by_method, metric, df=df if metric == "chi2" else None
            )
        fig.tight_layout(rect=(0.0, 0.0, 1.0, 0.96))
        target = out / f"{mode}_comparison.{fmt}"
        fig.savefig(target, **save_kwargs)
        plt.close(fig)
        written.append(target)

    gains = summary.get("elbo_improvement", {}).get("values") or []
    if gains:
        fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=FIGURE_DPI)
        ax.hist(gains, bins=BINS, color="tab:blue", alpha=0.8)
        ax.axvline(0.0, color="black", linewidth=1.0)
        ax.set_xlabel("bound improvement per trial")
        ax.set_ylabel("count")
        ax.set_title("iterated smoother bound gain")
        fig.tight_layout()
        target = out / f"elbo_improvement.{fmt}"
        fig.savefig(target, **save_kwargs)
        plt.close(fig)
        written.append(target)
    return written


def self_test():
    """Check that the reference overlay is a normalized density."""
    ok = True
    for df in (5, 34, 130, 514):
        upper = df + 12.0 * math.sqrt(2.0 * df)
        grid = np.linspace(0.0, upper, 200_001)
        mass = float(np.trapezoid(chi2_pdf(grid, df), grid))
        line = f"chi-square({df}) overlay mass over [0, {upper:.0f}]: {mass:.8f}"
        if abs(mass - 1.0) < 1e-6:
            print(f"{line} ok")
        else:
            print(f"{line} FAIL")
            ok = False
    print("self-test passed" if ok else "self-test FAILED")
    return ok


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Render comparison figures from experiment metrics."
    )
    parser.add_argument("--csv", type=Path, help="metrics.csv path")
    parser.add_argument("--summary", type=Path, help="summary.json path")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument(
        "--format", choices=("png", "svg"), default="png", help="figure format"
    )
    parser.add_argument(
        "--self-test",
        action="store_true",
        help="verify the reference-density normalization and exit",
    )
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    if args.self_test:
        return EXIT_OK if self_test() else EXIT_FAILURE
    if args.csv is None or args.summary is None or args.out is None:
        print("error: --csv, --summary, and --out are required", file=sys.stderr)
        return EXIT_USAGE
    try:
        written = render_comparison(args.csv, args.summary, args.out, args.format)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
