"""Command-line entry point.

Subcommands mirror the pipeline stages: generate synthetic data, build
a coreset, evaluate it downstream, run a full seeded experiment, and
summarize or plot the results. Exit codes: 0 success, 2 configuration
error, 3 partial completion (some repetitions failed).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from .engine import load_weights_csv, save_weights_csv
from .experiments import (
    EXPERIMENT_KINDS,
    ConfigError,
    build_coreset,
    evaluate_rep,
    generate_synthetic,
    read_results_csv,
    resolve_config,
    run_experiment,
    summarize,
    write_histogram_data,
)
from .measures import load_dataset_csv, save_dataset_csv
from .partitions import Partition, save_partition_csv
from .svgplot import render_histogram, render_lines

__all__ = ["main"]


def _add_common(parser):
    parser.add_argument("--config", type=Path, help="TOML config file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--reps", type=int, help="number of repetitions")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument(
        "--paper-scale",
        action="store_true",
        help="restore the source experiment sizes instead of desk scale",
    )
    parser.add_argument(
        "--experiment",
        choices=EXPERIMENT_KINDS,
        default="density",
        help="experiment kind",
    )
    parser.add_argument(
        "--print-config",
        action="store_true",
        help="echo the resolved configuration and exit",
    )


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="predcore", description="Predictive coresets toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset and its truth")
    _add_common(p)

    p = sub.add_parser("coreset", help="build coreset weights for a dataset")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset CSV")

    p = sub.add_parser("evaluate", help="compare coreset vs unit downstream fits")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset CSV")
    p.add_argument("--weights", type=Path, required=True, help="weights CSV")

    p = sub.add_parser("experiment", help="run the full repeated study")
    _add_common(p)

    p = sub.add_parser("summarize", help="summary statistics of a results CSV")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write summary JSON here")

    p = sub.add_parser("plot-data", help="emit histogram bins from a results CSV")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--bins", type=int, default=20)

    p = sub.add_parser("render-svg", help="render a plot-data CSV to SVG")
    p.add_argument("--input", type=Path, required=True, help="plot-data CSV")
    p.add_argument("--out", type=Path, required=True, help="output SVG path")
    p.add_argument("--title", default="")
    return parser


def _load_toml(path):
    if path is None:
        return None
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config file {path}: {exc}")


def _resolve(args):
    overrides = {
        "master_seed": args.seed,
        "reps": args.reps,
        "output_dir": None if args.out is None else str(args.out),
    }
    cfg = resolve_config(
        args.experiment,
        file_values=_load_toml(args.config),
        overrides=overrides,
        paper_scale=args.paper_scale,
    )
    if args.print_config:
        print(json.dumps(asdict(cfg), indent=2))
        return None
    return cfg


def _out_dir(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_generate(args):
    cfg = _resolve(args)
    if cfg is None:
        return 0
    out = _out_dir(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.master_seed))
    data, truth = generate_synthetic(cfg.experiment, cfg, rng)
    save_dataset_csv(data, out / "dataset.csv")
    (out / "truth.json").write_text(json.dumps(truth, indent=2))
    written = ["dataset.csv", "truth.json"]
    if "labels" in truth:
        save_partition_csv(
            Partition(np.array(truth["labels"], dtype=int)), out / "labels.csv"
        )
        written.append("labels.csv")
    print(f"wrote {', '.join(written)} to {out}")
    return 0


def _cmd_coreset(args):
    cfg = _resolve(args)
    if cfg is None:
        return 0
    data = load_dataset_csv(args.data)
    if cfg.n > len(data):
        raise ConfigError(f"n = {cfg.n} exceeds dataset size {len(data)}")
    out = _out_dir(cfg)
    weights, report = build_coreset(data, cfg, cfg.master_seed)
    save_weights_csv(weights, out / "weights.csv")
    report.to_json(out / "report.json")
    print(
        f"coreset of {cfg.n} points, {report.aborted_iterations} aborted "
        f"iterations, wrote weights.csv and report.json to {out}"
    )
    return 0


def _cmd_evaluate(args):
    cfg = _resolve(args)
    if cfg is None:
        return 0
    data = load_dataset_csv(args.data)
    weights = load_weights_csv(args.weights)
    out = _out_dir(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.master_seed))
    record, extras = evaluate_rep(data, weights, cfg, rng)
    payload = {
        "d_coreset_full": record.d_coreset_full,
        "d_unit_full": record.d_unit_full,
        "diff": record.diff,
        "win": record.win,
    }
    if "vi" in extras:
        payload["vi"] = extras["vi"]
    (out / "evaluation.json").write_text(json.dumps(payload, indent=2))
    print(
        f"diff = {record.diff:+.6f} ({'win' if record.win else 'no win'}), "
        f"wrote evaluation.json to {out}"
    )
    return 0


def _cmd_experiment(args):
    cfg = _resolve(args)
    if cfg is None:
        return 0

    def progress(rep, row):
        print(f"rep {rep}: diff = {row['diff']:+.6f} win = {row['win']}")

    manifest = run_experiment(cfg, progress=progress)
    out = Path(cfg.output_dir)
    summary_path = out / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        print(
            f"win fraction {summary['win_fraction']:.3f} over "
            f"{summary['records']} reps, mean diff {summary['mean_diff']:+.6f}"
        )
    if manifest.failed_reps:
        print(f"{len(manifest.failed_reps)} reps failed; partial results in {out}")
        return 3
    print(f"manifest and outputs in {out}")
    return 0


def _cmd_summarize(args):
    rows = read_results_csv(args.results)
    summary = summarize(rows)
    text = json.dumps(summary, indent=2)
    if args.out is not None:
        args.out.write_text(text)
    print(text)
    return 0


def _cmd_plot_data(args):
    rows = read_results_csv(args.results)
    if not rows:
        raise ConfigError("results CSV has no rows")
    args.out.mkdir(parents=True, exist_ok=True)
    write_histogram_data(
        [r["diff"] for r in rows], args.out / "hist_diff.csv", bins=args.bins
    )
    print(f"wrote hist_diff.csv to {args.out}")
    return 0


def _cmd_render_svg(args):
    with open(args.input, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    if not rows:
        raise ConfigError(f"no data rows in {args.input}")
    cols = {name: [float(row[i]) for row in rows] for i, name in enumerate(header)}
    if header[:3] == ["bin_left", "bin_right", "count"]:
        render_histogram(
            cols["bin_left"], cols["bin_right"], cols["count"],
            title=args.title, path=args.out,
        )
    elif header[0] == "x":
        render_lines(
            cols["x"],
            {name: cols[name] for name in header[1:]},
            title=args.title,
            path=args.out,
        )
    else:
        raise ConfigError(f"unrecognized plot-data header {header!r}")
    print(f"wrote {args.out}")
    return 0


_HANDLERS = {
    "generate": _cmd_generate,
    "coreset": _cmd_coreset,
    "evaluate": _cmd_evaluate,
    "experiment": _cmd_experiment,
    "summarize": _cmd_summarize,
    "plot-data": _cmd_plot_data,
    "render-svg": _cmd_render_svg,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
