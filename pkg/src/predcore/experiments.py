"""Seeded experiment harness: generate, build, evaluate, persist.

Each experiment kind wires a synthetic generator, a coreset run, and a
downstream comparison into one per-repetition pipeline. Repetitions are
independently seeded by counter-based splits of the master seed, so any
rep can be reproduced alone and the results CSV is byte-identical
across reruns of the same config.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit
from scipy.stats import invgamma, norm

from . import __version__
from .adaptive import ABCConfig, run_adaptive_coreset
from .downstream import (
    assign_partition,
    compare_runs,
    default_grid,
    fit_logistic_map,
    fit_mixture_em,
    gibbs_mixture,
    kl_discretized,
    logit_l2_distance,
)
from .engine import (
    CoresetRunConfig,
    OptimizerConfig,
    materialize_coreset,
    run_predictive_coreset,
)
from .measures import Dataset, GroundMetric, Point
from .partitions import MixtureSpec, run_partition_coreset
from .urn import BootstrapLogisticBase, DPConfig, GaussianMixtureBase

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunManifest",
    "EXPERIMENT_KINDS",
    "default_config",
    "resolve_config",
    "generate_synthetic",
    "build_coreset",
    "evaluate_rep",
    "run_experiment",
    "summarize",
    "worker_count",
]

EXPERIMENT_KINDS = ("density", "logistic", "partition", "adaptive")

RESULT_FIELDS = ("rep", "seed", "d_coreset_full", "d_unit_full", "diff", "win")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """Resolved settings for one experiment run."""

    experiment: str
    N: int
    n: int
    M: int
    niter: int
    reps: int
    alpha: float = 1.0
    order: float = 2.0
    augment_observed: bool = True
    components: int = 3
    kernel_sd: float = 1.0
    mean_sd: float = 3.0
    min_separation: float = 0.0
    concentration: float = 1.0
    latent_scale: float = 1.0
    max_inner_iters: int = 50
    step_size: Optional[float] = None
    em_restarts: int = 3
    logistic_prior_sd: float = 1.0
    gibbs_sweeps: int = 200
    gibbs_keep: int = 100
    gibbs_components: int = 0
    gibbs_prop_conc: float = 1.0
    abc_S: int = 16
    abc_proposal_scale: float = 0.5
    abc_epsilon: Optional[float] = None
    prior_scale: float = 10.0
    master_seed: int = 0
    output_dir: str = "results"

    def validate(self):
        if self.experiment not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        for name in ("N", "n", "M", "niter", "components"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n > self.N:
            raise ConfigError("n cannot exceed N")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.latent_scale < 0:
            raise ConfigError("latent_scale must be >= 0")
        if self.min_separation < 0:
            raise ConfigError("min_separation must be >= 0")
        if self.gibbs_components < 0:
            raise ConfigError("gibbs_components must be >= 0")
        if self.gibbs_prop_conc <= 0:
            raise ConfigError("gibbs_prop_conc must be positive")
        if self.order < 1:
            raise ConfigError("order must be >= 1")
        return self

    def run_config(self, seed: int) -> CoresetRunConfig:
        return CoresetRunConfig(
            n=self.n,
            M=self.M,
            niter=self.niter,
            order=self.order,
            optimizer=OptimizerConfig(
                step_size=self.step_size, max_inner_iters=self.max_inner_iters
            ),
            seed=seed,
            augment_observed=self.augment_observed,
        )


# desk-scale defaults sized for the pinned runtime budgets; paper scale
# restores the source experiment sizes
_DESK = {
    "density": dict(N=500, n=50, M=200, niter=50, reps=30, components=3),
    "logistic": dict(
        N=2000, n=20, M=100, niter=50, reps=30, components=2, augment_observed=False
    ),
    "partition": dict(
        N=2000,
        n=50,
        M=200,
        niter=50,
        reps=30,
        components=6,
        augment_observed=False,
        # prior clusterings are resampled every iteration independently of
        # the data, so their latents only add noise to the matching at this
        # scale; weight the metric's y-part only and spend the saved budget
        # on a tighter inner optimization
        latent_scale=0.0,
        max_inner_iters=100,
        # six iid N(0, 9I) centers in the plane are typically ~1.4 apart,
        # an unresolvable blur at kernel sd 1; require actual clusters
        min_separation=2.5,
        # the reference analysis must infer the cluster count, not be
        # handed it: overfitted mixture with a sparse proportions prior
        gibbs_components=10,
        gibbs_prop_conc=0.1,
    ),
    "adaptive": dict(N=500, n=50, M=200, niter=50, reps=10, components=1),
}

_PAPER = {
    "density": dict(N=1000, reps=100),
    "logistic": dict(N=10_000, niter=100, reps=100),
    "partition": dict(N=10_000, M=500, reps=100),
    "adaptive": dict(N=1000, reps=20),
}


def default_config(kind: str, paper_scale: bool = False) -> ExperimentConfig:
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment {kind!r}")
    params = dict(_DESK[kind])
    if paper_scale:
        params.update(_PAPER[kind])
    return ExperimentConfig(experiment=kind, **params)


def resolve_config(
    kind: str,
    file_values: Optional[dict] = None,
    overrides: Optional[dict] = None,
    paper_scale: bool = False,
) -> ExperimentConfig:
    """Defaults, then config-file values, then explicit overrides."""
    cfg = default_config(kind, paper_scale)
    known = set(cfg.__dataclass_fields__)
    merged = {}
    if file_values:
        # top-level keys apply to every kind; a section named after the
        # kind overrides them
        for key, value in file_values.items():
            if key in EXPERIMENT_KINDS:
                continue
            merged[key] = value
        section = file_values.get(kind)
        if isinstance(section, dict):
            merged.update(section)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    for key, value in merged.items():
        if key == "experiment":
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, value, getattr(cfg, key)))
    return cfg.validate()


def _coerce(key, value, current):
    # TOML gives us typed values already; reject strings where the
    # default is numeric rather than failing later inside validate()
    if isinstance(current, bool) or key == "augment_observed":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(current, (int, float)) or current is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return value
    if isinstance(current, str) and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _separated_means(rng, k, sd, min_separation, tries=1000):
    """Component centers from N(0, sd^2 I_2), conditioned on resolvability.

    Redraws until every pair of centers is at least min_separation apart,
    so "k components" yields k visible clusters rather than a blur; with
    min_separation = 0 this is a plain prior draw. Keeps the best attempt
    if the bound is never met, so generation always terminates.
    """
    best, best_sep = None, -np.inf
    for _ in range(max(1, tries)):
        means = rng.normal(0.0, sd, size=(k, 2))
        if k == 1:
            return means
        sep = min(
            float(np.linalg.norm(means[i] - means[j]))
            for i in range(k)
            for j in range(i + 1, k)
        )
        if sep >= min_separation:
            return means
        if sep > best_sep:
            best, best_sep = means, sep
    return best


def generate_synthetic(kind: str, cfg: ExperimentConfig, rng: np.random.Generator):
    """Seeded synthetic dataset plus its ground-truth record."""
    if kind == "density":
        sigma2 = float(invgamma.rvs(1.0, scale=1.0, random_state=rng))
        means = rng.normal(0.0, np.sqrt(sigma2), size=cfg.components)
        labels = rng.integers(cfg.components, size=cfg.N)
        x = means[labels] + rng.standard_normal(cfg.N) * cfg.kernel_sd
        data = Dataset([Point(float(v)) for v in x])
        truth = {
            "kind": kind,
            "means": means.tolist(),
            "sigma2": sigma2,
            "kernel_sd": cfg.kernel_sd,
        }
        return data, truth
    if kind == "logistic":
        beta = rng.normal([0.5, 0.5], 1.0)
        x = rng.normal(0.0, np.sqrt(5.0), size=(cfg.N, 2))
        y = (rng.random(cfg.N) < expit(x @ beta)).astype(int)
        data = Dataset([Point(x[i], label=int(y[i])) for i in range(cfg.N)])
        return data, {"kind": kind, "beta": beta.tolist()}
    if kind == "partition":
        means = _separated_means(rng, cfg.components, cfg.mean_sd, cfg.min_separation)
        labels = rng.integers(cfg.components, size=cfg.N)
        x = means[labels] + rng.standard_normal((cfg.N, 2)) * cfg.kernel_sd
        data = Dataset([Point(row) for row in x])
        truth = {
            "kind": kind,
            "means": means.tolist(),
            "labels": labels.tolist(),
            "kernel_sd": cfg.kernel_sd,
        }
        return data, truth
    if kind == "adaptive":
        mu = float(rng.normal(0.0, np.sqrt(cfg.prior_scale)))
        x = mu + rng.standard_normal(cfg.N) * cfg.kernel_sd
        data = Dataset([Point(float(v)) for v in x])
        return data, {"kind": kind, "mu": mu, "kernel_sd": cfg.kernel_sd}
    raise ConfigError(f"unknown experiment {kind!r}")


def _density_hyperprior(cfg: ExperimentConfig):
    k = cfg.components

    def draw(rng):
        sigma2 = invgamma.rvs(1.0, scale=1.0, random_state=rng)
        return rng.normal(0.0, np.sqrt(sigma2), size=(k, 1))

    return draw


def build_coreset(data: Dataset, cfg: ExperimentConfig, seed: int):
    """Coreset weights and report for the configured experiment kind."""
    kind = cfg.experiment
    run_cfg = cfg.run_config(seed)
    if kind == "density":
        dp = DPConfig(
            alpha=cfg.alpha,
            base=GaussianMixtureBase(
                means=np.zeros((cfg.components, 1)), sds=cfg.kernel_sd
            ),
        )
        return run_predictive_coreset(
            data, dp, _density_hyperprior(cfg), GroundMetric.euclidean(2.0), run_cfg
        )
    if kind == "logistic":
        dp = DPConfig(
            alpha=cfg.alpha, base=BootstrapLogisticBase(covariates=data.coords)
        )
        hyperprior = lambda rng: rng.normal([0.5, 0.5], 1.0)
        return run_predictive_coreset(
            data, dp, hyperprior, GroundMetric.product_class(2.0), run_cfg
        )
    if kind == "partition":
        spec = MixtureSpec(
            dim=data.dim,
            kernel_sd=cfg.kernel_sd,
            mean_sd=cfg.mean_sd,
            concentration=cfg.concentration,
        )
        return run_partition_coreset(
            data,
            spec,
            run_cfg,
            metric=GroundMetric.latent_pair(2.0, latent_scale=cfg.latent_scale),
            dp=DPConfig(alpha=cfg.alpha, base=spec.joint_base()),
        )
    if kind == "adaptive":
        dp = DPConfig(
            alpha=cfg.alpha,
            base=GaussianMixtureBase(means=[[0.0]], sds=cfg.kernel_sd),
        )
        scale = np.sqrt(cfg.prior_scale)
        abc = ABCConfig(
            epsilon=cfg.abc_epsilon,
            S=cfg.abc_S,
            proposal_scale=cfg.abc_proposal_scale,
        )
        return run_adaptive_coreset(
            data,
            dp,
            abc,
            run_cfg,
            prior_density=lambda th: float(
                norm.pdf(np.atleast_1d(th)[0], 0.0, scale)
            ),
            theta0=np.array([0.0]),
            prior_sampler=lambda r: np.array([r.normal(0.0, scale)]),
        )
    raise ConfigError(f"unknown experiment {kind!r}")


def _unit_subset(data: Dataset, weights) -> Dataset:
    return data.subset(weights.support_indices)


def evaluate_rep(data: Dataset, weights, cfg: ExperimentConfig, rng):
    """ComparisonRecord for one rep, plus plot-ready fit extras.

    Every variant's fitter runs on an identical sampler stream (common
    random numbers), so the coreset-vs-unit comparison reflects the
    input data rather than sampler luck.
    """
    kind = cfg.experiment
    mean = data.coords.mean(axis=0)
    coreset_data = materialize_coreset(data, weights, mean)
    unit_data = _unit_subset(data, weights)
    eval_seed = int(rng.integers(0, 2**63 - 1))
    fresh_rng = lambda: np.random.default_rng(eval_seed)

    if kind in ("density", "adaptive"):
        grid = default_grid(data.coords)
        k = cfg.components
        fits = {}
        for name, d in (("full", data), ("coreset", coreset_data), ("unit", unit_data)):
            masses = np.full(len(d), 1.0 / len(d))
            fits[name] = fit_mixture_em(
                d.points, masses, K=k, rng=fresh_rng(), restarts=cfg.em_restarts,
                grid=grid,
            )
        record = compare_runs(
            fits["full"], fits["coreset"], fits["unit"], kl_discretized
        )
        extras = {
            "curve_x": grid,
            "curves": {name: fits[name].values for name in fits},
        }
        return record, extras

    if kind == "logistic":
        fits = {}
        for name, d in (("full", data), ("coreset", coreset_data), ("unit", unit_data)):
            fits[name] = fit_logistic_map(
                d.points, np.ones(len(d)), prior_sd=cfg.logistic_prior_sd
            )
        covariates = [Point(c) for c in data.coords]
        record = compare_runs(
            fits["full"],
            fits["coreset"],
            fits["unit"],
            lambda a, b: logit_l2_distance(a, b, covariates),
        )
        t = np.linspace(-6.0, 6.0, 121)
        curves = {
            name: expit(fits[name].beta[0] + fits[name].beta[1] * t)
            for name in fits
        }
        return record, {"curve_x": t, "curves": curves}

    if kind == "partition":
        k = cfg.gibbs_components or cfg.components
        parts = {}
        for name, d in (("full", data), ("coreset", coreset_data), ("unit", unit_data)):
            draws = gibbs_mixture(
                d.points,
                np.ones(len(d)),
                K=k,
                rng=fresh_rng(),
                sweeps=cfg.gibbs_sweeps,
                keep=cfg.gibbs_keep,
                kernel_sd=cfg.kernel_sd,
                mean_sd=cfg.mean_sd,
                prop_conc=cfg.gibbs_prop_conc,
            )
            parts[name] = assign_partition(draws, data.points, kernel_sd=cfg.kernel_sd)
        from .partitions import variation_of_information

        record = compare_runs(
            parts["full"],
            parts["coreset"],
            parts["unit"],
            variation_of_information,
        )
        top = max(parts[name].K for name in parts)
        curves = {
            name: np.pad(
                parts[name].cardinalities.astype(float),
                (0, top - parts[name].K),
            )
            for name in parts
        }
        extras = {
            "curve_x": np.arange(top, dtype=float),
            "curves": curves,
            "vi": {name: float(
                variation_of_information(parts[name], parts["full"])
            ) for name in parts},
        }
        return record, extras

    raise ConfigError(f"unknown experiment {kind!r}")


def _rep_seed(child: np.random.SeedSequence) -> int:
    return int(child.generate_state(1, dtype=np.uint64)[0])


def run_rep(cfg: ExperimentConfig, rep: int, child: np.random.SeedSequence):
    """One repetition: generate, build, evaluate. Returns a result row."""
    kids = child.spawn(3)
    data, truth = generate_synthetic(cfg.experiment, cfg, np.random.default_rng(kids[0]))
    run_seed = _rep_seed(kids[1])
    weights, report = build_coreset(data, cfg, run_seed)
    record, extras = evaluate_rep(data, weights, cfg, np.random.default_rng(kids[2]))
    row = {
        "rep": rep,
        "seed": run_seed,
        "d_coreset_full": record.d_coreset_full,
        "d_unit_full": record.d_unit_full,
        "diff": record.diff,
        "win": record.win,
    }
    return row, extras, report


def worker_count(reps: int) -> int:
    env = os.environ.get("PREDCORE_THREADS", "")
    try:
        cap = int(env) if env else 1
    except ValueError:
        cap = 1
    return max(1, min(cap, reps))


@dataclass
class RunManifest:
    """Inventory of one experiment run's outputs."""

    experiment: str
    version: str
    config_hash: str
    master_seed: int
    created_at: str
    rep_seeds: list
    files: dict
    failed_reps: list
    completed: bool

    def to_json(self, path=None) -> str:
        payload = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(payload)
        return payload


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_FIELDS)
        for row in rows:
            writer.writerow(
                [
                    row["rep"],
                    row["seed"],
                    repr(float(row["d_coreset_full"])),
                    repr(float(row["d_unit_full"])),
                    repr(float(row["diff"])),
                    int(row["win"]),
                ]
            )


def read_results_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(RESULT_FIELDS):
            raise ValueError(f"unexpected results header {reader.fieldnames!r}")
        for raw in reader:
            rows.append(
                {
                    "rep": int(raw["rep"]),
                    "seed": int(raw["seed"]),
                    "d_coreset_full": float(raw["d_coreset_full"]),
                    "d_unit_full": float(raw["d_unit_full"]),
                    "diff": float(raw["diff"]),
                    "win": bool(int(raw["win"])),
                }
            )
    return rows


def summarize(rows, bootstrap: int = 1000, seed: int = 0) -> dict:
    """Win fraction, difference moments, and a bootstrap interval."""
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to summarize")
    wins = np.array([r["win"] for r in rows], dtype=float)
    diffs = np.array([r["diff"] for r in rows], dtype=float)
    rng = np.random.default_rng(seed)
    frac = wins.mean()
    resamples = rng.choice(wins, size=(bootstrap, wins.size), replace=True).mean(axis=1)
    lo, hi = np.quantile(resamples, [0.025, 0.975])
    return {
        "records": len(rows),
        "win_fraction": float(frac),
        "win_fraction_ci95": [float(lo), float(hi)],
        "mean_diff": float(diffs.mean()),
        "median_diff": float(np.median(diffs)),
    }


def write_histogram_data(diffs, path, bins: int = 20) -> None:
    counts, edges = np.histogram(np.asarray(diffs, dtype=float), bins=bins)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for i, c in enumerate(counts):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])


def write_curve_data(extras, path) -> None:
    x = np.asarray(extras["curve_x"], dtype=float)
    names = sorted(extras["curves"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x"] + names)
        for i in range(x.size):
            writer.writerow(
                [repr(float(x[i]))]
                + [repr(float(extras["curves"][name][i])) for name in names]
            )


def run_experiment(cfg: ExperimentConfig, progress=None) -> RunManifest:
    """All repetitions of one experiment; writes the output inventory.

    Reps run in a thread pool capped by PREDCORE_THREADS (default 1) and
    are collected in rep order. A failed rep is recorded and skipped;
    the manifest then marks the run as partial.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(cfg.master_seed).spawn(cfg.reps)

    rows = []
    failed = []
    first_extras = None
    summary_extra = {}
    with ThreadPoolExecutor(max_workers=worker_count(cfg.reps)) as pool:
        futures = [
            pool.submit(run_rep, cfg, rep, children[rep]) for rep in range(cfg.reps)
        ]
        for rep, future in enumerate(futures):
            try:
                row, extras, report = future.result()
            except Exception as exc:  # noqa: BLE001 - rep isolation
                failed.append({"rep": rep, "error": f"{type(exc).__name__}: {exc}"})
                continue
            rows.append(row)
            if first_extras is None:
                first_extras = extras
            if hasattr(report, "acceptance_rate"):
                summary_extra.setdefault("acceptance_rates", []).append(
                    report.acceptance_rate
                )
            if "vi" in extras:
                summary_extra.setdefault("vi_coreset_full", []).append(
                    extras["vi"]["coreset"]
                )
            if progress is not None:
                progress(rep, row)

    files = {}
    results_path = out / "results.csv"
    write_results_csv(rows, results_path)
    files["results.csv"] = _sha256(results_path)

    if rows:
        summary = summarize(rows)
        summary["experiment"] = cfg.experiment
        summary["failed_reps"] = len(failed)
        for key, values in summary_extra.items():
            summary[key] = [float(v) for v in values]
        summary_path = out / "summary.json"
        summary_path.write_text(json.dumps(summary, indent=2))
        files["summary.json"] = _sha256(summary_path)

        hist_path = out / "hist_diff.csv"
        write_histogram_data([r["diff"] for r in rows], hist_path)
        files["hist_diff.csv"] = _sha256(hist_path)

    if first_extras is not None:
        curves_path = out / "curves.csv"
        write_curve_data(first_extras, curves_path)
        files["curves.csv"] = _sha256(curves_path)

    manifest = RunManifest(
        experiment=cfg.experiment,
        version=f"{__version__}+{_config_hash(cfg)[:12]}",
        config_hash=_config_hash(cfg),
        master_seed=cfg.master_seed,
        created_at=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        rep_seeds=[_rep_seed(c.spawn(3)[1]) for c in np.random.SeedSequence(
            cfg.master_seed
        ).spawn(cfg.reps)],
        files=files,
        failed_reps=failed,
        completed=not failed,
    )
    manifest.to_json(out / "manifest.json")
    return manifest
