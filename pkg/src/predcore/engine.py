"""Predictive coreset construction.

Per outer iteration: draw base parameters from the hyperprior, run the
urn once for the full data and once for the coreset support, then run
projected gradient descent on the weights so the coreset side's
empirical measure matches the full side's in Wasserstein distance. The
final weights average the per-iteration optima.

Both urn runs of an iteration share the drawn parameters, and the
coreset trajectory is sampled once and reused across all inner steps
(common random numbers), so the inner objective is deterministic in the
weights.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .measures import (
    Dataset,
    EmpiricalMeasure,
    GroundMetric,
    Point,
    center_dataset,
    points_to_arrays,
)
from .transport import DEFAULT_POLICY, SolverPolicy, cost_matrix, solve_plan
from .urn import DPConfig, UrnTrajectory, materialize_arrays, sample_trajectory

__all__ = [
    "OptimizerConfig",
    "CoresetRunConfig",
    "CoresetWeights",
    "InnerResult",
    "RunReport",
    "select_support",
    "inner_optimize",
    "run_predictive_coreset",
    "materialize_coreset",
    "save_weights_csv",
    "load_weights_csv",
]


@dataclass(frozen=True)
class OptimizerConfig:
    """Projected-gradient settings for the inner weight problem.

    step_size None resolves to 0.1 / sqrt(d) at run time. The objective
    is normalized by the support's mean squared norm, so this step size
    is scale-free.
    """

    step_size: Optional[float] = None
    max_inner_iters: int = 50
    grad_tol: float = 1e-8

    def __post_init__(self):
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be >= 1")


@dataclass(frozen=True)
class CoresetRunConfig:
    """Sizes, transport order, optimizer and solver settings for a run."""

    n: int
    M: int
    niter: int
    order: float = 2.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    policy: SolverPolicy = DEFAULT_POLICY
    seed: int = 0
    # True compares observed-plus-draws empiricals on both sides; False
    # compares the M urn draws alone.
    augment_observed: bool = True
    # reuse the full-data trajectory for the coreset side (requires
    # n == N); the self-consistency configuration.
    share_trajectory: bool = False

    def __post_init__(self):
        if self.n < 1 or self.M < 1 or self.niter < 1:
            raise ValueError("need n >= 1, M >= 1, niter >= 1")
        if self.order < 1:
            raise ValueError("transport order must be >= 1")


@dataclass(frozen=True, eq=False)
class CoresetWeights:
    """Nonnegative weights over a distinct index set into the dataset."""

    values: np.ndarray
    support_indices: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        idx = np.asarray(self.support_indices, dtype=int)
        if vals.ndim != 1 or vals.shape != idx.shape:
            raise ValueError("values and support_indices must be matching vectors")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("weights must be finite and nonnegative")
        if len(np.unique(idx)) != idx.shape[0]:
            raise ValueError("support indices must be distinct")
        vals = vals.copy()
        idx = idx.copy()
        vals.flags.writeable = False
        idx.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "support_indices", idx)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(eq=False)
class InnerResult:
    """One iteration's optimized weights plus diagnostics.

    Objectives are Wasserstein distances (order-p roots), so the trace
    is directly comparable across runs; the optimizer itself descends
    the scale-normalized raw cost, which orders identically.
    """

    weights: np.ndarray
    objective_trace: list
    initial_objective: float
    final_objective: float
    iters: int
    solver: str
    aborted: bool = False
    message: str = ""


def select_support(data: Dataset, n: int, rng: np.random.Generator) -> np.ndarray:
    """n distinct indices, uniform without replacement."""
    N = len(data)
    if not 1 <= n <= N:
        raise ValueError(f"coreset size {n} must be in 1..{N}")
    return rng.choice(N, size=n, replace=False)


class _InnerProblem:
    """Static per-iteration state: everything except the weights."""

    def __init__(self, full_arrays, full_masses, traj, support_arrays, metric, cfg):
        self.metric = metric
        self.cfg = cfg
        self.traj = traj
        self.sup_coords, self.sup_labels, self.sup_latents = support_arrays
        n, d = self.sup_coords.shape
        if traj.cond_size != n:
            raise ValueError("trajectory conditions on a different support size")
        self.full_arrays = full_arrays
        self.full_masses = full_masses

        kind, ref = traj.terminal_kind, traj.terminal_ref
        self.cond_mask = kind == 0
        self.cond_refs = ref[self.cond_mask]
        M = traj.steps

        # draw-level labels/latents and fresh coords never change with w
        draw_coords, draw_labels, draw_latents = materialize_arrays(
            traj, support_arrays
        )
        self.static_fresh = draw_coords[~self.cond_mask]
        if cfg.augment_observed:
            m_cs = n + M
            labels = latents = None
            if self.sup_labels is not None:
                labels = np.concatenate([self.sup_labels, draw_labels])
            if self.sup_latents is not None:
                latents = np.vstack([self.sup_latents, draw_latents])
            self.cs_labels, self.cs_latents = labels, latents
        else:
            m_cs = M
            self.cs_labels, self.cs_latents = draw_labels, draw_latents
        self.m_cs = m_cs
        self.cs_masses = np.full(m_cs, 1.0 / m_cs)
        self.n = n
        self.d = d
        self.M = M

        # scale normalizer: the objective divides by this so gradient
        # magnitudes (and the fixed step size) are unit-free
        s2 = float((self.sup_coords ** 2).sum(axis=1).mean())
        self.s2 = s2 if s2 > 0 else 1.0

        self.line = (
            metric.kind == "euclidean" and d == 1 and self.full_arrays[1] is None
        )
        self._warm = None

    def cs_coords(self, w):
        scaled = self.sup_coords * w[:, None]
        draws = np.empty((self.M, self.d))
        draws[self.cond_mask] = scaled[self.cond_refs]
        draws[~self.cond_mask] = self.static_fresh
        if self.cfg.augment_observed:
            return np.vstack([scaled, draws])
        return draws

    def solve(self, w):
        coords = self.cs_coords(w)
        cs_arrays = (coords, self.cs_labels, self.cs_latents)
        C = cost_matrix(self.metric, self.cfg.order, self.full_arrays, cs_arrays)
        coupling = solve_plan(
            self.full_masses,
            self.cs_masses,
            C,
            order=self.cfg.order,
            policy=self.cfg.policy,
            warm=self._warm,
            line_coords=(self.full_arrays[0][:, 0], coords[:, 0])
            if self.line
            else None,
        )
        if coupling.solver == "sinkhorn":
            self._warm = coupling.potentials
        return coupling, cs_arrays

    def grad_w(self, coupling, cs_arrays):
        """Pull the coordinate gradient back onto the weights.

        Every coreset-side coordinate that depends on w_i equals
        w_i * support_i, so its contribution is a dot product with the
        support coordinates, scattered by the resolution chains.
        """
        from .transport import _grad_arrays

        g = _grad_arrays(
            coupling.plan,
            self.metric,
            self.cfg.order,
            self.full_arrays,
            cs_arrays,
            "target",
        )
        contrib = np.zeros(self.n)
        if self.cfg.augment_observed:
            g_sup, g_draws = g[: self.n], g[self.n :]
            contrib += (g_sup * self.sup_coords).sum(axis=1)
        else:
            g_draws = g
        dots = (g_draws[self.cond_mask] * self.sup_coords[self.cond_refs]).sum(axis=1)
        np.add.at(contrib, self.cond_refs, dots)
        return contrib / self.s2


def inner_optimize(
    full_side: EmpiricalMeasure,
    coreset_traj: UrnTrajectory,
    support_points: Sequence[Point],
    metric: GroundMetric,
    cfg: CoresetRunConfig,
    init=None,
) -> InnerResult:
    """Projected gradient descent on the weights for one trajectory.

    Starts from unit weights unless init is given, clamps at zero, and
    returns the best iterate by objective value, so the result never
    scores worse than the initial point.
    """
    support_arrays = points_to_arrays(list(support_points))
    return _optimize_arrays(
        full_side.arrays, full_side.masses, coreset_traj, support_arrays, metric, cfg, init
    )


def _optimize_arrays(
    full_arrays, full_masses, traj, support_arrays, metric, cfg, init=None
) -> InnerResult:
    prob = _InnerProblem(full_arrays, full_masses, traj, support_arrays, metric, cfg)
    opt = cfg.optimizer
    eta = opt.step_size if opt.step_size is not None else 0.1 / np.sqrt(prob.d)

    w = np.ones(prob.n) if init is None else np.asarray(init, dtype=float).copy()
    if w.shape != (prob.n,) or np.any(w < 0):
        raise ValueError("init weights must be a nonnegative length-n vector")

    def abort(msg, trace, iters):
        return InnerResult(
            weights=w,
            objective_trace=trace,
            initial_objective=trace[0] if trace else np.nan,
            final_objective=trace[-1] if trace else np.nan,
            iters=iters,
            solver="",
            aborted=True,
            message=msg,
        )

    try:
        coupling, cs_arrays = prob.solve(w)
    except (ValueError, RuntimeError) as e:  # solver failure
        return abort(f"initial solve failed: {e}", [], 0)
    J = coupling.raw_cost / prob.s2
    if not np.isfinite(J):
        return abort("non-finite objective at init", [coupling.cost], 0)

    trace = [coupling.cost]
    best_w, best_J, best_cost = w.copy(), J, coupling.cost
    solver = coupling.solver
    it = 0
    for it in range(1, opt.max_inner_iters + 1):
        g = prob.grad_w(coupling, cs_arrays)
        proj_g = np.where((w <= 0) & (g > 0), 0.0, g)
        if np.max(np.abs(proj_g)) <= opt.grad_tol:
            break
        w = np.maximum(w - eta * g, 0.0)
        try:
            coupling, cs_arrays = prob.solve(w)
        except (ValueError, RuntimeError) as e:
            return abort(f"solve failed at iter {it}: {e}", trace, it)
        J = coupling.raw_cost / prob.s2
        if not np.isfinite(J):
            return abort(f"non-finite objective at iter {it}", trace, it)
        trace.append(coupling.cost)
        if J < best_J:
            best_J, best_w, best_cost = J, w.copy(), coupling.cost

    return InnerResult(
        weights=best_w,
        objective_trace=trace,
        initial_objective=trace[0],
        final_objective=best_cost,
        iters=it,
        solver=solver,
    )


@dataclass(eq=False)
class RunReport:
    """Per-run diagnostics, serializable to JSON."""

    n: int
    N: int
    M: int
    niter: int
    order: float
    augment_observed: bool
    share_trajectory: bool
    seed: int
    aborted_iterations: int
    wall_time_s: float
    iterations: list

    def to_json(self, path=None) -> str:
        payload = json.dumps(self.__dict__, indent=2, default=_jsonable)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(payload)
        return payload


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def run_predictive_coreset(
    data: Dataset,
    dp: DPConfig,
    hyperprior: Optional[Callable[[np.random.Generator], object]],
    metric: GroundMetric,
    cfg: CoresetRunConfig,
    support_indices=None,
):
    """Full pipeline: returns averaged CoresetWeights and a RunReport.

    The data is centered before the urns run; weights therefore scale
    centered coordinates. Iterations whose inner solve aborts are
    excluded from the average and counted in the report.
    """
    t0 = time.monotonic()
    N = len(data)
    if cfg.n > N:
        raise ValueError(f"coreset size {cfg.n} exceeds dataset size {N}")
    if cfg.share_trajectory and cfg.n != N:
        raise ValueError("share_trajectory requires n == N")

    centered, _mean = center_dataset(data)
    data_arrays = points_to_arrays(centered.points)

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.niter + 1)
    if support_indices is not None:
        support = np.asarray(support_indices, dtype=int)
        if len(np.unique(support)) != cfg.n:
            raise ValueError("support_indices must be cfg.n distinct indices")
    elif cfg.share_trajectory:
        # identity support so both sides resolve to the same atoms
        support = np.arange(N)
    else:
        support = select_support(data, cfg.n, np.random.default_rng(seeds[0]))
    sup_coords = data_arrays[0][support]
    sup_labels = None if data_arrays[1] is None else data_arrays[1][support]
    sup_latents = None if data_arrays[2] is None else data_arrays[2][support]
    support_arrays = (sup_coords, sup_labels, sup_latents)

    weight_sum = np.zeros(cfg.n)
    kept = 0
    iterations = []
    for t in range(cfg.niter):
        rng = np.random.default_rng(seeds[t + 1])
        theta = hyperprior(rng) if hyperprior is not None else None
        full_traj = sample_trajectory(N, dp, cfg.M, rng, theta=theta)
        cs_traj = (
            full_traj
            if cfg.share_trajectory
            else sample_trajectory(cfg.n, dp, cfg.M, rng, theta=theta)
        )
        draws = materialize_arrays(full_traj, data_arrays)
        if cfg.augment_observed:
            full_arrays = _concat_arrays(data_arrays, draws)
            full_masses = np.full(N + cfg.M, 1.0 / (N + cfg.M))
        else:
            full_arrays = draws
            full_masses = np.full(cfg.M, 1.0 / cfg.M)

        res = _optimize_arrays(
            full_arrays, full_masses, cs_traj, support_arrays, metric, cfg
        )
        if not res.aborted:
            weight_sum += res.weights
            kept += 1
        iterations.append(
            {
                "theta": None if theta is None else np.asarray(theta).tolist(),
                "initial_objective": res.initial_objective,
                "final_objective": res.final_objective,
                "iters": res.iters,
                "solver": res.solver,
                "aborted": res.aborted,
                "message": res.message,
                "weights": None if res.aborted else res.weights.tolist(),
            }
        )

    if kept == 0:
        raise RuntimeError("every iteration aborted; no weights to average")
    weights = CoresetWeights(values=weight_sum / kept, support_indices=support)
    report = RunReport(
        n=cfg.n,
        N=N,
        M=cfg.M,
        niter=cfg.niter,
        order=cfg.order,
        augment_observed=cfg.augment_observed,
        share_trajectory=cfg.share_trajectory,
        seed=cfg.seed,
        aborted_iterations=cfg.niter - kept,
        wall_time_s=time.monotonic() - t0,
        iterations=iterations,
    )
    return weights, report


def _concat_arrays(a, b):
    coords = np.vstack([a[0], b[0]])
    labels = None
    if a[1] is not None:
        if b[1] is None:
            raise ValueError("cannot mix labelled and unlabelled sides")
        labels = np.concatenate([a[1], b[1]])
    latents = None
    if a[2] is not None:
        if b[2] is None:
            raise ValueError("cannot mix latent and non-latent sides")
        latents = np.vstack([a[2], b[2]])
    return coords, labels, latents


def materialize_coreset(data: Dataset, weights: CoresetWeights, mean) -> Dataset:
    """Transformed coreset points mean + w_i * (y_i - mean).

    Labels and latent vectors carry through unscaled; this is the input
    handed to downstream inference.
    """
    mean = np.asarray(mean, dtype=float)
    pts = []
    for w, idx in zip(weights.values, weights.support_indices):
        p = data.points[int(idx)]
        pts.append(
            Point(mean + w * (p.coords - mean), label=p.label, latent=p.latent)
        )
    return Dataset(tuple(pts), id=data.id + "-coreset")


def save_weights_csv(weights: CoresetWeights, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "weight"])
        for idx, w in zip(weights.support_indices, weights.values):
            writer.writerow([int(idx), repr(float(w))])


def load_weights_csv(path) -> CoresetWeights:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["index", "weight"]:
            raise ValueError(f"unexpected weights header {header!r}")
        idx, vals = [], []
        for row in reader:
            idx.append(int(row[0]))
            vals.append(float(row[1]))
    return CoresetWeights(values=np.array(vals), support_indices=np.array(idx))
