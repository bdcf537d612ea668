"""Likelihood-free hyperparameter adaptation for the coreset run.

Instead of drawing the urn's hyperparameter fresh from the prior each
outer iteration, a Metropolis-Hastings chain with an ABC acceptance
ratio walks it toward regions where simulated data look like the
observed subsample. The acceptance ratio compares, for proposal and
current state, how many of S pseudo-datasets land within Wasserstein
tolerance epsilon of the observed points; prior densities multiply the
hit counts. Both hit counts are re-simulated every step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engine import (
    CoresetRunConfig,
    CoresetWeights,
    RunReport,
    _concat_arrays,
    _optimize_arrays,
    select_support,
)
from .measures import Dataset, GroundMetric, Point, center_dataset, points_to_arrays
from .transport import wasserstein
from .urn import DPConfig, materialize_arrays, sample_trajectory

__all__ = [
    "ABCConfig",
    "ABCState",
    "AdaptiveRunReport",
    "abc_acceptance",
    "calibrate_epsilon",
    "run_abc_chain",
    "run_adaptive_coreset",
]


@dataclass(frozen=True)
class ABCConfig:
    """Tolerance, simulation budget, and discrepancy for the ABC kernel.

    epsilon None means: calibrate to the 10% quantile of the distances
    between the observed points and 100 prior-predictive pseudo-datasets
    before the chain starts. Infinity is allowed and accepts everything.
    """

    epsilon: Optional[float] = None
    S: int = 16
    pseudo_size: Optional[int] = None
    proposal_scale: float = 1.0
    metric: GroundMetric = GroundMetric.euclidean()
    order: float = 2.0

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive (or None to calibrate)")
        if self.S < 1:
            raise ValueError("S must be >= 1")
        if self.pseudo_size is not None and self.pseudo_size < 1:
            raise ValueError("pseudo_size must be >= 1")
        if np.any(np.asarray(self.proposal_scale) < 0):
            raise ValueError("proposal_scale must be >= 0")


@dataclass(eq=False)
class ABCState:
    """Current chain position, its last hit count, and the history."""

    theta: np.ndarray
    hits: int
    trace: list

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))


def _acceptance_ratio(prior_prop, hits_prop, prior_cur, hits_cur) -> float:
    """min(1, [prior* x hits*] / [prior x hits]) with zero-safe edges."""
    num = float(prior_prop) * hits_prop
    den = float(prior_cur) * hits_cur
    if hits_prop == 0 and hits_cur == 0:
        return 0.0
    if den <= 0.0:
        return 1.0 if num > 0.0 else 0.0
    return min(1.0, num / den)


def _hit_count(points, theta, size, cfg: ABCConfig, simulator, rng) -> int:
    hits = 0
    for _ in range(cfg.S):
        pseudo = list(simulator(theta, size, rng))
        d = wasserstein(points, pseudo, cfg.metric, order=cfg.order).cost
        hits += d <= cfg.epsilon
    return hits


def abc_acceptance(
    theta_cur,
    theta_prop,
    data_sub: Dataset,
    cfg: ABCConfig,
    prior_density: Callable,
    simulator: Callable,
    rng: np.random.Generator,
):
    """Acceptance probability of the ABC-MH step and the proposal's hits.

    Simulates S pseudo-datasets from the proposal and S from the current
    state (non-sticky: the current state's evidence is refreshed too),
    counts those within epsilon of the observed points, and forms
    min(1, prior(prop) hits(prop) / prior(cur) hits(cur)). Both counts
    zero means reject.
    """
    if cfg.epsilon is None:
        raise ValueError("epsilon not set; calibrate first")
    points = list(data_sub.points)
    size = cfg.pseudo_size if cfg.pseudo_size is not None else len(points)
    hits_prop = _hit_count(points, theta_prop, size, cfg, simulator, rng)
    hits_cur = _hit_count(points, theta_cur, size, cfg, simulator, rng)
    rho = _acceptance_ratio(
        prior_density(theta_prop), hits_prop, prior_density(theta_cur), hits_cur
    )
    return rho, hits_prop


def calibrate_epsilon(
    data_sub: Dataset,
    cfg: ABCConfig,
    prior_sampler: Callable,
    simulator: Callable,
    rng: np.random.Generator,
    draws: int = 100,
    quantile: float = 0.10,
) -> float:
    """Tolerance at the given quantile of prior-predictive distances."""
    points = list(data_sub.points)
    size = cfg.pseudo_size if cfg.pseudo_size is not None else len(points)
    dists = np.empty(draws)
    for i in range(draws):
        theta = prior_sampler(rng)
        pseudo = list(simulator(theta, size, rng))
        dists[i] = wasserstein(points, pseudo, cfg.metric, order=cfg.order).cost
    eps = float(np.quantile(dists, quantile))
    # all-zero distances would make the kernel degenerate
    return max(eps, 1e-12)


def _initial_state(points, theta0, cfg, simulator, prior_sampler, rng) -> ABCState:
    """Chain start; cold starts with zero evidence re-draw from the prior.

    The zero/zero rejection rule means a state whose pseudo-datasets
    never land within epsilon can only be left via a proposal that has
    evidence, which a local random walk may never find. When theta0 has
    zero hits and a prior sampler is available, up to 200 prior draws
    are tried and the first with a hit becomes the start.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    size = cfg.pseudo_size if cfg.pseudo_size is not None else len(points)
    hits = _hit_count(points, theta0, size, cfg, simulator, rng)
    if hits == 0 and prior_sampler is not None:
        for _ in range(200):
            cand = np.atleast_1d(np.asarray(prior_sampler(rng), dtype=float))
            cand_hits = _hit_count(points, cand, size, cfg, simulator, rng)
            if cand_hits > 0:
                theta0, hits = cand, cand_hits
                break
    return ABCState(theta=theta0, hits=hits, trace=[theta0.copy()])


def _mh_step(state: ABCState, data_sub, cfg, prior_density, simulator, rng) -> bool:
    scale = np.asarray(cfg.proposal_scale, dtype=float)
    prop = state.theta + scale * rng.standard_normal(state.theta.shape)
    rho, hits_prop = abc_acceptance(
        state.theta, prop, data_sub, cfg, prior_density, simulator, rng
    )
    accepted = rng.random() < rho
    if accepted:
        state.theta = prop
        state.hits = hits_prop
    state.trace.append(state.theta.copy())
    return accepted


def run_abc_chain(
    data_sub: Dataset,
    cfg: ABCConfig,
    prior_density: Callable,
    simulator: Callable,
    theta0,
    steps: int,
    rng: np.random.Generator,
    prior_sampler: Optional[Callable] = None,
):
    """ABC-MH chain over theta; returns (trace, acceptance_rate, epsilon).

    The trace has steps + 1 rows and starts at theta0. When cfg.epsilon
    is None a prior_sampler is required for the calibration pre-pass.
    """
    if cfg.epsilon is None:
        if prior_sampler is None:
            raise ValueError("epsilon calibration needs a prior_sampler")
        eps = calibrate_epsilon(data_sub, cfg, prior_sampler, simulator, rng)
        cfg = ABCConfig(
            epsilon=eps,
            S=cfg.S,
            pseudo_size=cfg.pseudo_size,
            proposal_scale=cfg.proposal_scale,
            metric=cfg.metric,
            order=cfg.order,
        )
    state = _initial_state(
        list(data_sub.points), theta0, cfg, simulator, prior_sampler, rng
    )
    accepts = 0
    for _ in range(steps):
        accepts += _mh_step(state, data_sub, cfg, prior_density, simulator, rng)
    rate = accepts / steps if steps else 0.0
    return np.stack(state.trace), rate, cfg.epsilon


@dataclass(eq=False)
class AdaptiveRunReport(RunReport):
    """Run diagnostics plus the hyperparameter chain's behavior."""

    theta_trace: list
    acceptance_rate: float
    epsilon: float
    chain_stuck: bool


def run_adaptive_coreset(
    data: Dataset,
    dp: DPConfig,
    abc: ABCConfig,
    cfg: CoresetRunConfig,
    prior_density: Callable,
    theta0,
    metric: Optional[GroundMetric] = None,
    simulator: Optional[Callable] = None,
    prior_sampler: Optional[Callable] = None,
    support_indices=None,
):
    """Coreset run whose hyperparameter evolves by the ABC-MH kernel.

    Identical to the plain run except theta_t comes from one MH step per
    outer iteration instead of an independent prior draw. The chain has
    its own random stream, so with proposal_scale 0 the run reproduces
    the plain run at fixed theta0 under the same seed. The discrepancy
    compares pseudo-datasets against the centered support points. A
    chain that never accepts still yields weights, flagged in the report.
    """
    t0 = time.monotonic()
    N = len(data)
    if cfg.n > N:
        raise ValueError(f"coreset size {cfg.n} exceeds dataset size {N}")
    if cfg.share_trajectory and cfg.n != N:
        raise ValueError("share_trajectory requires n == N")
    if metric is None:
        metric = GroundMetric.euclidean(2.0)
    if simulator is None:
        if dp.base is None:
            raise ValueError("need a simulator or a DP base measure")
        simulator = lambda theta, size, srng: dp.base.sample(srng, size, theta=theta)

    centered, _mean = center_dataset(data)
    data_arrays = points_to_arrays(centered.points)

    # one extra child: the MH chain consumes randomness from its own
    # stream so iteration streams match the plain run's exactly
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.niter + 2)
    if support_indices is not None:
        support = np.asarray(support_indices, dtype=int)
        if len(np.unique(support)) != cfg.n:
            raise ValueError("support_indices must be cfg.n distinct indices")
    elif cfg.share_trajectory:
        support = np.arange(N)
    else:
        support = select_support(data, cfg.n, np.random.default_rng(seeds[0]))
    sup_coords = data_arrays[0][support]
    sup_labels = None if data_arrays[1] is None else data_arrays[1][support]
    sup_latents = None if data_arrays[2] is None else data_arrays[2][support]
    support_arrays = (sup_coords, sup_labels, sup_latents)
    data_sub = Dataset(
        [centered.points[i] for i in support]
    )

    chain_rng = np.random.default_rng(seeds[cfg.niter + 1])
    if abc.epsilon is None:
        if prior_sampler is None:
            raise ValueError("epsilon calibration needs a prior_sampler")
        eps = calibrate_epsilon(data_sub, abc, prior_sampler, simulator, chain_rng)
        abc = ABCConfig(
            epsilon=eps,
            S=abc.S,
            pseudo_size=abc.pseudo_size,
            proposal_scale=abc.proposal_scale,
            metric=abc.metric,
            order=abc.order,
        )
    state = _initial_state(
        list(data_sub.points), theta0, abc, simulator, prior_sampler, chain_rng
    )

    weight_sum = np.zeros(cfg.n)
    kept = 0
    accepts = 0
    iterations = []
    for t in range(cfg.niter):
        accepts += _mh_step(
            state, data_sub, abc, prior_density, simulator, chain_rng
        )
        theta = state.theta
        rng = np.random.default_rng(seeds[t + 1])
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
                "theta": theta.tolist(),
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
    rate = accepts / cfg.niter
    report = AdaptiveRunReport(
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
        theta_trace=[row.tolist() for row in state.trace],
        acceptance_rate=rate,
        epsilon=abc.epsilon,
        chain_stuck=accepts == 0,
    )
    return weights, report
