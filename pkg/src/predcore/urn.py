"""Dirichlet-process posterior-predictive sampling via the Polya urn.

Trajectories are index-reparametrized: sampling records, per step, either
a fresh base draw (payload stored) or the index of an existing atom among
the conditioning slots and previous draws. Resolving those indices against
concrete (possibly reweighted) conditioning points happens later, so one
trajectory gives a deterministic map from weights to materialized points.
That common-random-numbers structure is what makes the inner weight
optimization a deterministic problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .measures import Dataset, EmpiricalMeasure, Point, empirical_from

__all__ = [
    "BaseMeasure",
    "GaussianMixtureBase",
    "BootstrapLogisticBase",
    "JointMixtureBase",
    "DPConfig",
    "UrnTrajectory",
    "sample_trajectory",
    "materialize",
    "materialize_coords",
    "materialize_arrays",
    "predictive_sample",
]


class BaseMeasure:
    """Seedable sampler of Points; theta reparametrizes the draw."""

    def sample(self, rng: np.random.Generator, size: int, theta=None) -> list[Point]:
        raise NotImplementedError


class GaussianMixtureBase(BaseMeasure):
    """Equal-or-given-weight Gaussian location mixture.

    theta, when passed, replaces the component means (k, d).
    """

    def __init__(self, means, sds=1.0, weights=None):
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        k = self.means.shape[0]
        self.sds = np.broadcast_to(np.asarray(sds, dtype=float), (k,)).copy()
        if np.any(self.sds <= 0):
            raise ValueError("component sds must be positive")
        if weights is None:
            weights = np.full(k, 1.0 / k)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (k,) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must match components and sum to 1")

    def sample(self, rng, size, theta=None):
        means = self.means if theta is None else np.atleast_2d(np.asarray(theta, float))
        k, d = means.shape
        comps = rng.choice(k, size=size, p=self.weights)
        draws = means[comps] + rng.standard_normal((size, d)) * self.sds[comps][:, None]
        return [Point(draws[i]) for i in range(size)]


class BootstrapLogisticBase(BaseMeasure):
    """Covariate bootstrap with a logistic label model.

    Covariates are resampled uniformly from the pool; the label is
    Bernoulli with success probability expit(x @ beta). theta replaces
    the coefficient vector.
    """

    def __init__(self, covariates, beta=None):
        self.covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        self.beta = None if beta is None else np.asarray(beta, dtype=float)

    def sample(self, rng, size, theta=None):
        beta = self.beta if theta is None else np.asarray(theta, dtype=float)
        if beta is None:
            raise ValueError("logistic base needs a coefficient vector")
        idx = rng.integers(self.covariates.shape[0], size=size)
        x = self.covariates[idx]
        p = expit(x @ beta)
        y = (rng.random(size) < p).astype(int)
        return [Point(x[i], label=int(y[i])) for i in range(size)]


class JointMixtureBase(BaseMeasure):
    """Draws (y, theta) pairs: theta from a Gaussian prior, y around it.

    Models a mixture base where a cluster location comes first and the
    observation is a Gaussian kernel draw at that location.
    """

    def __init__(self, dim, kernel_sd=1.0, mean_sd=3.0):
        if kernel_sd <= 0 or mean_sd <= 0:
            raise ValueError("scales must be positive")
        self.dim = int(dim)
        self.kernel_sd = float(kernel_sd)
        self.mean_sd = float(mean_sd)

    def sample(self, rng, size, theta=None):
        centers = rng.standard_normal((size, self.dim)) * self.mean_sd
        ys = centers + rng.standard_normal((size, self.dim)) * self.kernel_sd
        return [Point(ys[i], latent=centers[i]) for i in range(size)]


@dataclass(frozen=True)
class DPConfig:
    """Concentration and base measure of the Dirichlet process."""

    alpha: float
    base: Optional[BaseMeasure] = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0 (0 is the bootstrap limit)")
        if self.alpha > 0 and self.base is None:
            raise ValueError("alpha > 0 requires a base measure")


@dataclass(frozen=True, eq=False)
class UrnTrajectory:
    """One urn run: per-step sources plus fresh-draw payloads.

    sources[t] is -1 for a fresh draw, else an index below cond_size + t:
    indices below cond_size point at conditioning slots, the rest at
    previous steps. Resolution chains only ever point backwards.
    """

    cond_size: int
    sources: np.ndarray
    fresh_points: tuple[Point, ...]

    def __post_init__(self):
        src = np.asarray(self.sources, dtype=int)
        src.flags.writeable = False
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "fresh_points", tuple(self.fresh_points))
        if int((src == -1).sum()) != len(self.fresh_points):
            raise ValueError("fresh payload count does not match fresh steps")
        for t, s in enumerate(src):
            if s != -1 and not 0 <= s < self.cond_size + t:
                raise ValueError(f"step {t} source {s} out of range")

    @property
    def steps(self) -> int:
        return self.sources.shape[0]

    @property
    def fresh_count(self) -> int:
        return len(self.fresh_points)

    @cached_property
    def _terminal(self):
        """Per step: (kind, ref) with kind 0 = conditioning atom, 1 = fresh.

        ref is the conditioning index or the fresh-payload slot. One
        backward-chasing pass; later steps reuse earlier resolutions.
        """
        M = self.steps
        kind = np.empty(M, dtype=np.int8)
        ref = np.empty(M, dtype=int)
        fresh_slot = 0
        for t in range(M):
            s = self.sources[t]
            if s == -1:
                kind[t] = 1
                ref[t] = fresh_slot
                fresh_slot += 1
            elif s < self.cond_size:
                kind[t] = 0
                ref[t] = s
            else:
                prev = s - self.cond_size
                kind[t] = kind[prev]
                ref[t] = ref[prev]
        return kind, ref

    @property
    def terminal_kind(self) -> np.ndarray:
        return self._terminal[0]

    @property
    def terminal_ref(self) -> np.ndarray:
        return self._terminal[1]


def sample_trajectory(
    cond_size: int,
    config: DPConfig,
    M: int,
    rng: np.random.Generator,
    theta=None,
) -> UrnTrajectory:
    """Run the urn for M steps conditioned on cond_size existing slots.

    Step t draws fresh from the base with probability
    alpha / (alpha + cond_size + t), else picks uniformly among the
    conditioning slots and previous draws. Only indices are stored.
    """
    if cond_size < 0 or M < 1:
        raise ValueError("need cond_size >= 0 and M >= 1")
    alpha = config.alpha
    if alpha == 0 and cond_size == 0:
        raise ValueError("alpha = 0 with an empty conditioning set cannot draw")
    sources = np.empty(M, dtype=int)
    for t in range(M):
        total = cond_size + t
        if alpha > 0 and rng.random() * (alpha + total) < alpha:
            sources[t] = -1
        else:
            sources[t] = int(rng.integers(total))
    n_fresh = int((sources == -1).sum())
    fresh = config.base.sample(rng, n_fresh, theta=theta) if n_fresh else []
    return UrnTrajectory(cond_size=cond_size, sources=sources, fresh_points=fresh)


def _check_weights(weights, cond_size):
    w = np.asarray(weights, dtype=float)
    if w.shape != (cond_size,):
        raise ValueError(f"weights must have length {cond_size}, got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    return w


def materialize_coords(
    traj: UrnTrajectory, cond_coords: np.ndarray, weights=None
) -> np.ndarray:
    """(M, d) coordinates of the resolved draws; fresh payloads untouched.

    Conditioning atom i resolves to weights[i] * cond_coords[i]. This is
    the hot path: a pure gather, deterministic in the weights.
    """
    cond_coords = np.atleast_2d(np.asarray(cond_coords, dtype=float))
    if cond_coords.shape[0] != traj.cond_size:
        raise ValueError("conditioning points do not match trajectory cond_size")
    kind, ref = traj.terminal_kind, traj.terminal_ref
    if weights is None:
        scaled = cond_coords
    else:
        w = _check_weights(weights, traj.cond_size)
        scaled = cond_coords * w[:, None]
    out = np.empty((traj.steps, cond_coords.shape[1]))
    cond_mask = kind == 0
    out[cond_mask] = scaled[ref[cond_mask]]
    if traj.fresh_count:
        fresh_coords = np.stack([p.coords for p in traj.fresh_points])
        if fresh_coords.shape[1] != cond_coords.shape[1]:
            raise ValueError("base draws do not match conditioning dimension")
        out[~cond_mask] = fresh_coords[ref[~cond_mask]]
    return out


def materialize_arrays(traj: UrnTrajectory, cond_arrays, weights=None):
    """Resolved draws as a (coords, labels, latents) triple.

    cond_arrays is the (coords, labels, latents) stacking of the
    conditioning points. Only coordinates are weight-scaled; labels and
    latent vectors are gathered unchanged. Triple slots are None when
    neither side carries them.
    """
    cond_coords, cond_labels, cond_latents = cond_arrays
    coords = materialize_coords(traj, cond_coords, weights)
    kind, ref = traj.terminal_kind, traj.terminal_ref
    cond_mask = kind == 0

    def gather(cond_values, fresh_values, name):
        if cond_values is None:
            return None
        if traj.fresh_count and fresh_values is None:
            raise ValueError(f"base draws lack {name} present on conditioning points")
        out = np.empty((traj.steps,) + cond_values.shape[1:], dtype=cond_values.dtype)
        out[cond_mask] = cond_values[ref[cond_mask]]
        if traj.fresh_count:
            out[~cond_mask] = fresh_values[ref[~cond_mask]]
        return out

    fresh_labels = None
    fresh_latents = None
    if traj.fresh_count:
        if traj.fresh_points[0].label is not None:
            fresh_labels = np.array([p.label for p in traj.fresh_points], dtype=int)
        if traj.fresh_points[0].latent is not None:
            fresh_latents = np.stack([p.latent for p in traj.fresh_points])
    labels = gather(cond_labels, fresh_labels, "labels")
    latents = gather(cond_latents, fresh_latents, "latent vectors")
    return coords, labels, latents


def materialize(
    traj: UrnTrajectory, cond_points: Sequence[Point], weights=None
) -> list[Point]:
    """Resolve a trajectory to concrete points.

    Conditioning atoms are scaled coordinate-wise by their weight (unit
    weights when absent); labels and latent vectors pass through
    unscaled. Fresh draws keep their stored payload: urn draws are not
    part of the coreset support, so they are never reweighted.
    """
    if len(cond_points) != traj.cond_size:
        raise ValueError("conditioning points do not match trajectory cond_size")
    if weights is not None:
        weights = _check_weights(weights, traj.cond_size)
    kind, ref = traj.terminal_kind, traj.terminal_ref
    out = []
    for t in range(traj.steps):
        if kind[t] == 1:
            out.append(traj.fresh_points[ref[t]])
            continue
        src = cond_points[ref[t]]
        if weights is None:
            out.append(src)
        else:
            out.append(
                Point(src.coords * weights[ref[t]], label=src.label, latent=src.latent)
            )
    return out


def predictive_sample(
    data: Dataset, config: DPConfig, M: int, rng: np.random.Generator, theta=None
) -> EmpiricalMeasure:
    """Unit-weight posterior-predictive sample conditioned on a dataset."""
    traj = sample_trajectory(len(data), config, M, rng, theta=theta)
    return empirical_from(materialize(traj, data.points))
