"""Downstream weighted inference and the divergences used to score coresets.

A coreset is judged by refitting the downstream model three ways: on the
full data, on the weighted (transformed) coreset, and on the plain
unit-weight subsample, then comparing divergences to the full-data fit.
The fitters here are deliberately simple point estimators: weighted EM
for mixture densities, a damped-Newton MAP for logistic regression, and
a small Gibbs sampler for finite-mixture clusterings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logsumexp

from .measures import Point, points_to_arrays
from .partitions import Partition, cluster_point_estimate

__all__ = [
    "DensityEstimate",
    "LogitFit",
    "ComparisonRecord",
    "default_grid",
    "fit_mixture_em",
    "fit_logistic_map",
    "kl_discretized",
    "logit_l2_distance",
    "gibbs_mixture",
    "assign_partition",
    "compare_runs",
]

_VAR_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Density values on an ordered 1-d grid, trapezoid-normalized."""

    grid: np.ndarray
    values: np.ndarray
    params: Optional[dict] = None
    floored: bool = False

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValueError("grid and values must be matching 1-d vectors")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite and >= 0")
        total = np.trapezoid(values, grid)
        if abs(total - 1.0) > 1e-3:
            raise ValueError(f"density integrates to {total:.6f}, not 1")
        grid.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class LogitFit:
    """MAP logistic coefficients (intercept first) and Laplace covariance."""

    beta: np.ndarray
    posterior_scale: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 1 or not np.all(np.isfinite(beta)):
            raise ValueError("beta must be a finite vector")
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)


def default_grid(coords: np.ndarray, points: int = 1600) -> np.ndarray:
    """Evaluation grid spanning the data range plus four standard deviations."""
    x = np.asarray(coords, dtype=float).ravel()
    sd = float(x.std())
    if sd == 0.0:
        sd = 1.0
    return np.linspace(x.min() - 4.0 * sd, x.max() + 4.0 * sd, points)


def _gauss_logpdf(x, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def _em_once(x, w, K, rng, max_iters, tol):
    n = x.shape[0]
    # spread initial means over weighted data picks, shared variance
    means = x[rng.choice(n, size=K, replace=K > n, p=w)]
    means = means + 1e-6 * rng.standard_normal(K)
    var0 = max(float(np.sum(w * (x - np.sum(w * x)) ** 2)), _VAR_FLOOR)
    variances = np.full(K, var0)
    props = np.full(K, 1.0 / K)
    floored = False

    prev = -np.inf
    for _ in range(max_iters):
        logp = _gauss_logpdf(x[:, None], means[None, :], variances[None, :])
        logp = logp + np.log(props)[None, :]
        norm = logsumexp(logp, axis=1)
        loglik = float(np.sum(w * norm))
        # EM ascent; variance flooring can break it, so only check otherwise
        if not floored:
            assert loglik >= prev - 1e-9, "EM log-likelihood decreased"
        if loglik - prev < tol:
            prev = loglik
            break
        prev = loglik

        resp = np.exp(logp - norm[:, None]) * w[:, None]
        mass = resp.sum(axis=0)
        mass = np.maximum(mass, 1e-300)
        props = mass / mass.sum()
        means = resp.T @ x / mass
        variances = (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / mass
        if np.any(variances < _VAR_FLOOR):
            variances = np.maximum(variances, _VAR_FLOOR)
            floored = True
    return prev, props, means, variances, floored


def fit_mixture_em(
    points,
    masses,
    K: int,
    rng,
    restarts: int = 3,
    grid: Optional[np.ndarray] = None,
    max_iters: int = 300,
    tol: float = 1e-9,
) -> DensityEstimate:
    """Mass-weighted Gaussian-mixture EM for 1-d data, best of restarts.

    Masses are normalized to sum to one; the returned estimate carries
    the fitted parameters and a flag for any variance flooring.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    coords = points_to_arrays(list(points))[0]
    if coords.shape[1] != 1:
        raise ValueError("density fitting supports 1-d data only")
    x = coords[:, 0]
    w = np.asarray(masses, dtype=float)
    if w.shape != x.shape or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("masses must be nonneg, same length as points")
    w = w / w.sum()

    best = None
    for _ in range(max(restarts, 1)):
        out = _em_once(x, w, K, rng, max_iters, tol)
        if best is None or out[0] > best[0]:
            best = out
    _, props, means, variances, floored = best

    if grid is None:
        grid = default_grid(x)
    dens = np.exp(
        logsumexp(
            _gauss_logpdf(grid[:, None], means[None, :], variances[None, :])
            + np.log(props)[None, :],
            axis=1,
        )
    )
    # renormalize on the grid: removes tail truncation and keeps narrow
    # components within the estimate's normalization tolerance
    dens = dens / np.trapezoid(dens, grid)
    return DensityEstimate(
        grid=grid,
        values=dens,
        params={"props": props, "means": means, "variances": variances},
        floored=floored,
    )


def _design(coords: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((coords.shape[0], 1)), coords])


def fit_logistic_map(
    points,
    masses,
    prior_sd: float = 10.0,
    max_iters: int = 200,
    grad_tol: float = 1e-8,
) -> LogitFit:
    """Weighted logistic MAP with an intercept and N(0, prior_sd^2) prior.

    Damped Newton ascent on the weighted log-likelihood plus log-prior;
    weights are rescaled to mean one so prior strength tracks the
    number of observations, not the mass normalization.
    """
    if prior_sd <= 0:
        raise ValueError("prior_sd must be positive")
    pts = list(points)
    coords, labels, _ = points_to_arrays(pts)
    if labels is None:
        raise ValueError("points must carry binary labels")
    y = labels.astype(float)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    m = np.asarray(masses, dtype=float)
    if m.shape != y.shape or np.any(m < 0) or m.sum() <= 0:
        raise ValueError("masses must be nonneg, same length as points")
    m = m / m.mean()

    X = _design(coords)
    d = X.shape[1]
    tau2 = prior_sd**2
    beta = np.zeros(d)

    def objective(b):
        z = X @ b
        # log sigmoid pair, stable at large |z|
        ll = y * z - np.logaddexp(0.0, z)
        return float(np.sum(m * ll)) - 0.5 * float(b @ b) / tau2

    obj = objective(beta)
    for _ in range(max_iters):
        p = expit(X @ beta)
        g = X.T @ (m * (y - p)) - beta / tau2
        if np.linalg.norm(g) < grad_tol:
            hess = X.T @ (X * (m * p * (1.0 - p))[:, None]) + np.eye(d) / tau2
            return LogitFit(beta=beta, posterior_scale=np.linalg.inv(hess))
        hess = X.T @ (X * (m * p * (1.0 - p))[:, None]) + np.eye(d) / tau2
        step = np.linalg.solve(hess, g)
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            cand_obj = objective(cand)
            if cand_obj >= obj:
                break
            t *= 0.5
        beta = beta + t * step
        obj = objective(beta)
    raise RuntimeError(f"logistic MAP did not converge in {max_iters} iterations")


def kl_discretized(f: DensityEstimate, g: DensityEstimate) -> float:
    """Discretized KL divergence on a shared grid, densities floored at 1e-12."""
    if not np.array_equal(f.grid, g.grid):
        raise ValueError("density estimates must share a grid")
    fa = np.maximum(f.values, 1e-12)
    ga = np.maximum(g.values, 1e-12)
    return float(np.trapezoid(fa * np.log(fa / ga), f.grid))


def logit_l2_distance(fit_a: LogitFit, fit_b: LogitFit, covariate_sample) -> float:
    """Root-mean-square gap between the two logit functions over a sample."""
    if fit_a.beta.shape != fit_b.beta.shape:
        raise ValueError("fits have different coefficient dimensions")
    pts = list(covariate_sample)
    if not pts:
        raise ValueError("covariate sample must be non-empty")
    X = _design(points_to_arrays(pts)[0])
    gap = X @ (fit_a.beta - fit_b.beta)
    return float(np.sqrt(np.mean(gap**2)))


def gibbs_mixture(
    points,
    masses,
    K: int,
    rng,
    sweeps: int = 200,
    keep: int = 100,
    kernel_sd: float = 1.0,
    mean_sd: float = 3.0,
    prop_conc: float = 1.0,
):
    """Gibbs sampler for a K-component Gaussian mixture on weighted data.

    Conjugate updates with a symmetric Dirichlet(prop_conc) prior on
    proportions and N(0, mean_sd^2 I) on component means; the kernel
    scale is fixed. Observation weights enter as fractional counts.
    With K above the expected cluster count and prop_conc well below 1,
    surplus components empty out, so the fit effectively selects how
    many clusters the data support. Returns the kept (proportions,
    means) draws from the last `keep` sweeps.
    """
    if K < 1 or sweeps < 1 or not 1 <= keep <= sweeps:
        raise ValueError("need K >= 1 and 1 <= keep <= sweeps")
    if prop_conc <= 0:
        raise ValueError("prop_conc must be positive")
    coords = points_to_arrays(list(points))[0]
    n, d = coords.shape
    m = np.asarray(masses, dtype=float)
    if m.shape != (n,) or np.any(m < 0) or m.sum() <= 0:
        raise ValueError("masses must be nonneg, same length as points")

    var = kernel_sd**2
    prior_prec = 1.0 / mean_sd**2
    mu = coords[rng.choice(n, size=K, replace=K > n)] + 1e-6 * rng.standard_normal(
        (K, d)
    )
    props = np.full(K, 1.0 / K)
    draws = []
    for sweep in range(sweeps):
        # assignments: weighted log-likelihoods, weight as a tempering power
        sq = ((coords[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
        logp = np.log(props)[None, :] - 0.5 * m[:, None] * sq / var
        logp -= logsumexp(logp, axis=1)[:, None]
        u = rng.random(n)
        z = (np.cumsum(np.exp(logp), axis=1) < u[:, None]).sum(axis=1)
        z = np.minimum(z, K - 1)

        counts = np.zeros(K)
        np.add.at(counts, z, m)
        props = rng.dirichlet(prop_conc + counts)
        sums = np.zeros((K, d))
        np.add.at(sums, z, m[:, None] * coords)
        prec = prior_prec + counts / var
        post_mean = sums / var / prec[:, None]
        mu = post_mean + rng.standard_normal((K, d)) / np.sqrt(prec)[:, None]

        if sweep >= sweeps - keep:
            draws.append((props.copy(), mu.copy()))
    return draws


def assign_partition(draws, points, kernel_sd: float = 1.0) -> Partition:
    """Modal clustering of `points` across posterior mixture draws.

    Each draw classifies every point to its most probable component
    under the fitted kernel scale; the per-draw partitions are then
    combined by aligned majority vote.
    """
    coords = points_to_arrays(list(points))[0]
    var = kernel_sd**2
    parts = []
    for props, mu in draws:
        sq = ((coords[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
        scores = np.log(props)[None, :] - 0.5 * sq / var
        parts.append(Partition(scores.argmax(axis=1)))
    return cluster_point_estimate(parts)


@dataclass(frozen=True)
class ComparisonRecord:
    """Divergences to the full-data fit and whether the coreset won."""

    d_coreset_full: float
    d_unit_full: float
    diff: float = field(init=False)
    win: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "diff", self.d_coreset_full - self.d_unit_full)
        object.__setattr__(self, "win", self.diff < 0)


def compare_runs(full_fit, coreset_fit, unit_fit, metric: Callable) -> ComparisonRecord:
    """Score coreset and unit fits against the full fit under `metric`."""
    return ComparisonRecord(
        d_coreset_full=float(metric(coreset_fit, full_fit)),
        d_unit_full=float(metric(unit_fit, full_fit)),
    )
