"""Discrete optimal transport between empirical measures.

Exact solvers (monotone 1-d coupling, assignment, LP), an entropic
sinkhorn solver with log-domain iterations and feasibility rounding, and
envelope-theorem gradients of the transport cost with respect to atom
coordinates of either side.

Cost entries are dist^p; the reported cost of a coupling is the p-th
root, so it is the order-p Wasserstein distance of the plan.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .measures import (
    EUCLIDEAN,
    EmpiricalMeasure,
    GroundMetric,
    pairwise_distance,
    points_to_arrays,
)

__all__ = [
    "CapacityError",
    "SolverPolicy",
    "Coupling",
    "cost_matrix",
    "solve_plan",
    "wasserstein",
    "wasserstein_exact",
    "sinkhorn",
    "transport_cost_gradient",
]


class CapacityError(ValueError):
    """Problem exceeds the exact-solver cap; use the sinkhorn solver."""


@dataclass(frozen=True)
class SolverPolicy:
    """When to choose which solver, and sinkhorn knobs.

    exact_threshold: auto mode uses an exact solver when both sides have
        at most this many atoms (1-d euclidean problems are always exact).
    exact_cap: hard ceiling for explicit exact requests.
    sinkhorn_eps_scale: default eps = this times the median cost entry.
    """

    exact_threshold: int = 256
    exact_cap: int = 512
    sinkhorn_eps_scale: float = 0.05
    # marginal-error target; rounding restores exact marginals afterwards,
    # so this only controls cost accuracy. Sinkhorn's contraction slows
    # sharply at small eps, which makes much tighter targets impractical.
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 2000

    def __post_init__(self):
        if self.exact_cap < self.exact_threshold:
            raise ValueError("exact_cap must be >= exact_threshold")


DEFAULT_POLICY = SolverPolicy()


@dataclass(frozen=True, eq=False)
class Coupling:
    """Transport plan plus its order-p cost.

    cost is <plan, dist^p>^(1/p); raw_cost is <plan, dist^p> itself.
    potentials, when present, hold (f, g, eps) from sinkhorn and can warm
    start the next solve on a nearby problem.
    """

    plan: np.ndarray
    cost: float
    raw_cost: float
    order: float
    solver: str
    converged: bool = True
    potentials: Optional[tuple] = None


def cost_matrix(metric: GroundMetric, order: float, a_arrays, b_arrays) -> np.ndarray:
    """Pairwise dist^order matrix between two stacked point sets."""
    if order < 1:
        raise ValueError("transport order must be >= 1")
    d = pairwise_distance(metric, a_arrays, b_arrays)
    if order == 1.0:
        return d
    return d ** order


def _check_masses(w, name):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError(f"{name} masses must be a vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"{name} masses must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} masses must sum to 1, got {w.sum()!r}")
    return w


def _finish(plan, C, order, solver, converged=True, potentials=None) -> Coupling:
    # overflowing costs produce nan here; callers treat non-finite cost
    # as an abort signal, so keep the arithmetic quiet
    with np.errstate(invalid="ignore", over="ignore"):
        raw = float((plan * C).sum())
    if raw < 0:
        raw = 0.0
    return Coupling(
        plan=plan,
        cost=raw ** (1.0 / order),
        raw_cost=raw,
        order=order,
        solver=solver,
        converged=converged,
        potentials=potentials,
    )


def _monotone_line_plan(a, b, xa, xb):
    """Sorted two-pointer coupling on the line.

    Optimal for any cost of the form |x - y|^q with q >= 1.
    """
    n, m = a.shape[0], b.shape[0]
    ia = np.argsort(xa, kind="stable")
    ib = np.argsort(xb, kind="stable")
    plan = np.zeros((n, m))
    ra = a[ia].copy()
    rb = b[ib].copy()
    i = j = 0
    while i < n and j < m:
        t = min(ra[i], rb[j])
        if t > 0:
            plan[ia[i], ib[j]] += t
        ra[i] -= t
        rb[j] -= t
        # t = min(...) zeroes at least one residual exactly; advance one
        # pointer per step so the loop runs at most n + m times
        if ra[i] == 0.0:
            i += 1
        else:
            j += 1
    return plan


def _assignment_plan(C):
    n = C.shape[0]
    rows, cols = linear_sum_assignment(C)
    plan = np.zeros_like(C)
    plan[rows, cols] = 1.0 / n
    return plan


def _lp_plan(a, b, C):
    n, m = C.shape
    row_sums = sp.kron(sp.eye(n, format="csr"), np.ones((1, m)), format="csr")
    col_sums = sp.kron(np.ones((1, n)), sp.eye(m, format="csr"), format="csr")
    # one column constraint is redundant given the row constraints
    A_eq = sp.vstack([row_sums, col_sums[:-1]], format="csr")
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = np.clip(res.x.reshape(n, m), 0.0, None)
    return plan


def _round_to_feasible(plan, a, b):
    """Rescale rows/columns then patch the deficit so marginals are exact."""
    with np.errstate(divide="ignore", invalid="ignore"):
        r = plan.sum(axis=1)
        x = np.where(r > 0, np.minimum(1.0, a / r), 0.0)
        plan = plan * x[:, None]
        c = plan.sum(axis=0)
        y = np.where(c > 0, np.minimum(1.0, b / c), 0.0)
        plan = plan * y[None, :]
    err_a = np.clip(a - plan.sum(axis=1), 0.0, None)
    err_b = np.clip(b - plan.sum(axis=0), 0.0, None)
    s = err_a.sum()
    if s > 0:
        plan = plan + np.outer(err_a, err_b) / s
    return plan


def _sinkhorn_plan(a, b, C, eps, tol, max_iter, warm=None):
    """Log-domain sinkhorn with eps scaling on cold starts.

    Returns (plan, converged, (f, g, eps)); the plan is rounded to exact
    marginals so the reported cost is a feasible upper bound.
    """
    with np.errstate(divide="ignore"):
        loga = np.log(a)
        logb = np.log(b)
    if warm is not None:
        f, g = np.asarray(warm[0], dtype=float).copy(), np.asarray(warm[1], dtype=float).copy()
        schedule = [eps]
    else:
        f = np.zeros_like(a)
        g = np.zeros_like(b)
        top = float(np.median(C[C > 0])) if np.any(C > 0) else 0.0
        schedule = []
        level = max(top, eps)
        while level > eps * 4.0:
            schedule.append(level)
            level /= 4.0
        schedule.append(eps)

    converged = False
    for level_idx, lv in enumerate(schedule):
        final = level_idx == len(schedule) - 1
        iters = max_iter if final else 60
        check_tol = tol if final else max(tol, 1e-4)
        for it in range(iters):
            f = lv * loga - lv * logsumexp((g[None, :] - C) / lv, axis=1)
            g = lv * logb - lv * logsumexp((f[:, None] - C) / lv, axis=0)
            if it % 5 == 4 or it == iters - 1:
                log_plan = (f[:, None] + g[None, :] - C) / lv
                row_err = np.abs(np.exp(logsumexp(log_plan, axis=1)) - a).sum()
                if row_err < check_tol:
                    if final:
                        converged = True
                    break
    plan = np.exp((f[:, None] + g[None, :] - C) / eps)
    plan = _round_to_feasible(plan, a, b)
    return plan, converged, (f, g, eps)


def _default_eps(C, policy):
    med = float(np.median(C))
    if med <= 0:
        pos = C[C > 0]
        if pos.size == 0:
            return None
        med = float(np.median(pos))
    return policy.sinkhorn_eps_scale * med


def solve_plan(
    a,
    b,
    C,
    order: float = 2.0,
    policy: SolverPolicy = DEFAULT_POLICY,
    method: str = "auto",
    eps: Optional[float] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    warm=None,
    line_coords=None,
) -> Coupling:
    """Array-level solver on a precomputed cost matrix.

    line_coords, when given as (xa, xb) 1-d coordinate vectors, enables
    the exact monotone coupling regardless of size; the caller asserts
    the cost is a convex function of the coordinate difference.
    """
    a = _check_masses(a, "source")
    b = _check_masses(b, "target")
    C = np.asarray(C, dtype=float)
    if C.shape != (a.shape[0], b.shape[0]):
        raise ValueError("cost matrix shape does not match mass vectors")
    n, m = C.shape

    if method not in ("auto", "exact", "sinkhorn"):
        raise ValueError(f"unknown method {method!r}")

    if method != "sinkhorn" and line_coords is not None:
        xa, xb = line_coords
        plan = _monotone_line_plan(a, b, np.asarray(xa, float), np.asarray(xb, float))
        return _finish(plan, C, order, "monotone")

    if method == "exact" or (method == "auto" and max(n, m) <= policy.exact_threshold):
        if max(n, m) > policy.exact_cap:
            raise CapacityError(
                f"{max(n, m)} atoms exceeds the exact-solver cap "
                f"{policy.exact_cap}; use the sinkhorn solver"
            )
        uniform = (
            n == m
            and np.allclose(a, 1.0 / n, rtol=0, atol=1e-12)
            and np.allclose(b, 1.0 / n, rtol=0, atol=1e-12)
        )
        if uniform:
            return _finish(_assignment_plan(C), C, order, "assignment")
        return _finish(_lp_plan(a, b, C), C, order, "lp")

    if eps is None:
        eps = _default_eps(C, policy)
        if eps is None:
            # every entry is zero: any feasible plan has zero cost
            return _finish(np.outer(a, b), C, order, "degenerate")
    if eps <= 0:
        raise ValueError("sinkhorn eps must be > 0")
    plan, converged, pots = _sinkhorn_plan(
        a,
        b,
        C,
        eps,
        policy.sinkhorn_tol if tol is None else tol,
        policy.sinkhorn_max_iter if max_iter is None else max_iter,
        warm=warm,
    )
    return _finish(plan, C, order, "sinkhorn", converged=converged, potentials=pots)


def _measure_arrays(mu):
    if isinstance(mu, EmpiricalMeasure):
        return mu.arrays, mu.masses
    pts = list(mu)
    arrays = points_to_arrays(pts)
    n = len(pts)
    return arrays, np.full(n, 1.0 / n)


def _line_hint(metric, a_arrays, b_arrays):
    if metric.kind != EUCLIDEAN:
        return None
    ca, cb = a_arrays[0], b_arrays[0]
    if ca.shape[1] != 1:
        return None
    return ca[:, 0], cb[:, 0]


def wasserstein(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    metric: GroundMetric = GroundMetric.euclidean(),
    order: float = 2.0,
    policy: SolverPolicy = DEFAULT_POLICY,
    method: str = "auto",
    eps: Optional[float] = None,
    warm=None,
) -> Coupling:
    """Order-p Wasserstein coupling under the default solver policy."""
    a_arrays, a = _measure_arrays(mu)
    b_arrays, b = _measure_arrays(nu)
    C = cost_matrix(metric, order, a_arrays, b_arrays)
    return solve_plan(
        a,
        b,
        C,
        order=order,
        policy=policy,
        method=method,
        eps=eps,
        warm=warm,
        line_coords=_line_hint(metric, a_arrays, b_arrays),
    )


def wasserstein_exact(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    metric: GroundMetric = GroundMetric.euclidean(),
    order: float = 2.0,
    policy: SolverPolicy = DEFAULT_POLICY,
) -> Coupling:
    """Exact coupling; raises CapacityError above policy.exact_cap."""
    return wasserstein(mu, nu, metric, order=order, policy=policy, method="exact")


def sinkhorn(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    metric: GroundMetric = GroundMetric.euclidean(),
    order: float = 2.0,
    eps: Optional[float] = None,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
    policy: SolverPolicy = DEFAULT_POLICY,
    warm=None,
) -> Coupling:
    """Entropic solver; cost is evaluated on the rounded feasible plan."""
    a_arrays, a = _measure_arrays(mu)
    b_arrays, b = _measure_arrays(nu)
    C = cost_matrix(metric, order, a_arrays, b_arrays)
    return solve_plan(
        a,
        b,
        C,
        order=order,
        policy=policy,
        method="sinkhorn",
        eps=eps,
        tol=tol,
        max_iter=max_iter,
        warm=warm,
    )


def _grad_arrays(plan, metric, order, a_arrays, b_arrays, side):
    ca, cb = a_arrays[0], b_arrays[0]
    q = float(order)
    p = float(metric.p)
    D = pairwise_distance(metric, a_arrays, b_arrays)

    if p == 2.0:
        # all kinds reduce to q * D^(q-2) * (coordinate difference)
        with np.errstate(divide="ignore", invalid="ignore"):
            W = plan * np.where(D > 0, D ** (q - 2.0), 0.0)
        if side == "target":
            return q * (W.sum(axis=0)[:, None] * cb - W.T @ ca)
        return q * (W.sum(axis=1)[:, None] * ca - W @ cb)

    # general ground order: small-problem tensor path
    delta = cb[None, :, :] - ca[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = plan * np.where(D > 0, D ** (q - p), 0.0)
    if metric.kind == EUCLIDEAN:
        comp = np.sign(delta) * np.abs(delta) ** (p - 1.0)
    else:
        norm2 = np.linalg.norm(delta, axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(norm2 > 0, norm2 ** (p - 2.0), 0.0)
        comp = scale[:, :, None] * delta
    grad_b = q * np.einsum("ij,ijd->jd", factor, comp)
    if side == "target":
        return grad_b
    return -q * np.einsum("ij,ijd->id", factor, comp)


def transport_cost_gradient(
    coupling: Coupling,
    mu,
    nu,
    metric: GroundMetric,
    order: Optional[float] = None,
    side: str = "target",
) -> np.ndarray:
    """Gradient of <plan, dist^p> in the chosen side's coordinates.

    The plan is held fixed (envelope theorem), so this is a valid
    gradient of the optimal cost at the solution. Labels and latent
    vectors contribute zero gradient; only observation coordinates move.
    """
    if side not in ("source", "target"):
        raise ValueError("side must be 'source' or 'target'")
    q = coupling.order if order is None else float(order)
    a_arrays, _ = _measure_arrays(mu)
    b_arrays, _ = _measure_arrays(nu)
    return _grad_arrays(coupling.plan, metric, q, a_arrays, b_arrays, side)
