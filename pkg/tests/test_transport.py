"""Transport solvers and gradients against independent oracles."""

from itertools import permutations

import numpy as np
import pytest
from scipy import stats

from predcore.measures import (
    GroundMetric,
    Point,
    empirical_from,
    pairwise_distance,
    points_to_arrays,
)
from predcore.transport import (
    CapacityError,
    SolverPolicy,
    cost_matrix,
    sinkhorn,
    solve_plan,
    transport_cost_gradient,
    wasserstein,
    wasserstein_exact,
)


def _uniform_measure(rng, n, d, scale=1.0):
    return empirical_from([Point(scale * rng.standard_normal(d)) for _ in range(n)])


def brute_force_uniform_cost(C, order):
    """Minimum over all n! assignments; the independent exact oracle."""
    n = C.shape[0]
    best = min(sum(C[k, perm[k]] for k in range(n)) for perm in permutations(range(n)))
    return (best / n) ** (1.0 / order)


def fd_gradient(plan, metric, order, a_pts, b_pts, side, h=1e-5):
    """Central finite differences of <plan, dist^order> in coordinates."""
    a_arr = list(points_to_arrays(a_pts))
    b_arr = list(points_to_arrays(b_pts))
    moving = a_arr if side == "source" else b_arr
    coords = moving[0].copy()

    def value(c):
        moving[0] = c
        d = pairwise_distance(metric, tuple(a_arr), tuple(b_arr))
        return float((plan * d ** order).sum())

    grad = np.zeros_like(coords)
    for k in range(coords.shape[0]):
        for j in range(coords.shape[1]):
            cp = coords.copy()
            cp[k, j] += h
            up = value(cp)
            cp[k, j] -= 2 * h
            down = value(cp)
            grad[k, j] = (up - down) / (2 * h)
    return grad


class TestExactSolver:
    def test_identical_measures_zero_cost(self):
        rng = np.random.default_rng(0)
        mu = _uniform_measure(rng, 6, 2)
        c = wasserstein_exact(mu, mu)
        assert c.cost == pytest.approx(0.0, abs=1e-12)
        # the plan keeps mass on the zero-distance diagonal
        assert np.trace(c.plan) == pytest.approx(1.0)

    def test_single_pair(self):
        mu = empirical_from([Point(np.array([0.0]))])
        nu = empirical_from([Point(np.array([3.0]))])
        c = wasserstein_exact(mu, nu, order=2.0)
        assert c.cost == pytest.approx(3.0)
        assert c.raw_cost == pytest.approx(9.0)

    def test_two_point_line(self):
        mu = empirical_from([Point(np.array([0.0])), Point(np.array([1.0]))])
        nu = empirical_from([Point(np.array([1.0])), Point(np.array([2.0]))])
        c = wasserstein_exact(mu, nu, order=1.0)
        assert c.cost == pytest.approx(1.0)
        # monotone matching: 0 -> 1 and 1 -> 2
        assert c.plan[0, 0] == pytest.approx(0.5)
        assert c.plan[1, 1] == pytest.approx(0.5)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(40):
            n = int(rng.integers(2, 7))
            d = int(rng.integers(1, 4))
            order = float(rng.choice([1.0, 2.0]))
            mu = _uniform_measure(rng, n, d)
            nu = _uniform_measure(rng, n, d)
            c = wasserstein_exact(mu, nu, order=order)
            C = cost_matrix(GroundMetric.euclidean(), order, mu.arrays, nu.arrays)
            assert c.cost == pytest.approx(
                brute_force_uniform_cost(C, order), abs=1e-9
            )

    def test_lp_agrees_with_assignment_on_uniform(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            n = int(rng.integers(3, 8))
            mu = _uniform_measure(rng, n, 2)
            nu = _uniform_measure(rng, n, 2)
            C = cost_matrix(GroundMetric.euclidean(), 2.0, mu.arrays, nu.arrays)
            a = np.full(n, 1.0 / n)
            exact = solve_plan(a, a, C, order=2.0, method="exact")
            assert exact.solver == "assignment"
            # nudge one mass pair so the LP branch runs instead
            a2 = a.copy()
            a2[0] += 1e-10
            a2[1] -= 1e-10
            lp = solve_plan(a2, a, C, order=2.0, method="exact")
            assert lp.solver == "lp"
            assert lp.cost == pytest.approx(exact.cost, abs=1e-7)

    def test_lp_beats_random_feasible_plans(self):
        from predcore.transport import _round_to_feasible

        rng = np.random.default_rng(3)
        n, m = 7, 5
        a = rng.dirichlet(np.ones(n))
        b = rng.dirichlet(np.ones(m))
        C = rng.random((n, m))
        best = solve_plan(a, b, C, order=1.0, method="exact")
        np.testing.assert_allclose(best.plan.sum(axis=1), a, atol=1e-8)
        np.testing.assert_allclose(best.plan.sum(axis=0), b, atol=1e-8)
        for _ in range(200):
            cand = _round_to_feasible(rng.random((n, m)), a, b)
            assert best.raw_cost <= (cand * C).sum() + 1e-9

    def test_capacity_error_directs_to_sinkhorn(self):
        rng = np.random.default_rng(4)
        mu = _uniform_measure(rng, 40, 2)
        nu = _uniform_measure(rng, 40, 2)
        tiny = SolverPolicy(exact_threshold=8, exact_cap=8)
        with pytest.raises(CapacityError, match="sinkhorn"):
            wasserstein_exact(mu, nu, policy=tiny)

    def test_bad_masses_rejected(self):
        C = np.ones((2, 2))
        with pytest.raises(ValueError):
            solve_plan(np.array([0.7, 0.7]), np.array([0.5, 0.5]), C)
        with pytest.raises(ValueError):
            solve_plan(np.array([1.5, -0.5]), np.array([0.5, 0.5]), C)


class TestMonotoneLine:
    def test_matches_lp_on_line(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(2, 9))
            xa = rng.standard_normal(n)
            xb = rng.standard_normal(m)
            a = rng.dirichlet(np.ones(n))
            b = rng.dirichlet(np.ones(m))
            order = float(rng.choice([1.0, 2.0, 3.0]))
            C = np.abs(xa[:, None] - xb[None, :]) ** order
            mono = solve_plan(a, b, C, order=order, line_coords=(xa, xb))
            assert mono.solver == "monotone"
            lp = solve_plan(a, b, C, order=order, method="exact")
            assert mono.cost == pytest.approx(lp.cost, abs=1e-9)
            np.testing.assert_allclose(mono.plan.sum(axis=1), a, atol=1e-9)
            np.testing.assert_allclose(mono.plan.sum(axis=0), b, atol=1e-9)

    def test_matches_scipy_w1(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            xa = rng.standard_normal(30)
            xb = rng.standard_normal(45)
            a = rng.dirichlet(np.ones(30))
            b = rng.dirichlet(np.ones(45))
            C = np.abs(xa[:, None] - xb[None, :])
            got = solve_plan(a, b, C, order=1.0, line_coords=(xa, xb)).cost
            want = stats.wasserstein_distance(xa, xb, a, b)
            assert got == pytest.approx(want, abs=1e-10)

    def test_auto_uses_line_path_above_threshold(self):
        rng = np.random.default_rng(7)
        mu = _uniform_measure(rng, 300, 1)
        nu = _uniform_measure(rng, 280, 1)
        c = wasserstein(mu, nu)
        assert c.solver == "monotone"


class TestSinkhorn:
    def test_self_distance_small_at_tiny_eps(self):
        rng = np.random.default_rng(8)
        # unit-scale cloud so the absolute threshold is meaningful
        mu = empirical_from([Point(rng.random(2)) for _ in range(10)])
        C = cost_matrix(GroundMetric.euclidean(), 2.0, mu.arrays, mu.arrays)
        med = np.median(C[C > 0])
        c = sinkhorn(mu, mu, eps=1e-3 * med)
        assert c.cost <= 1e-3

    def test_within_one_percent_of_exact(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            n = int(rng.integers(3, 7))
            mu = _uniform_measure(rng, n, 2)
            nu = _uniform_measure(rng, n, 2)
            exact = wasserstein_exact(mu, nu)
            C = cost_matrix(GroundMetric.euclidean(), 2.0, mu.arrays, nu.arrays)
            eps = 1e-4 * np.median(C)
            approx = sinkhorn(mu, nu, eps=eps, tol=1e-7, max_iter=4000)
            assert approx.raw_cost >= exact.raw_cost - 1e-9
            assert approx.cost <= exact.cost * 1.01

    def test_cost_nonincreasing_in_eps(self):
        rng = np.random.default_rng(10)
        mu = _uniform_measure(rng, 12, 2)
        nu = _uniform_measure(rng, 12, 2)
        C = cost_matrix(GroundMetric.euclidean(), 2.0, mu.arrays, nu.arrays)
        med = np.median(C)
        costs = [sinkhorn(mu, nu, eps=s * med, tol=1e-8).cost for s in (0.5, 0.1, 0.01)]
        assert costs[1] <= costs[0] + 1e-6
        assert costs[2] <= costs[1] + 1e-6

    def test_marginals_exact_after_rounding(self):
        rng = np.random.default_rng(11)
        mu = _uniform_measure(rng, 20, 3)
        nu = _uniform_measure(rng, 15, 3)
        c = sinkhorn(mu, nu, max_iter=30, tol=1e-12)  # deliberately unconverged
        np.testing.assert_allclose(c.plan.sum(axis=1), mu.masses, atol=1e-6)
        np.testing.assert_allclose(c.plan.sum(axis=0), nu.masses, atol=1e-6)
        assert not c.converged

    def test_warm_start_reconverges(self):
        rng = np.random.default_rng(12)
        mu = _uniform_measure(rng, 10, 2)
        nu = _uniform_measure(rng, 10, 2)
        first = sinkhorn(mu, nu, eps=0.05, tol=1e-4)
        nudged = empirical_from(
            [Point(p.coords + 0.01 * rng.standard_normal(2)) for p in nu.atoms]
        )
        again = sinkhorn(mu, nudged, eps=0.05, tol=1e-4, warm=first.potentials)
        assert again.converged
        exact = wasserstein_exact(mu, nudged)
        assert again.raw_cost >= exact.raw_cost - 1e-9
        assert again.cost <= exact.cost * 1.05

    def test_auto_policy_switches_to_sinkhorn(self):
        rng = np.random.default_rng(13)
        mu = _uniform_measure(rng, 300, 2)
        nu = _uniform_measure(rng, 40, 2)
        c = wasserstein(mu, nu)
        assert c.solver == "sinkhorn"


class TestMetricProperties:
    def test_symmetry(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            mu = _uniform_measure(rng, 8, 2)
            nu = _uniform_measure(rng, 8, 2)
            ab = wasserstein_exact(mu, nu).cost
            ba = wasserstein_exact(nu, mu).cost
            assert ab == pytest.approx(ba, abs=1e-9)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(15)
        for _ in range(200):
            mu = _uniform_measure(rng, 8, 2)
            nu = _uniform_measure(rng, 8, 2)
            rho = _uniform_measure(rng, 8, 2)
            d_ab = wasserstein_exact(mu, nu).cost
            d_ac = wasserstein_exact(mu, rho).cost
            d_cb = wasserstein_exact(rho, nu).cost
            assert d_ab <= d_ac + d_cb + 1e-9

    def test_permutation_invariance(self):
        rng = np.random.default_rng(16)
        pts_a = [Point(rng.standard_normal(2)) for _ in range(7)]
        pts_b = [Point(rng.standard_normal(2)) for _ in range(7)]
        base = wasserstein_exact(empirical_from(pts_a), empirical_from(pts_b))
        perm_a = rng.permutation(7)
        perm_b = rng.permutation(7)
        shuffled = wasserstein_exact(
            empirical_from([pts_a[i] for i in perm_a]),
            empirical_from([pts_b[j] for j in perm_b]),
        )
        assert shuffled.cost == pytest.approx(base.cost, abs=1e-12)
        # the plan is the same coupling, relabeled
        np.testing.assert_allclose(
            shuffled.plan, base.plan[np.ix_(perm_a, perm_b)], atol=1e-12
        )

    def test_cost_matrix_zero_iff_zero_distance(self):
        pts = [Point(np.array([0.0, 1.0])), Point(np.array([0.0, 1.0 + 1e-12]))]
        arr = points_to_arrays(pts)
        C = cost_matrix(GroundMetric.euclidean(), 2.0, arr, arr)
        assert C[0, 0] == 0.0 and C[1, 1] == 0.0
        assert C[0, 1] > 0.0


class TestGradient:
    def test_single_pair_closed_form(self):
        a = np.array([1.0, -2.0])
        b = np.array([0.5, 3.0])
        mu = empirical_from([Point(a)])
        nu = empirical_from([Point(b)])
        c = wasserstein_exact(mu, nu, order=2.0)
        g_src = transport_cost_gradient(c, mu, nu, GroundMetric.euclidean(), side="source")
        np.testing.assert_allclose(g_src[0], 2 * (a - b), atol=1e-12)
        g_tgt = transport_cost_gradient(c, mu, nu, GroundMetric.euclidean(), side="target")
        np.testing.assert_allclose(g_tgt[0], 2 * (b - a), atol=1e-12)

    def test_zero_at_self_coupling(self):
        rng = np.random.default_rng(17)
        mu = _uniform_measure(rng, 6, 3)
        c = wasserstein_exact(mu, mu)
        g = transport_cost_gradient(c, mu, mu, GroundMetric.euclidean(), side="target")
        np.testing.assert_allclose(g, 0.0, atol=1e-12)

    @pytest.mark.parametrize(
        "metric,order,with_label,with_latent",
        [
            (GroundMetric.euclidean(2), 2.0, False, False),
            (GroundMetric.euclidean(2), 1.5, False, False),
            (GroundMetric.euclidean(2), 3.0, False, False),
            (GroundMetric.euclidean(3), 2.0, False, False),
            (GroundMetric.product_class(2), 2.0, True, False),
            (GroundMetric.latent_pair(2, latent_scale=0.7), 2.0, False, True),
        ],
    )
    def test_matches_finite_differences(self, metric, order, with_label, with_latent):
        rng = np.random.default_rng(18)
        for side in ("source", "target"):
            for _ in range(6):
                pts_a = [
                    Point(
                        rng.standard_normal(2),
                        label=int(rng.integers(2)) if with_label else None,
                        latent=rng.standard_normal(2) if with_latent else None,
                    )
                    for _ in range(5)
                ]
                pts_b = [
                    Point(
                        rng.standard_normal(2),
                        label=int(rng.integers(2)) if with_label else None,
                        latent=rng.standard_normal(2) if with_latent else None,
                    )
                    for _ in range(5)
                ]
                mu = empirical_from(pts_a)
                nu = empirical_from(pts_b)
                c = wasserstein_exact(mu, nu, metric, order=order)
                got = transport_cost_gradient(c, mu, nu, metric, side=side)
                want = fd_gradient(c.plan, metric, order, pts_a, pts_b, side)
                err = np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12)
                assert err <= 1e-4

    def test_fifty_random_problems_at_order_two(self):
        rng = np.random.default_rng(19)
        metric = GroundMetric.euclidean(2)
        worst = 0.0
        for _ in range(50):
            mu = _uniform_measure(rng, 5, 2)
            nu = _uniform_measure(rng, 5, 2)
            c = wasserstein_exact(mu, nu, metric, order=2.0)
            got = transport_cost_gradient(c, mu, nu, metric, side="target")
            want = fd_gradient(c.plan, metric, 2.0, list(mu.atoms), list(nu.atoms), "target")
            err = np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12)
            worst = max(worst, err)
        assert worst <= 1e-4

    def test_bad_side_rejected(self):
        mu = empirical_from([Point(np.zeros(1))])
        c = wasserstein_exact(mu, mu)
        with pytest.raises(ValueError):
            transport_cost_gradient(c, mu, mu, GroundMetric.euclidean(), side="left")
