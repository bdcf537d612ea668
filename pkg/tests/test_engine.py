"""Weight optimization and the full coreset pipeline."""

import json

import numpy as np
import pytest

from predcore.engine import (
    CoresetRunConfig,
    CoresetWeights,
    OptimizerConfig,
    inner_optimize,
    load_weights_csv,
    materialize_coreset,
    run_predictive_coreset,
    save_weights_csv,
    select_support,
)
from predcore.measures import Dataset, GroundMetric, Point, empirical_from
from predcore.urn import DPConfig, GaussianMixtureBase, UrnTrajectory

EUCLID = GroundMetric.euclidean(2)


def _dataset(rng, N, d=1, spread=1.0):
    return Dataset(tuple(Point(spread * rng.standard_normal(d)) for _ in range(N)))


def _resample_only_traj(cond_size, M, rng):
    """Trajectory with no fresh draws: each step picks uniformly."""
    sources = np.array([int(rng.integers(cond_size + t)) for t in range(M)])
    return UrnTrajectory(cond_size=cond_size, sources=sources, fresh_points=())


class TestSelectSupport:
    def test_full_size_is_permutation(self):
        rng = np.random.default_rng(0)
        data = _dataset(rng, 8)
        idx = select_support(data, 8, np.random.default_rng(1))
        assert sorted(idx) == list(range(8))

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(2)
        data = _dataset(rng, 30)
        a = select_support(data, 10, np.random.default_rng(3))
        b = select_support(data, 10, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_size_validation(self):
        rng = np.random.default_rng(4)
        data = _dataset(rng, 5)
        with pytest.raises(ValueError):
            select_support(data, 6, rng)
        with pytest.raises(ValueError):
            select_support(data, 0, rng)
        assert select_support(data, 1, rng).shape == (1,)


class TestInnerOptimize:
    def test_one_point_closed_form(self):
        """Support at 1, target mass at 2: the weight must reach 2."""
        M = 40
        traj = UrnTrajectory(
            cond_size=1, sources=np.zeros(M, dtype=int), fresh_points=()
        )
        full = empirical_from([Point(np.array([2.0])) for _ in range(M)])
        cfg = CoresetRunConfig(
            n=1, M=M, niter=1, optimizer=OptimizerConfig(max_inner_iters=200)
        )
        res = inner_optimize(full, traj, [Point(np.array([1.0]))], EUCLID, cfg)
        assert not res.aborted
        assert res.weights[0] == pytest.approx(2.0, abs=1e-3)

    def test_best_iterate_descent_guarantee(self):
        rng = np.random.default_rng(5)
        n, M = 6, 30
        traj = _resample_only_traj(n, M, rng)
        support = [Point(rng.standard_normal(2)) for _ in range(n)]
        full = empirical_from([Point(rng.standard_normal(2)) for _ in range(M)])
        for trial in range(5):
            init = rng.random(n) * 2
            cfg = CoresetRunConfig(n=n, M=M, niter=1)
            res = inner_optimize(full, traj, support, EUCLID, cfg, init=init)
            assert res.final_objective <= res.initial_objective + 1e-12
            assert np.all(res.weights >= 0)

    def test_trace_starts_at_init_objective(self):
        rng = np.random.default_rng(6)
        n, M = 4, 20
        traj = _resample_only_traj(n, M, rng)
        support = [Point(rng.standard_normal(1)) for _ in range(n)]
        full = empirical_from([Point(rng.standard_normal(1)) for _ in range(M)])
        cfg = CoresetRunConfig(n=n, M=M, niter=1)
        res = inner_optimize(full, traj, support, EUCLID, cfg)
        assert res.objective_trace[0] == res.initial_objective
        assert min(res.objective_trace) == pytest.approx(res.final_objective)

    def test_huge_step_aborts_not_raises(self):
        # weights must blow upward: put the full side far out so the
        # gradient pushes w to overflow, past the zero clamp's reach
        rng = np.random.default_rng(7)
        n, M = 3, 15
        traj = _resample_only_traj(n, M, rng)
        support = [Point(np.array([1.0])) for _ in range(n)]
        full = empirical_from([Point(np.array([1e3])) for _ in range(M)])
        cfg = CoresetRunConfig(
            n=n, M=M, niter=1, optimizer=OptimizerConfig(step_size=1e200)
        )
        res = inner_optimize(full, traj, support, EUCLID, cfg)
        assert res.aborted
        assert "non-finite" in res.message or "failed" in res.message
        # the abort leaves the caller with the diagnostics gathered so far
        assert res.objective_trace


class TestRunPipeline:
    def _self_consistency(self, augment):
        rng = np.random.default_rng(8)
        data = _dataset(rng, 40, d=1)
        cfg = CoresetRunConfig(
            n=40,
            M=25,
            niter=5,
            seed=11,
            share_trajectory=True,
            augment_observed=augment,
        )
        weights, report = run_predictive_coreset(
            data, DPConfig(alpha=0.0), None, EUCLID, cfg
        )
        assert np.max(np.abs(weights.values - 1.0)) <= 0.05
        assert report.aborted_iterations == 0

    def test_self_consistency_augmented(self):
        self._self_consistency(True)

    def test_self_consistency_draws_only(self):
        self._self_consistency(False)

    def test_share_trajectory_requires_full_support(self):
        rng = np.random.default_rng(9)
        data = _dataset(rng, 10)
        cfg = CoresetRunConfig(n=5, M=10, niter=1, share_trajectory=True)
        with pytest.raises(ValueError):
            run_predictive_coreset(data, DPConfig(alpha=0.0), None, EUCLID, cfg)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(10)
        data = _dataset(rng, 30)
        base = GaussianMixtureBase(means=[[0.0]])
        cfg = CoresetRunConfig(n=6, M=20, niter=4, seed=123)
        hyper = lambda r: r.standard_normal((1, 1))
        w1, _ = run_predictive_coreset(data, DPConfig(1.0, base), hyper, EUCLID, cfg)
        w2, _ = run_predictive_coreset(data, DPConfig(1.0, base), hyper, EUCLID, cfg)
        np.testing.assert_array_equal(w1.values, w2.values)
        np.testing.assert_array_equal(w1.support_indices, w2.support_indices)

    def test_weights_nonnegative_and_finite(self):
        rng = np.random.default_rng(11)
        data = _dataset(rng, 25)
        cfg = CoresetRunConfig(
            n=5, M=15, niter=6, seed=7, optimizer=OptimizerConfig(step_size=0.5)
        )
        w, _ = run_predictive_coreset(data, DPConfig(alpha=0.0), None, EUCLID, cfg)
        assert np.all(w.values >= 0)
        assert np.all(np.isfinite(w.values))

    def test_scale_equivariance_pure_resampling(self):
        """Scaling the 1-d data leaves the weights unchanged."""
        rng = np.random.default_rng(12)
        coords = rng.standard_normal(20)
        cfg = CoresetRunConfig(n=5, M=15, niter=3, seed=42)
        outs = []
        for c in (1.0, 7.3):
            data = Dataset(tuple(Point(np.array([c * x])) for x in coords))
            w, _ = run_predictive_coreset(data, DPConfig(alpha=0.0), None, EUCLID, cfg)
            outs.append(w.values)
        np.testing.assert_allclose(outs[0], outs[1], atol=1e-6)

    def test_niter_one_returns_single_iterate(self):
        rng = np.random.default_rng(13)
        data = _dataset(rng, 20)
        cfg = CoresetRunConfig(n=4, M=10, niter=1, seed=5)
        w, report = run_predictive_coreset(data, DPConfig(alpha=0.0), None, EUCLID, cfg)
        assert len(report.iterations) == 1
        np.testing.assert_array_equal(
            w.values, np.asarray(report.iterations[0]["weights"])
        )

    def test_all_aborted_raises(self):
        rng = np.random.default_rng(14)
        data = _dataset(rng, 12)
        cfg = CoresetRunConfig(
            n=3, M=8, niter=2, optimizer=OptimizerConfig(step_size=1e200)
        )
        with pytest.raises(RuntimeError):
            run_predictive_coreset(data, DPConfig(alpha=0.0), None, EUCLID, cfg)

    def test_report_serializes(self, tmp_path):
        rng = np.random.default_rng(15)
        data = _dataset(rng, 15)
        cfg = CoresetRunConfig(n=3, M=10, niter=2, seed=1)
        _, report = run_predictive_coreset(data, DPConfig(alpha=0.0), None, EUCLID, cfg)
        path = tmp_path / "report.json"
        report.to_json(path)
        back = json.loads(path.read_text())
        assert back["niter"] == 2
        assert len(back["iterations"]) == 2
        assert back["iterations"][0]["initial_objective"] >= 0

    def test_running_mean_drift_shrinks(self):
        """Later blocks of iterates move the running mean less."""
        rng = np.random.default_rng(16)
        data = _dataset(rng, 24)
        cfg = CoresetRunConfig(
            n=6,
            M=12,
            niter=80,
            seed=3,
            optimizer=OptimizerConfig(max_inner_iters=15),
        )
        _, report = run_predictive_coreset(data, DPConfig(alpha=0.0), None, EUCLID, cfg)
        ws = np.array([it["weights"] for it in report.iterations])
        drift = []
        for T in (20, 40, 80):
            d = np.linalg.norm(ws[:T].mean(axis=0) - ws[: T // 2].mean(axis=0))
            drift.append(d)
        assert drift[2] < drift[0]


class TestMaterializeCoreset:
    def _weights(self, vals, idx):
        return CoresetWeights(values=np.asarray(vals, float), support_indices=idx)

    def test_unit_weights_recover_subsample(self):
        rng = np.random.default_rng(17)
        data = _dataset(rng, 10, d=2)
        idx = np.array([2, 5, 7])
        w = self._weights(np.ones(3), idx)
        mean = data.coords.mean(axis=0)
        out = materialize_coreset(data, w, mean)
        np.testing.assert_allclose(out.coords, data.coords[idx])

    def test_zero_weights_collapse_to_mean(self):
        rng = np.random.default_rng(18)
        data = _dataset(rng, 8, d=2)
        idx = np.array([0, 3])
        mean = data.coords.mean(axis=0)
        out = materialize_coreset(data, self._weights(np.zeros(2), idx), mean)
        np.testing.assert_allclose(out.coords, np.tile(mean, (2, 1)))

    def test_scaling_from_origin_mean(self):
        data = Dataset((Point(np.array([1.0, 1.0])),))
        w = self._weights([2.0], np.array([0]))
        out = materialize_coreset(data, w, np.zeros(2))
        np.testing.assert_allclose(out.coords, [[2.0, 2.0]])

    def test_labels_carry_through(self):
        data = Dataset(
            (Point(np.array([1.0]), label=1), Point(np.array([2.0]), label=0))
        )
        w = self._weights([0.5, 0.5], np.array([1, 0]))
        out = materialize_coreset(data, w, np.zeros(1))
        assert out.labels.tolist() == [0, 1]


class TestWeightsType:
    def test_validation(self):
        with pytest.raises(ValueError):
            CoresetWeights(values=np.array([-1.0]), support_indices=np.array([0]))
        with pytest.raises(ValueError):
            CoresetWeights(
                values=np.array([1.0, 1.0]), support_indices=np.array([2, 2])
            )
        with pytest.raises(ValueError):
            CoresetWeights(values=np.array([np.inf]), support_indices=np.array([0]))

    def test_csv_round_trip(self, tmp_path):
        w = CoresetWeights(
            values=np.array([0.5, 1.25, 2.0]), support_indices=np.array([7, 2, 9])
        )
        path = tmp_path / "w.csv"
        save_weights_csv(w, path)
        back = load_weights_csv(path)
        np.testing.assert_array_equal(back.values, w.values)
        np.testing.assert_array_equal(back.support_indices, w.support_indices)
        header = path.read_text().splitlines()[0]
        assert header == "index,weight"
