"""Experiment harness: config resolution, generators, results plumbing."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from predcore.experiments import (
    EXPERIMENT_KINDS,
    ConfigError,
    ExperimentConfig,
    default_config,
    generate_synthetic,
    read_results_csv,
    resolve_config,
    run_experiment,
    run_rep,
    summarize,
    worker_count,
    write_curve_data,
    write_histogram_data,
    write_results_csv,
)


def tiny_config(kind, out, **overrides):
    """Smallest config that still exercises the whole pipeline."""
    base = dict(
        N=40, n=8, M=12, niter=3, reps=1, max_inner_iters=5,
        em_restarts=1, gibbs_sweeps=20, gibbs_keep=5,
        output_dir=str(out),
    )
    base.update(overrides)
    return resolve_config(kind, file_values=base)


class TestConfigResolution:
    def test_defaults_exist_for_every_kind(self):
        for kind in EXPERIMENT_KINDS:
            cfg = default_config(kind)
            assert cfg.experiment == kind
            cfg.validate()

    def test_paper_scale_enlarges(self):
        desk = default_config("density")
        paper = default_config("density", paper_scale=True)
        assert paper.N > desk.N
        assert paper.reps > desk.reps

    def test_file_then_section_then_override_precedence(self):
        file_values = {"reps": 5, "density": {"reps": 7, "N": 300}}
        cfg = resolve_config("density", file_values, overrides={"reps": 9})
        assert cfg.reps == 9
        assert cfg.N == 300

    def test_top_level_applies_when_no_section(self):
        cfg = resolve_config("logistic", {"reps": 5, "density": {"reps": 7}})
        assert cfg.reps == 5

    def test_none_overrides_are_skipped(self):
        cfg = resolve_config("density", None, overrides={"reps": None})
        assert cfg.reps == default_config("density").reps

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            resolve_config("density", {"repz": 3})

    def test_wrong_type_rejected(self):
        with pytest.raises(ConfigError):
            resolve_config("density", {"reps": "many"})
        with pytest.raises(ConfigError):
            resolve_config("density", {"augment_observed": 1})

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            resolve_config("density", {"reps": 0})
        with pytest.raises(ConfigError):
            resolve_config("density", {"n": 600})  # exceeds N=500
        with pytest.raises(ConfigError):
            default_config("nope")

    def test_latent_scale_resolves_and_validates(self):
        cfg = resolve_config("partition", {"partition": {"latent_scale": 0.25}})
        assert cfg.latent_scale == 0.25
        with pytest.raises(ConfigError):
            resolve_config("partition", {"latent_scale": -0.5})

    def test_run_config_carries_seed_and_sizes(self):
        cfg = default_config("density")
        rc = cfg.run_config(1234)
        assert rc.seed == 1234
        assert (rc.n, rc.M, rc.niter) == (cfg.n, cfg.M, cfg.niter)


class TestGenerators:
    def test_density_shape_and_truth(self):
        cfg = default_config("density")
        data, truth = generate_synthetic("density", cfg, np.random.default_rng(0))
        assert len(data) == cfg.N and data.dim == 1
        assert len(truth["means"]) == cfg.components
        assert truth["sigma2"] > 0

    def test_logistic_labels_binary(self):
        cfg = default_config("logistic")
        data, truth = generate_synthetic("logistic", cfg, np.random.default_rng(0))
        assert data.dim == 2
        labels = {p.label for p in data.points}
        assert labels <= {0, 1}
        assert len(truth["beta"]) == 2

    def test_partition_truth_labels_align(self):
        cfg = default_config("partition")
        data, truth = generate_synthetic("partition", cfg, np.random.default_rng(0))
        assert data.dim == 2
        assert len(truth["labels"]) == cfg.N
        assert max(truth["labels"]) < cfg.components

    def test_partition_centers_respect_min_separation(self):
        cfg = default_config("partition")
        cfg.min_separation = 3.0
        for seed in range(5):
            _, truth = generate_synthetic("partition", cfg, np.random.default_rng(seed))
            m = np.asarray(truth["means"])
            gaps = [
                np.linalg.norm(m[i] - m[j])
                for i in range(len(m))
                for j in range(i + 1, len(m))
            ]
            assert min(gaps) >= 3.0

    def test_adaptive_centers_near_mu(self):
        cfg = default_config("adaptive")
        data, truth = generate_synthetic("adaptive", cfg, np.random.default_rng(3))
        # sample mean concentrates around the drawn location
        assert abs(data.coords.mean() - truth["mu"]) < 0.5

    def test_generation_is_seeded(self):
        cfg = default_config("density")
        a, _ = generate_synthetic("density", cfg, np.random.default_rng(42))
        b, _ = generate_synthetic("density", cfg, np.random.default_rng(42))
        assert np.array_equal(a.coords, b.coords)


class TestSummarize:
    def test_all_wins(self):
        rows = [dict(rep=i, seed=i, d_coreset_full=0.1, d_unit_full=0.4,
                     diff=-0.3, win=True) for i in range(10)]
        s = summarize(rows)
        assert s["win_fraction"] == 1.0
        assert s["mean_diff"] == pytest.approx(-0.3)
        assert s["win_fraction_ci95"] == [1.0, 1.0]

    def test_tie_is_not_a_win(self):
        rows = [
            dict(rep=0, seed=0, d_coreset_full=0.1, d_unit_full=0.4, diff=-0.3, win=True),
            dict(rep=1, seed=1, d_coreset_full=0.4, d_unit_full=0.4, diff=0.0, win=False),
        ]
        assert summarize(rows)["win_fraction"] == 0.5

    def test_bootstrap_interval_brackets_point(self):
        rng = np.random.default_rng(7)
        wins = rng.random(100) < 0.81
        rows = [dict(rep=i, seed=i, d_coreset_full=0.0, d_unit_full=0.0,
                     diff=-float(w), win=bool(w)) for i, w in enumerate(wins)]
        s = summarize(rows)
        lo, hi = s["win_fraction_ci95"]
        assert lo <= s["win_fraction"] <= hi
        assert hi - lo < 0.25

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            summarize([])


class TestResultsCsv:
    def test_round_trip_exact(self, tmp_path):
        rows = [
            dict(rep=0, seed=11, d_coreset_full=0.123456789012345,
                 d_unit_full=0.5, diff=-0.376543210987655, win=True),
            dict(rep=1, seed=22, d_coreset_full=1.0 / 3.0,
                 d_unit_full=0.25, diff=1.0 / 3.0 - 0.25, win=False),
        ]
        path = tmp_path / "results.csv"
        write_results_csv(rows, path)
        back = read_results_csv(path)
        assert back == rows

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_results_csv(path)

    def test_histogram_bins_partition_diffs(self, tmp_path):
        diffs = [-0.5, -0.4, -0.1, 0.2]
        path = tmp_path / "hist.csv"
        write_histogram_data(diffs, path, bins=7)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "bin_left,bin_right,count"
        counts = [int(line.split(",")[2]) for line in lines[1:]]
        assert sum(counts) == len(diffs)

    def test_curve_columns_sorted(self, tmp_path):
        extras = {
            "curve_x": np.array([0.0, 1.0]),
            "curves": {"unit": np.array([1.0, 2.0]),
                       "full": np.array([3.0, 4.0])},
        }
        path = tmp_path / "curves.csv"
        write_curve_data(extras, path)
        header = path.read_text().splitlines()[0]
        assert header == "x,full,unit"


class TestWorkerCount:
    def test_default_is_serial(self, monkeypatch):
        monkeypatch.delenv("PREDCORE_THREADS", raising=False)
        assert worker_count(8) == 1

    def test_env_caps_at_reps(self, monkeypatch):
        monkeypatch.setenv("PREDCORE_THREADS", "4")
        assert worker_count(8) == 4
        assert worker_count(2) == 2

    def test_garbage_env_falls_back(self, monkeypatch):
        monkeypatch.setenv("PREDCORE_THREADS", "lots")
        assert worker_count(8) == 1


class TestRunExperiment:
    def test_single_rep_outputs(self, tmp_path):
        cfg = tiny_config("density", tmp_path / "out")
        manifest = run_experiment(cfg)
        assert manifest.completed
        assert sorted(manifest.files) == [
            "curves.csv", "hist_diff.csv", "results.csv", "summary.json",
        ]
        rows = read_results_csv(tmp_path / "out" / "results.csv")
        assert len(rows) == 1
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["records"] == 1
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        first = tmp_path / "a"
        second = tmp_path / "b"
        ma = run_experiment(tiny_config("density", first, reps=2, master_seed=4))
        mb = run_experiment(tiny_config("density", second, reps=2, master_seed=4))
        assert (first / "results.csv").read_bytes() == (second / "results.csv").read_bytes()
        assert ma.files["results.csv"] == mb.files["results.csv"]
        assert ma.rep_seeds == mb.rep_seeds

    def test_seed_changes_results(self, tmp_path):
        a = run_experiment(tiny_config("density", tmp_path / "a", master_seed=1))
        b = run_experiment(tiny_config("density", tmp_path / "b", master_seed=2))
        assert a.files["results.csv"] != b.files["results.csv"]

    def test_failed_rep_marks_partial(self, tmp_path, monkeypatch):
        import predcore.experiments as exp

        real = exp.run_rep

        def flaky(cfg, rep, child):
            if rep == 1:
                raise RuntimeError("boom")
            return real(cfg, rep, child)

        monkeypatch.setattr(exp, "run_rep", flaky)
        cfg = tiny_config("density", tmp_path / "out", reps=2)
        manifest = run_experiment(cfg)
        assert not manifest.completed
        assert manifest.failed_reps[0]["rep"] == 1
        rows = read_results_csv(tmp_path / "out" / "results.csv")
        assert [r["rep"] for r in rows] == [0]

    def test_adaptive_summary_reports_acceptance(self, tmp_path):
        cfg = tiny_config("adaptive", tmp_path / "out", abc_S=4)
        run_experiment(cfg)
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert "acceptance_rates" in summary
        assert len(summary["acceptance_rates"]) == 1


class TestRunRep:
    @pytest.mark.parametrize("kind", ["density", "logistic", "partition"])
    def test_row_fields_complete(self, kind, tmp_path):
        cfg = tiny_config(kind, tmp_path, N=60, n=10)
        child = np.random.SeedSequence(0).spawn(1)[0]
        row, extras, report = run_rep(cfg, 0, child)
        assert row["rep"] == 0
        assert np.isfinite(row["diff"])
        assert row["win"] == (row["diff"] < 0)
        assert "curve_x" in extras and "curves" in extras
        assert report.niter == cfg.niter
