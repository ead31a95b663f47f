"""Tests for the Monte Carlo benchmark harness.

Oracles: hand-computed chain columns and AR(1) arithmetic for the model
builder; distributional checks (stationary variance, chi-square calibration
against truth sampled from the reported posterior) for the metrics; byte
comparison for determinism.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from jumpgauss.exact import FilterResult
from jumpgauss.experiments import (
    CSV_HEADER,
    LOG_ODDS_EPS,
    StaircaseConfig,
    TrialMetrics,
    build_staircase,
    compute_metrics,
    run_experiment,
    simulate,
)
from jumpgauss.gaussians import Categorical, GaussianDensity, InputError
from jumpgauss.vjgm import fixed_point_smoother, suboptimal_filter


def small_config(**overrides):
    defaults = dict(t=33, trials=2, seed=7)
    defaults.update(overrides)
    return StaircaseConfig(**defaults)


class TestStaircaseConfig:
    def test_desk_scale_defaults(self):
        cfg = StaircaseConfig()
        assert (cfg.m, cfg.p, cfg.phi0) == (4, 0.9, 0.5)
        assert (cfg.sigma0, cfg.r) == (0.5, 1.0)
        assert (cfg.t, cfg.trials, cfg.smoother_iters) == (129, 100, 10)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"m": 0},
            {"p": 0.0},
            {"p": 1.0},
            {"phi0": 1.0},
            {"phi0": -1.5},
            {"mu0_rule": "zero"},
            {"sigma0": 0.0},
            {"r": -1.0},
            {"t": -1},
            {"trials": -1},
            {"seed": -1},
            {"seed": 2**64},
            {"smoother_iters": -1},
        ],
    )
    def test_invalid_configs_rejected(self, overrides):
        with pytest.raises(InputError):
            StaircaseConfig(**overrides)


class TestBuildStaircase:
    def test_chain_columns(self):
        sys = build_staircase(StaircaseConfig())
        lam = sys.chain_kernel.matrix
        assert np.allclose(lam[:, 0], [0.9, 0.1, 0.0, 0.0], atol=1e-15)
        assert np.allclose(lam[:, 1], [0.05, 0.9, 0.05, 0.0], atol=1e-15)
        assert np.allclose(lam[:, 2], [0.0, 0.05, 0.9, 0.05], atol=1e-15)
        assert np.allclose(lam[:, 3], [0.0, 0.0, 0.1, 0.9], atol=1e-15)

    def test_regime_levels_and_noise(self):
        cfg = StaircaseConfig()
        sys = build_staircase(cfg)
        for j in range(4):
            assert sys.state_init[j].mean[0] == float(j)
            assert sys.state_init[j].cov[0, 0] == 0.25
            k = sys.state_kernels[j]
            assert k.slope[0, 0] == 0.5
            assert np.isclose(k.offset[0], 0.5 * j, atol=1e-15)
            # stationary AR(1): transition noise (1 - 0.25) * 0.25
            assert np.isclose(k.cov[0, 0], 0.1875, atol=1e-15)
            ko = sys.obs_kernels[j]
            assert ko.slope[0, 0] == 1.0
            assert ko.cov[0, 0] == 1.0
        assert np.allclose(sys.chain_init.probs, 0.25, atol=1e-15)
        assert sys.horizon == cfg.t

    def test_single_regime_chain_is_degenerate(self):
        sys = build_staircase(StaircaseConfig(m=1))
        assert np.allclose(sys.chain_kernel.matrix, [[1.0]], atol=1e-15)

    def test_two_regimes_reflect_fully(self):
        sys = build_staircase(StaircaseConfig(m=2, p=0.8))
        lam = sys.chain_kernel.matrix
        assert np.allclose(lam, [[0.8, 0.2], [0.2, 0.8]], atol=1e-15)


class TestSimulate:
    def test_repeat_is_identical(self):
        sys = build_staircase(small_config())
        first = simulate(sys, 123, trial=5)
        second = simulate(sys, 123, trial=5)
        for a, b in zip(first, second):
            assert np.array_equal(a, b)

    def test_trial_key_changes_path(self):
        sys = build_staircase(small_config())
        z0, x0, _ = simulate(sys, 123, trial=0)
        z1, x1, _ = simulate(sys, 123, trial=1)
        assert not (np.array_equal(z0, z1) and np.array_equal(x0, x1))

    def test_shapes(self):
        cfg = small_config()
        sys = build_staircase(cfg)
        z, x, y = simulate(sys, 0)
        assert z.shape == (cfg.t + 1,)
        assert x.shape == (cfg.t + 1, 1)
        assert y.shape == (cfg.t + 1, 1)
        assert z.dtype.kind == "i"
        assert set(z.tolist()) <= set(range(cfg.m))

    def test_noise_free_observations_track_state(self):
        sys = build_staircase(small_config(r=1e-12))
        _, x, y = simulate(sys, 9)
        assert np.allclose(y, x, atol=1e-5)

    def test_single_regime_stationary_variance(self):
        cfg = StaircaseConfig(m=1, t=10_000, trials=1)
        sys = build_staircase(cfg)
        _, x, _ = simulate(sys, 4)
        # stationary AR(1) variance oracle: sigma0**2
        assert np.isclose(np.var(x), cfg.sigma0**2, rtol=0.1)

    def test_invalid_trial_index_rejected(self):
        sys = build_staircase(small_config())
        with pytest.raises(InputError):
            simulate(sys, 0, trial=-1)


class TestComputeMetrics:
    @staticmethod
    def _one_hot_filter(z_true, x_true, variances=None):
        n, m = len(z_true), int(max(z_true)) + 1
        if variances is None:
            variances = np.ones(n)
        marginals = [
            GaussianDensity(np.array([x]), np.array([[v]]))
            for x, v in zip(x_true, variances)
        ]
        eye = np.eye(m)
        probs = [Categorical(eye[z]) for z in z_true]
        return FilterResult(tuple(marginals), np.zeros(n), tuple(probs))

    def test_perfect_estimates_score_zero(self):
        z = np.array([0, 1, 1, 0])
        x = np.array([0.4, -1.0, 2.0, 0.0])
        metrics = compute_metrics((z, x), self._one_hot_filter(z, x), "filtering")
        assert metrics.rmse_x == 0.0
        assert metrics.chi2 == 0.0
        assert metrics.accuracy_z == 1.0

    def test_one_hot_log_odds_hits_the_clamp(self):
        z = np.array([0, 1])
        x = np.array([0.0, 0.0])
        metrics = compute_metrics((z, x), self._one_hot_filter(z, x), "filtering")
        expected = np.log((1.0 - LOG_ODDS_EPS) / LOG_ODDS_EPS)
        assert np.isclose(metrics.log_odds_z, expected, rtol=1e-12)

    def test_filtering_chi2_standardizes_by_variance(self):
        z = np.array([0, 0])
        x = np.array([1.0, -2.0])
        estimates = np.array([0.0, 0.0])
        out = self._one_hot_filter(z, estimates, variances=np.array([0.5, 4.0]))
        metrics = compute_metrics((z, x), out, "filtering")
        assert np.isclose(metrics.chi2, 1.0 / 0.5 + 4.0 / 4.0, atol=1e-12)
        assert np.isclose(metrics.rmse_x, np.sqrt((1.0 + 4.0) / 2.0), atol=1e-12)

    def test_filtering_chi2_calibrated_against_own_posterior(self):
        rng = np.random.default_rng(50)
        n = 34
        means = rng.standard_normal(n)
        variances = rng.gamma(2.0, size=n) + 0.1
        z = np.zeros(n, dtype=int)
        out = self._one_hot_filter(z, means, variances)
        stats = []
        for _ in range(1000):
            draws = means + np.sqrt(variances) * rng.standard_normal(n)
            stats.append(compute_metrics((z, draws), out, "filtering").chi2)
        # chi-square(n) mean oracle
        assert abs(np.mean(stats) - n) < 0.05 * n

    def test_smoothing_chi2_calibrated_against_own_posterior(self):
        cfg = small_config()
        sys = build_staircase(cfg)
        _, _, y = simulate(sys, 11)
        posterior = fixed_point_smoother(
            sys, list(y), suboptimal_filter(sys, list(y)), 3
        )
        terminal = posterior.marginals[-1].g
        kernels = [pair.g_rev for pair in posterior.reverse_kernels]
        rng = np.random.default_rng(51)
        n = cfg.t + 1
        z = np.zeros(n, dtype=int)
        stats = []
        for _ in range(1000):
            path = np.empty(n)
            path[-1] = terminal.mean[0] + np.sqrt(terminal.cov[0, 0]) * (
                rng.standard_normal()
            )
            for t in range(n - 2, -1, -1):
                k = kernels[t]
                mean = k.slope[0, 0] * path[t + 1] + k.offset[0]
                path[t] = mean + np.sqrt(k.cov[0, 0]) * rng.standard_normal()
            stats.append(compute_metrics((z, path), posterior, "smoothing").chi2)
        # whole-path statistic is chi-square(n) when sampled from the model
        assert abs(np.mean(stats) - n) < 0.05 * n

    def test_smoothing_requires_reverse_kernels(self):
        z = np.array([0, 1])
        x = np.array([0.0, 1.0])
        with pytest.raises(InputError):
            compute_metrics((z, x), self._one_hot_filter(z, x), "smoothing")

    def test_length_mismatch_rejected(self):
        z = np.array([0, 1, 0])
        x = np.array([0.0, 1.0, 2.0])
        out = self._one_hot_filter(z[:2], x[:2])
        with pytest.raises(InputError):
            compute_metrics((z, x), out, "filtering")

    def test_unknown_mode_rejected(self):
        z = np.array([0])
        x = np.array([0.0])
        with pytest.raises(InputError):
            compute_metrics((z, x), self._one_hot_filter(z, x), "prediction")


class TestRunExperiment:
    def test_row_count_and_schema(self, tmp_path):
        cfg = small_config()
        rows, _ = run_experiment(cfg, tmp_path)
        lines = (tmp_path / "metrics.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == ",".join(CSV_HEADER)
        assert len(lines) == 1 + cfg.trials * 4
        assert len(rows) == cfg.trials * 4
        methods = {(r.method, r.mode) for r in rows}
        assert methods == {
            ("imm", "filtering"),
            ("vjgm0", "filtering"),
            ("vjgm0", "smoothing"),
            ("vjgm10", "smoothing"),
        }
        assert [r.trial for r in rows] == [0, 0, 0, 0, 1, 1, 1, 1]
        assert not any(r.failed for r in rows)

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = small_config()
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        assert (tmp_path / "a/metrics.csv").read_bytes() == (
            tmp_path / "b/metrics.csv"
        ).read_bytes()
        assert (tmp_path / "a/summary.json").read_bytes() == (
            tmp_path / "b/summary.json"
        ).read_bytes()

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        cfg = small_config(trials=4)
        run_experiment(cfg, tmp_path / "serial", workers=1)
        run_experiment(cfg, tmp_path / "pool", workers=4)
        assert (tmp_path / "serial/metrics.csv").read_bytes() == (
            tmp_path / "pool/metrics.csv"
        ).read_bytes()

    def test_seed_changes_bytes(self, tmp_path):
        run_experiment(small_config(seed=7), tmp_path / "a")
        run_experiment(small_config(seed=8), tmp_path / "b")
        assert (tmp_path / "a/metrics.csv").read_bytes() != (
            tmp_path / "b/metrics.csv"
        ).read_bytes()

    def test_iterated_smoother_never_loses_bound(self, tmp_path):
        rows, _ = run_experiment(small_config(trials=4), tmp_path)
        base = {
            r.trial: r.elbo
            for r in rows
            if r.method == "vjgm0" and r.mode == "smoothing"
        }
        improved = [r for r in rows if r.method == "vjgm10"]
        assert len(improved) == 4
        for row in improved:
            assert row.elbo >= base[row.trial] - 1e-9

    def test_summary_contents(self, tmp_path):
        cfg = small_config(trials=3)
        _, summary = run_experiment(cfg, tmp_path)
        on_disk = json.loads((tmp_path / "summary.json").read_text("utf-8"))
        assert on_disk == summary
        assert summary["chi2_reference_df"] == cfg.t + 1
        assert summary["log_odds"] == {"base": "e", "epsilon": LOG_ODDS_EPS}
        assert summary["config"]["seed"] == cfg.seed
        block = summary["methods"]["vjgm0"]["filtering"]
        assert block["trials"] == 3 and block["failures"] == 0
        stats = block["metrics"]["rmse_x"]
        assert stats["mean"] > 0 and stats["std_error"] > 0
        gains = summary["elbo_improvement"]
        assert len(gains["values"]) == 3
        assert gains["min"] >= -1e-9

    def test_zero_trials_writes_header_only(self, tmp_path):
        rows, summary = run_experiment(small_config(trials=0), tmp_path)
        assert rows == []
        lines = (tmp_path / "metrics.csv").read_text("utf-8").splitlines()
        assert lines == [",".join(CSV_HEADER)]
        assert summary["elbo_improvement"]["mean"] is None

    def test_invalid_worker_count_rejected(self, tmp_path):
        with pytest.raises(InputError):
            run_experiment(small_config(), tmp_path, workers=0)
