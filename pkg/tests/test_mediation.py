"""Effects, bootstrap inference and the log-link decomposition."""
from __future__ import annotations

import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from funmed import mediation
from funmed.data import LongDataset
from funmed.errors import ConvergenceError, InputError
from funmed.mediation import (MediationConfig, bootstrap_intervals, bootstrap_mediation,
                              fit_funmediation, fit_total_effect, indirect_effect,
                              log_link_decomposition, log_link_decomposition_check,
                              percentile_ranks, resample_indices, run_replicates)
from funmed.simulate import Scenario, generate_dataset, zero_function

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def alpha_x(t):
    return -np.sqrt(t / 2)


def beta_m(t):
    return 0.5 * (np.exp(t) - 1)


class TestIndirectEffect:
    def test_right_endpoint_grid_value(self):
        # samples at the right ends of 100 cells of width 0.01 on [0, 1]
        t = np.arange(1, 101) / 100
        assert indirect_effect(alpha_x(t), beta_m(t), 0.0, 1.0) == pytest.approx(-0.2113, abs=0.002)

    def test_close_to_exact_integral(self):
        exact = integrate.quad(lambda t: alpha_x(t) * beta_m(t), 0, 1)[0]
        t = np.linspace(0, 1, 100)
        assert indirect_effect(alpha_x(t), beta_m(t), 0.0, 1.0) == pytest.approx(exact, abs=0.002)

    def test_zero_treatment_effect(self):
        assert indirect_effect(np.zeros(100), np.linspace(-3, 3, 100), 0.0, 1.0) == 0.0

    def test_unit_product(self):
        assert indirect_effect(np.ones(50), np.ones(50), 0.0, 1.0) == 1.0

    def test_scales_with_width(self):
        assert indirect_effect(np.ones(10), np.full(10, 2.0), 3.0, 5.5) == pytest.approx(5.0)

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            indirect_effect(np.ones(10), np.ones(11), 0.0, 1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.01, 5), min_size=2, max_size=50), st.floats(0.01, 5))
    def test_sign_consistency(self, a, b):
        a = np.asarray(a)
        bm = np.linspace(b, 2 * b, a.size)
        assert indirect_effect(-a, bm, 0.0, 1.0) < 0
        assert indirect_effect(a, bm, 0.0, 1.0) > 0


class TestTotalEffect:
    def test_log_odds_ratio_oracle(self):
        # saturated model on a binary predictor: closed-form 2x2-table estimates
        rng = np.random.default_rng(0)
        n = 100_000
        x = np.repeat([0.0, 1.0], n // 2)
        y = (rng.random(n) < np.where(x == 1, 0.6, 0.4)).astype(float)
        a, b = np.sum((x == 1) & (y == 1)), np.sum((x == 1) & (y == 0))
        c, d = np.sum((x == 0) & (y == 1)), np.sum((x == 0) & (y == 0))
        te = fit_total_effect(x, None, y)
        assert te.estimate == pytest.approx(math.log(a * d / (b * c)), abs=1e-8)
        assert te.se == pytest.approx(math.sqrt(1 / a + 1 / b + 1 / c + 1 / d), rel=1e-6)
        assert te.estimate == pytest.approx(math.log(2.25), abs=0.03)
        assert te.z == pytest.approx(te.estimate / te.se)
        assert te.p_value < 1e-10

    def test_null_consistency(self):
        rng = np.random.default_rng(1)
        x = rng.integers(0, 2, 20_000).astype(float)
        y = (rng.random(20_000) < 0.3).astype(float)
        te = fit_total_effect(x, rng.normal(size=(20_000, 2)), y)
        assert abs(te.estimate) < 4 * te.se and te.se < 0.05
        assert 0 < te.p_value <= 1

    def test_identity_link_is_difference_in_means(self, rng):
        x = np.repeat([0.0, 1.0], 50)
        y = rng.normal(size=100) + 2 * x
        te = fit_total_effect(x, None, y, link="identity")
        assert te.estimate == pytest.approx(y[50:].mean() - y[:50].mean(), abs=1e-10)


class TestFitFunmediation:
    @pytest.fixture(scope="class")
    @staticmethod
    def fitted():
        data = generate_dataset(Scenario(n_subjects=1000, seed=5))
        return data, fit_funmediation(data, MediationConfig())

    def test_indirect_near_truth(self, fitted):
        _, res = fitted
        assert abs(res.indirect_effect - -0.2113) < 3 * 0.06

    def test_recompute_indirect_exact(self, fitted):
        _, res = fitted
        assert abs(res.recompute_indirect() - res.indirect_effect) < 1e-12

    def test_shared_grid_and_counts(self, fitted):
        data, res = fitted
        npt.assert_array_equal(res.tvem_fit.grid.points, res.funreg_fit.grid.points)
        assert res.n_subjects + res.n_dropped == data.n_subjects
        assert res.decomposition_gap == pytest.approx(
            res.total_effect.estimate - res.direct_effect[0] - res.indirect_effect)

    def test_null_pathway_noise_free_mediator(self):
        # mediator exactly alpha0(t) = sqrt(t) for everyone: no treatment pathway, no noise
        for seed in range(5):
            d = generate_dataset(Scenario(n_subjects=1000, seed=seed))
            d = LongDataset(d.ids, d.treatment, d.covariates, d.outcome, d.record_subject,
                            d.times, np.sqrt(d.times), d.t_min, d.t_max)
            assert abs(fit_funmediation(d, MediationConfig()).indirect_effect) < 0.02

    def test_null_pathway(self):
        for seed in range(5):
            sc = Scenario(n_subjects=1000, seed=seed, alphaX=zero_function, mediator_noise_sd=0.1)
            res = fit_funmediation(generate_dataset(sc), MediationConfig())
            assert abs(res.indirect_effect) < 0.02

    def test_additive_decomposition_identity_links(self):
        sc = Scenario(n_subjects=2000, seed=0, outcome_link="identity", outcome_noise_sd=0.0,
                      alphaX=lambda t: -0.5 * t, betaM=lambda t: t)
        res = fit_funmediation(generate_dataset(sc), MediationConfig(outcome_link="identity"))
        assert abs(res.decomposition_gap) < 0.01

    @staticmethod
    def _relabelled_pair(n):
        d = generate_dataset(Scenario(n_subjects=n, seed=2, outcome_link="identity"))
        flipped = LongDataset(d.ids, 1 - d.treatment, d.covariates, d.outcome, d.record_subject,
                              d.times, d.mediator, d.t_min, d.t_max)
        cfg = MediationConfig(outcome_link="identity")
        return fit_funmediation(d, cfg), fit_funmediation(flipped, cfg)

    def test_treatment_relabel_negates_unpenalized_effects(self):
        a, b = self._relabelled_pair(400)
        assert b.total_effect.estimate == pytest.approx(-a.total_effect.estimate, abs=1e-10)
        assert b.direct_effect[0] == pytest.approx(-a.direct_effect[0], abs=1e-10)
        # the smoothed pathway flips only approximately: relabelling moves the
        # treated-arm curve into the penalized baseline
        assert b.indirect_effect == pytest.approx(-a.indirect_effect, abs=0.01)

    @pytest.mark.xfail(strict=True, reason="the roughness penalty on the baseline curve is not "
                                           "invariant to swapping the arms")
    def test_treatment_relabel_negates_pathway_exactly(self):
        a, b = self._relabelled_pair(400)
        npt.assert_allclose(b.tvem_fit.alphaX.estimate, -a.tvem_fit.alphaX.estimate, atol=1e-6)
        assert b.indirect_effect == pytest.approx(-a.indirect_effect, abs=1e-6)

    def test_zero_record_subjects_dropped(self):
        d = generate_dataset(Scenario(n_subjects=300, seed=1))
        keep = d.record_subject >= 3  # strip the records of the first three subjects
        d = LongDataset(d.ids, d.treatment, d.covariates, d.outcome, d.record_subject[keep],
                        d.times[keep], d.mediator[keep], d.t_min, d.t_max)
        res = fit_funmediation(d, MediationConfig())
        assert res.dropped_ids == ["1", "2", "3"] and res.n_subjects == 297

    def test_min_obs_filter(self):
        d = generate_dataset(Scenario(n_subjects=300, seed=1, missing_rate=0.97))
        res = fit_funmediation(d, MediationConfig(min_obs=3))
        assert res.n_dropped == int(np.sum(d.record_counts() < 3))

    def test_stage_named_in_errors(self):
        d = generate_dataset(Scenario(n_subjects=50, seed=1))
        d = LongDataset(d.ids, d.treatment, d.covariates, np.full(50, 0.5), d.record_subject,
                        d.times, d.mediator, d.t_min, d.t_max)
        with pytest.raises(InputError, match="funreg stage"):
            fit_funmediation(d, MediationConfig())

    def test_non_binary_treatment(self):
        d = generate_dataset(Scenario(n_subjects=50, seed=1))
        d = LongDataset(d.ids, d.treatment * 2, d.covariates, d.outcome, d.record_subject,
                        d.times, d.mediator, d.t_min, d.t_max)
        with pytest.raises(InputError, match="0/1"):
            fit_funmediation(d)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"nboot": 0}, {"ci_level": 1.0}, {"grid_size": 5},
                                    {"min_obs": -1}, {"seed": -1}, {"seed": 2**64},
                                    {"funreg_criterion": "aic"}, {"outcome_link": "probit"}])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            MediationConfig(**kw)

    def test_defaults_and_dict(self):
        cfg = MediationConfig(presmooth="spline", outcome_link="LOG")
        d = cfg.to_dict()
        assert d["nboot"] == 500 and d["grid_size"] == 100 and d["min_obs"] == 1
        assert d["presmooth"] == "spline" and d["outcome_link"] == "log"
        assert d["tvem_criterion"] == "gcv" and d["funreg_criterion"] == "reml"


class TestBootstrapIntervals:
    @pytest.mark.parametrize("n,level,expected", [(199, 0.95, (5, 195)), (999, 0.95, (25, 975)),
                                                  (99, 0.90, (5, 95)), (39, 0.95, (1, 39))])
    def test_ranks(self, n, level, expected):
        assert percentile_ranks(n, level) == expected

    def test_order_statistics_and_reflection(self):
        reps = np.random.default_rng(0).permutation(np.arange(1, 200) / 100.0)
        iv = bootstrap_intervals(1.0, reps, 0.95)
        assert iv["percentile"] == (0.05, 1.95)
        npt.assert_allclose(iv["basic"], (2 - 1.95, 2 - 0.05))
        sd = np.std(reps, ddof=1)
        npt.assert_allclose(iv["normal"], (1 - 1.959963984540054 * sd, 1 + 1.959963984540054 * sd))

    def test_p_value(self):
        assert bootstrap_intervals(1.0, np.arange(1, 200.0))["p_value"] == pytest.approx(0.01)
        reps = np.concatenate([-np.arange(1, 5.0), np.arange(1, 196.0)])
        assert bootstrap_intervals(1.0, reps)["p_value"] == pytest.approx(2 * 5 / 200)
        assert bootstrap_intervals(0.0, np.linspace(-1, 1, 199))["p_value"] == 1.0

    def test_degenerate(self):
        iv = bootstrap_intervals(0.3, np.full(199, 0.3))
        for key in ("normal", "basic", "percentile"):
            npt.assert_allclose(iv[key], (0.3, 0.3))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=40, max_size=300), finite, st.sampled_from([0.8, 0.9, 0.95]))
    def test_properties(self, reps, est, level):
        reps = np.asarray(reps)
        iv = bootstrap_intervals(est, reps, level)
        lo, hi = iv["percentile"]
        med = np.sort(reps)[(reps.size - 1) // 2]
        assert lo <= med <= hi
        npt.assert_allclose(iv["basic"], (2 * est - hi, 2 * est - lo))
        assert 0 < iv["p_value"] <= 1
        if lo > 0 or hi < 0:
            assert iv["p_value"] <= 1 - level + 1e-12

    def test_empty(self):
        with pytest.raises(InputError):
            bootstrap_intervals(0.0, [])


class TestBootstrap:
    @pytest.fixture(scope="class")
    @staticmethod
    def data():
        return generate_dataset(Scenario(n_subjects=150, seed=4))

    def test_indices_deterministic(self):
        a = resample_indices(30, 5, 9)
        assert np.array_equal(a, resample_indices(30, 5, 9))
        assert a.shape == (5, 30) and a.min() >= 0 and a.max() < 30
        assert not np.array_equal(a, resample_indices(30, 5, 10))

    def test_serial_parallel_identical(self, data):
        cfg = MediationConfig(nboot=40, seed=3)
        serial = bootstrap_mediation(data, cfg, n_jobs=1)
        parallel = bootstrap_mediation(data, cfg, n_jobs=2)
        assert serial.all_replicates.tobytes() == parallel.all_replicates.tobytes()
        assert serial.ci_percentile == parallel.ci_percentile

    def test_replicate_matches_direct_refit(self, data):
        cfg = MediationConfig(nboot=3, seed=8)
        kept, _ = data.filter_min_obs(1)
        boot = bootstrap_mediation(data, cfg)
        idx = resample_indices(kept.n_subjects, 3, 8)[1]
        direct = fit_funmediation(kept.resample(idx), cfg).indirect_effect
        assert boot.all_replicates[1] == pytest.approx(direct, abs=1e-7)

    def test_result_fields(self, data):
        boot = bootstrap_mediation(data, MediationConfig(nboot=50, seed=1))
        assert boot.nboot == 50 and boot.n_failed == 0 and boot.replicates.size == 50
        lo, hi = boot.ci_percentile
        assert lo <= hi and 0 < boot.p_value <= 1 and boot.sd > 0

    def test_failures_counted_and_limit(self, data, monkeypatch):
        calls = {"n": 0}
        real = mediation._Replicator.__call__

        def flaky(self, index):
            calls["n"] += 1
            return float("nan") if calls["n"] % 10 == 0 else real(self, index)

        monkeypatch.setattr(mediation._Replicator, "__call__", flaky)
        boot = bootstrap_mediation(data, MediationConfig(nboot=40, seed=2))
        assert boot.n_failed == 4 and boot.replicates.size == 36
        monkeypatch.setattr(mediation._Replicator, "__call__", lambda self, ix: float("nan"))
        with pytest.raises(ConvergenceError, match="larger sample"):
            bootstrap_mediation(data, MediationConfig(nboot=40, seed=2))

    def test_run_replicates_empty(self, data):
        kept, _ = data.filter_min_obs(1)
        assert run_replicates(kept, MediationConfig(), np.zeros((0, kept.n_subjects), int)).size == 0


class TestLogLinkDecomposition:
    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.tuples(finite, finite, finite), min_size=2, max_size=60),
           finite, st.floats(-5, 5), st.floats(0.1, 10))
    def test_identity_holds(self, rows, bx, t0, width):
        a0, ax, bm = np.asarray(rows).T
        assert log_link_decomposition_check(a0, ax, bx, bm, t0, t0 + width) < 1e-12

    def test_reference_values(self):
        d = log_link_decomposition(np.zeros(10), np.full(10, -0.2113), 0.2, np.ones(10), 0.0, 1.0)
        assert d["log_te"] == pytest.approx(-0.0113, abs=1e-12)
        assert d["te_ratio"] == pytest.approx(0.9888, abs=1e-4)
        assert d["log_de"] == pytest.approx(0.2) and d["log_ie"] == pytest.approx(-0.2113)

    def test_null_model(self):
        d = log_link_decomposition(np.ones(5), np.zeros(5), 0.0, np.ones(5), 0.0, 1.0)
        assert d["log_te"] == 0.0 and d["te_ratio"] == 1.0

    def test_population_functions(self):
        t = np.linspace(0, 1, 10_000)
        d = log_link_decomposition(np.sqrt(t), alpha_x(t), 0.2, beta_m(t), 0.0, 1.0)
        assert abs(d["log_te"] - (d["log_de"] + d["log_ie"])) < 1e-12
        assert d["de_ratio"] * d["ie_ratio"] == pytest.approx(d["te_ratio"], rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            log_link_decomposition(np.ones(3), np.ones(4), 0.0, np.ones(3), 0.0, 1.0)
