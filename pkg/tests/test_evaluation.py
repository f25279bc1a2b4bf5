"""Tests for metrics and the packaged studies (reduced scale)."""

import math

import numpy as np
import pytest

from batchbandit.allocation import DecisionRule
from batchbandit.datasets import H0, H1, ExperimentSpec, builtin_dataset
from batchbandit.engine import DecisionRecord
from batchbandit.environment import BatchSchedule
from batchbandit.errors import InsufficientDataError, InvalidConfigError
from batchbandit.evaluation import (
    METRICS_HEADER,
    beta_marginal_moments,
    bias_demo,
    calibrate_neutral_eta,
    compute_fpr,
    compute_power,
    compute_precision,
    compute_regret,
    convergence_study,
    mean_regret,
    run_campaign,
    wilson_interval,
)


def record(hypothesis, alpha, true_best=None, counts=(50, 50), run_index=1, delta=0.95):
    alpha = tuple(alpha)
    winner = None
    if alpha and max(alpha) > delta:
        winner = int(np.argmax(alpha)) + 1
    return DecisionRecord(
        run_index=run_index,
        experiment_id="t",
        hypothesis=hypothesis,
        true_best=true_best,
        final_alpha=alpha,
        winner=winner,
        arm_counts=tuple(counts),
        total_samples=sum(counts),
    )


class TestWilson:
    def test_contains_point_estimate(self):
        lo, hi = wilson_interval(30, 100)
        assert lo < 0.3 < hi

    def test_zero_and_full(self):
        lo, hi = wilson_interval(0, 50)
        assert lo == 0.0 and hi > 0
        lo, hi = wilson_interval(50, 50)
        assert hi == 1.0 and lo < 1

    def test_empty_raises(self):
        with pytest.raises(InsufficientDataError):
            wilson_interval(0, 0)


class TestComputeFpr:
    def test_counting(self):
        records = [record(H0, a) for a in ([0.99, 0.01], [0.3, 0.7], [0.6, 0.4])]
        rate, (lo, hi) = compute_fpr(records, 0.95)
        assert rate == pytest.approx(1 / 3)
        assert lo <= rate <= hi

    def test_all_below_threshold(self):
        records = [record(H0, [0.9, 0.1]) for _ in range(5)]
        assert compute_fpr(records, 0.95)[0] == 0.0

    def test_empty_raises(self):
        with pytest.raises(InsufficientDataError):
            compute_fpr([record(H1, [0.99, 0.01], true_best=1)], 0.95)


class TestComputePower:
    def test_correct_claims_only(self):
        recs = [record(H1, [0.99, 0.01], true_best=1) for _ in range(9)]
        recs.append(record(H1, [0.01, 0.99], true_best=1))  # wrong-arm claim
        rate, _ = compute_power(recs, 0.95)
        assert rate == pytest.approx(0.9)

    def test_wrong_arm_claim_is_failure(self):
        recs = [record(H1, [0.01, 0.99], true_best=1)]
        assert compute_power(recs, 0.95)[0] == 0.0


class TestComputePrecision:
    def test_mixed_claims(self):
        recs = [record(H1, [0.99, 0.01], true_best=1) for _ in range(8)]
        recs += [record(H0, [0.99, 0.01]) for _ in range(2)]
        recs += [record(H1, [0.2, 0.8], true_best=1) for _ in range(5)]  # no claim
        assert compute_precision(recs, 0.95) == pytest.approx(0.8)

    def test_no_claims_sentinel(self):
        recs = [record(H0, [0.5, 0.5]), record(H1, [0.6, 0.4], true_best=1)]
        assert compute_precision(recs, 0.95) is None

    def test_all_correct(self):
        recs = [record(H1, [0.99, 0.01], true_best=1) for _ in range(4)]
        assert compute_precision(recs, 0.95) == 1.0


class TestComputeRegret:
    def test_all_on_best(self):
        assert compute_regret(record(H1, [1.0, 0.0], true_best=1, counts=(100, 0))) == 0.0

    def test_all_on_inferior(self):
        assert compute_regret(record(H1, [0.0, 1.0], true_best=1, counts=(0, 100))) == 1.0

    def test_uniform_share(self):
        rec = record(H1, [0.5, 0.5], true_best=1, counts=(25, 75))
        assert compute_regret(rec) == 0.75

    def test_mean_over_h1_only(self):
        recs = [
            record(H1, [0.9, 0.1], true_best=1, counts=(80, 20)),
            record(H0, [0.5, 0.5], counts=(0, 100)),
            record(H1, [0.9, 0.1], true_best=1, counts=(60, 40)),
        ]
        mean, sd = mean_regret(recs)
        assert mean == pytest.approx(0.3)
        assert sd == pytest.approx(np.std([0.2, 0.4], ddof=1))


class TestRunCampaign:
    def test_small_campaign_rows(self):
        ds = builtin_dataset("A")
        experiments = (ds.experiments[0], ds.experiments[5])  # one H1, one H0
        result = run_campaign(
            experiments, "uniform",
            schedule=BatchSchedule("fixed_size", 100, 4),
            decision=DecisionRule.from_fpr(0.1, 2),
            runs=12, master_seed=5, alpha_draws=1000,
        )
        assert len(result.records) == 24
        rate, ci = result.fpr()
        assert 0.0 <= rate <= 1.0
        rows = result.metric_rows("A")
        assert {row["metric"] for row in rows} >= {"fpr", "power", "regret", "precision"}
        assert set(rows[0]) == set(METRICS_HEADER)
        pooled = [r for r in rows if r["dataset"] == "A"]
        assert pooled and all(r["policy"] == "uniform" for r in pooled)

    def test_campaign_deterministic(self):
        ds = builtin_dataset("A")
        kwargs = dict(
            schedule=BatchSchedule("fixed_size", 100, 3),
            decision=DecisionRule.from_fpr(0.1, 2),
            runs=6, master_seed=9, alpha_draws=1000,
        )
        r1 = run_campaign(ds.experiments[:2], "NB-TS", **kwargs)
        r2 = run_campaign(ds.experiments[:2], "NB-TS", **kwargs)
        assert r1.records == r2.records

    def test_unknown_policy(self):
        with pytest.raises(InvalidConfigError):
            run_campaign((), "egreedy", schedule=BatchSchedule("fixed_size", 10, 2),
                         decision=DecisionRule.from_fpr(0.1, 2), runs=1)


class TestCountingIdentities:
    def test_precision_times_claims_equals_power_times_h1(self):
        # holds whenever every H1 claim names the true best arm
        recs = [record(H1, [0.99, 0.01], true_best=1, run_index=i) for i in range(6)]
        recs += [record(H1, [0.6, 0.4], true_best=1, run_index=i) for i in range(4)]
        recs += [record(H0, [0.97, 0.03], run_index=i) for i in range(3)]
        delta = 0.95
        claims = sum(1 for r in recs if max(r.final_alpha) > delta)
        power, _ = compute_power(recs, delta)
        precision = compute_precision(recs, delta)
        n1 = sum(1 for r in recs if r.hypothesis == H1)
        assert precision * claims == pytest.approx(power * n1)

    def test_rates_live_in_unit_interval_with_cis(self):
        recs = [record(H0, [0.98, 0.02], run_index=i) for i in range(5)]
        recs += [record(H1, [0.99, 0.01], true_best=1, run_index=i) for i in range(5)]
        rate, (lo, hi) = compute_fpr(recs, 0.95)
        assert 0.0 <= lo <= rate <= hi <= 1.0
        rate, (lo, hi) = compute_power(recs, 0.95)
        assert 0.0 <= lo <= rate <= hi <= 1.0


class TestBetaMoments:
    @pytest.mark.parametrize("k,mean,var", [
        (2, 0.5, 1 / 12), (3, 1 / 3, 1 / 18), (5, 0.2, 2 / 75),
    ])
    def test_values(self, k, mean, var):
        m, v = beta_marginal_moments(k)
        assert m == pytest.approx(mean, abs=1e-12)
        assert v == pytest.approx(var, abs=1e-12)


class TestCalibration:
    def test_k2_neutral_is_near_one(self):
        result = calibrate_neutral_eta(
            2, eta_grid=[0.6, 0.8, 0.9, 1.0, 1.1, 1.2], runs=500,
            samples_per_arm=2000, batches=10, alpha_draws=1500, master_seed=4,
        )
        assert result.eta_star == pytest.approx(1.0, abs=0.1001)

    # the moment-distance optimum is flat, so grid argmins at moderate run
    # counts land within one 0.05 step of the large-sample values
    @pytest.mark.parametrize("k_prime,expected", [(2, 1.0), (3, 0.7), (5, 0.5)])
    def test_default_protocol_neutral_eta(self, k_prime, expected):
        result = calibrate_neutral_eta(
            k_prime, runs=1200, samples_per_arm=10_000, batches=20,
            alpha_draws=2000, master_seed=14,
        )
        assert result.eta_star == pytest.approx(expected, abs=0.1001)

    def test_curve_is_deterministic_and_smooth(self):
        kwargs = dict(eta_grid=[0.5, 0.7, 1.0], runs=300, samples_per_arm=1000,
                      batches=5, alpha_draws=1000, master_seed=8)
        r1 = calibrate_neutral_eta(3, **kwargs)
        r2 = calibrate_neutral_eta(3, **kwargs)
        assert r1.curve == r2.curve
        variances = [p.variance for p in r1.curve]
        assert variances == sorted(variances)  # variance grows with eta

    def test_single_eta_matches_engine_uniform_run_exactly(self):
        # same stream layout as the engine, so a one-point grid reproduces
        # the uniform-rule campaign bit for bit
        runs, draws, batches, seed = 6, 1000, 5, 12
        cal = calibrate_neutral_eta(
            3, eta_grid=[0.7], runs=runs, samples_per_arm=batches * 200,
            batches=batches, alpha_draws=draws, master_seed=seed,
        )
        study = convergence_study(
            3, 3, "uniform", 0.7, runs=runs, batches=batches,
            samples_per_arm_per_batch=200, alpha_draws=draws, master_seed=seed,
        )
        # recompute the per-run alpha_1 column the calibration saw
        from batchbandit.evaluation import _calibration_chunk

        alpha1 = _calibration_chunk(3, (0.7,), list(range(1, runs + 1)),
                                    batches, 200, 1.0, draws, seed)
        np.testing.assert_array_equal(alpha1[:, 0], study.alphas[:, 0])
        assert cal.curve[0].mean == pytest.approx(study.alphas[:, 0].mean(), abs=0)

    def test_empty_grid_rejected(self):
        with pytest.raises(InvalidConfigError):
            calibrate_neutral_eta(3, eta_grid=[], runs=10)

    def test_grid_domain_enforced(self):
        with pytest.raises(InvalidConfigError):
            calibrate_neutral_eta(3, eta_grid=[0.5, 2.5], runs=10)


class TestBiasDemo:
    def test_nb_biased_down_wb_centred_smoke(self):
        result = bias_demo("NB-TS", runs=3000, batch_size=1000,
                           alpha_draws=1000, master_seed=2)
        nb = result.summary("nb")
        wb = result.summary("wb")
        assert nb["mean"] < -0.03
        assert abs(wb["mean"]) < 0.06
        assert wb["sd"] == pytest.approx(1.0, abs=0.1)

    def test_degenerate_noise_drives_z_to_zero(self):
        # estimated variance hits the floor; z collapses towards 0
        result = bias_demo("WB-TS", runs=100, batch_size=300, noise_sd=1e-9,
                           variance_mode="estimated", alpha_draws=1000, master_seed=3)
        assert np.max(np.abs(result.z_wb)) < 0.01
        assert np.max(np.abs(result.z_nb)) < 0.01

    def test_histogram_counts_cover_all_runs(self):
        result = bias_demo("WB-TTTS", runs=500, batch_size=500,
                           alpha_draws=1000, master_seed=5)
        counts, edges = result.histogram("wb", bins=40)
        assert counts.sum() <= 500
        assert len(edges) == 41

    def test_uniform_rule_rejected(self):
        with pytest.raises(InvalidConfigError):
            bias_demo("uniform", runs=10)


class TestConvergenceStudy:
    def test_two_equal_arms_symmetric(self):
        result = convergence_study(
            2, 2, "uniform", 1.0, runs=400, batches=5,
            samples_per_arm_per_batch=200, alpha_draws=1000, master_seed=6,
        )
        assert result.marginal_mean == pytest.approx(0.5, abs=0.05)
        target_mean, target_var = result.beta_target()
        assert target_mean == 0.5 and target_var == pytest.approx(1 / 12)
        assert 0.0 <= result.exceedance <= 1.0

    def test_inferior_arms_absorbed(self):
        result = convergence_study(
            3, 2, "uniform", 1.0, runs=200, batches=8,
            samples_per_arm_per_batch=300, gap=1.0, alpha_draws=1000, master_seed=7,
        )
        assert result.alphas[:, 2].mean() < 0.01


class TestExperimentSpecFactory:
    def test_true_best_none_for_h0(self):
        exp = ExperimentSpec(means=(1.0, 1.0, 0.0), k_prime=2, hypothesis=H0)
        assert exp.true_best is None
