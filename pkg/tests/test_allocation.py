"""Tests for optimal probabilities, traffic targets, and decisions."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchbandit.allocation import (
    Allocation,
    DecisionRule,
    OptimalProbs,
    apply_floor,
    decide_winner,
    estimate_optimal_probs,
    fpr_for_threshold,
    threshold_for_fpr,
    ts_target,
    ttts_target,
)
from batchbandit.errors import (
    InvalidConfigError,
    InvalidInputError,
    UninformedPosteriorError,
)
from batchbandit.posterior import GaussianPosterior, PosteriorSet


def rng_for(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


class TestEstimateOptimalProbs:
    def test_symmetric_two_arms(self):
        ps = [GaussianPosterior(0.0, 1.0), GaussianPosterior(0.0, 1.0)]
        draws = 40_000
        out = estimate_optimal_probs(ps, 1.0, draws, rng_for(1))
        tol = 3 * math.sqrt(0.25 / draws)
        assert out.alpha[0] == pytest.approx(0.5, abs=tol)

    def test_gaussian_comparison_closed_form(self):
        # P(theta2 > theta1) = Phi((0.5 - 0) / sqrt(2)) for unit variances
        expected = 0.5 * (1 + math.erf((0.5 / math.sqrt(2)) / math.sqrt(2)))
        assert expected == pytest.approx(0.6381631950841185, abs=1e-12)
        ps = [GaussianPosterior(0.0, 1.0), GaussianPosterior(0.5, 1.0)]
        draws = 100_000
        out = estimate_optimal_probs(ps, 1.0, draws, rng_for(2))
        tol = 3 * math.sqrt(expected * (1 - expected) / draws)
        assert out.alpha[1] == pytest.approx(expected, abs=tol)

    def test_dominant_arm(self):
        ps = [GaussianPosterior(10.0, 1.0), GaussianPosterior(0.0, 1.0),
              GaussianPosterior(0.0, 1.0)]
        out = estimate_optimal_probs(ps, 1.0, 2000, rng_for(3))
        assert out.alpha[0] == 1.0

    def test_eta_widens_or_sharpens(self):
        ps = [GaussianPosterior(0.0, 100.0), GaussianPosterior(0.2, 100.0)]
        wide = estimate_optimal_probs(ps, 0.1, 50_000, rng_for(4)).alpha[1]
        sharp = estimate_optimal_probs(ps, 10.0, 50_000, rng_for(4)).alpha[1]
        assert 0.5 < wide < sharp

    def test_deterministic_given_seed(self):
        ps = [GaussianPosterior(0.1, 50.0), GaussianPosterior(0.0, 80.0)]
        a = estimate_optimal_probs(ps, 1.0, 5000, rng_for(9)).alpha
        b = estimate_optimal_probs(ps, 1.0, 5000, rng_for(9)).alpha
        assert np.array_equal(a, b)

    def test_uninformed_arm_rejected(self):
        ps = [GaussianPosterior(0.0, 1.0), GaussianPosterior(0.0, 0.0)]
        with pytest.raises(UninformedPosteriorError):
            estimate_optimal_probs(ps, 1.0, 2000, rng_for(0))

    def test_accepts_posterior_set(self):
        ps = PosteriorSet.empty(2)
        from batchbandit.posterior import BatchSummary

        ps = ps.with_batch([
            BatchSummary.from_rewards(1, 1, [0.4, 0.6], 4, 0.5),
            BatchSummary.from_rewards(1, 2, [0.1, 0.2], 4, 0.5),
        ])
        out = estimate_optimal_probs(ps, 1.0, 2000, rng_for(5))
        assert out.alpha.sum() == 1.0

    @given(st.integers(min_value=0, max_value=2 ** 32 - 1),
           st.integers(min_value=2, max_value=6),
           st.integers(min_value=1000, max_value=3000))
    @settings(max_examples=40, deadline=None)
    def test_alpha_sums_to_exactly_one(self, seed, k, draws):
        rng = rng_for(seed)
        ps = [GaussianPosterior(rng.normal(), 1.0 + rng.random() * 10) for _ in range(k)]
        out = estimate_optimal_probs(ps, 1.0, draws, rng_for(seed + 1))
        assert float(np.asarray(out.alpha).sum()) == 1.0
        assert (np.asarray(out.alpha) >= 0).all()


class TestOptimalProbsType:
    def test_at_most_one_majority_component(self):
        probs = OptimalProbs(alpha=np.array([0.6, 0.3, 0.1]), draw_count=1000)
        assert (np.asarray(probs.alpha) > 0.5).sum() <= 1

    def test_rejects_non_simplex(self):
        with pytest.raises(InvalidInputError):
            OptimalProbs(alpha=np.array([0.6, 0.6]), draw_count=100)


class TestTsTarget:
    @pytest.mark.parametrize("alpha", [(0.5, 0.5), (1.0, 0.0), (0.8, 0.15, 0.05)])
    def test_identity(self, alpha):
        np.testing.assert_array_equal(ts_target(np.array(alpha)), np.array(alpha))


class TestTttsTarget:
    def test_symmetric(self):
        np.testing.assert_allclose(
            ttts_target(np.array([0.5, 0.5]), 0.5), [0.5, 0.5], atol=1e-12
        )

    def test_two_arm_rebalance(self):
        # 0.8*(0.5 + 0.5*0.25) = 0.5 and 0.2*(0.5 + 0.5*4) = 0.5
        np.testing.assert_allclose(
            ttts_target(np.array([0.8, 0.2]), 0.5), [0.5, 0.5], atol=1e-12
        )

    def test_three_arm_values(self):
        out = ttts_target(np.array([0.6, 0.3, 0.1]), 0.5)
        np.testing.assert_allclose(out, [97 / 210, 47 / 120, 41 / 280], atol=1e-12)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)

    def test_beta_one_reduces_to_ts(self):
        alpha = np.array([0.3, 0.45, 0.25])
        np.testing.assert_allclose(ttts_target(alpha, 1.0), alpha, atol=1e-15)

    def test_degenerate_unit_alpha(self):
        np.testing.assert_array_equal(
            ttts_target(np.array([0.0, 1.0, 0.0]), 0.5), [0.0, 1.0, 0.0]
        )

    def test_simplex_identity_fuzz(self):
        # the output must stay on the simplex for any interior alpha
        rng = rng_for(11)
        for k in (2, 3, 5, 10):
            alphas = rng.dirichlet(np.ones(k), size=2500)
            for alpha in alphas:
                if alpha.max() >= 1.0:
                    continue
                out = ttts_target(alpha, 0.5)
                assert abs(out.sum() - 1.0) < 1e-9
                assert (out >= -1e-15).all()

    @given(st.floats(min_value=0.01, max_value=1.0))
    @settings(max_examples=30, deadline=None)
    def test_sum_one_for_any_beta(self, beta):
        alpha = np.array([0.25, 0.35, 0.4])
        assert ttts_target(alpha, beta).sum() == pytest.approx(1.0, abs=1e-12)


class TestApplyFloor:
    def test_uniform_fixed_point(self):
        out = apply_floor(np.full(10, 0.1), 0.01)
        np.testing.assert_allclose(out.e, 0.1, atol=1e-15)

    def test_extreme_target(self):
        out = apply_floor(np.array([1.0, 0.0]), 0.01)
        np.testing.assert_allclose(out.e, [0.99, 0.01], atol=1e-15)

    def test_three_arm_affine(self):
        out = apply_floor(np.array([0.5, 0.3, 0.2]), 0.01)
        np.testing.assert_allclose(out.e, [0.495, 0.301, 0.204], atol=1e-12)

    def test_invalid_gamma(self):
        with pytest.raises(InvalidConfigError):
            apply_floor(np.array([0.5, 0.5]), 0.5)

    @given(st.integers(min_value=2, max_value=10),
           st.floats(min_value=0.0, max_value=0.05),
           st.integers(min_value=0, max_value=2 ** 31))
    @settings(max_examples=60, deadline=None)
    def test_floor_properties(self, k, gamma, seed):
        target = rng_for(seed).dirichlet(np.ones(k))
        out = apply_floor(target, gamma)
        assert abs(out.e.sum() - 1.0) < 1e-12
        assert (out.e >= gamma - 1e-15).all()
        assert int(np.argmax(out.e)) == int(np.argmax(target))


class TestThresholds:
    def test_k2(self):
        assert threshold_for_fpr(0.1, 2) == pytest.approx(0.95, abs=1e-12)

    def test_k3(self):
        assert threshold_for_fpr(0.1, 3) == pytest.approx(0.8174258141649446, abs=1e-12)

    def test_fpr_examples(self):
        assert fpr_for_threshold(0.9, 3) == pytest.approx(0.03, abs=1e-12)
        assert fpr_for_threshold(0.95, 2) == pytest.approx(0.1, abs=1e-12)
        assert fpr_for_threshold(0.8174258141649446, 3) == pytest.approx(0.1, abs=1e-9)

    def test_roundtrip_grid(self):
        for k in range(2, 7):
            for rho in np.arange(0.01, 0.2001, 0.01):
                delta = threshold_for_fpr(float(rho), k)
                assert 0.0 < delta < 1.0
                assert fpr_for_threshold(delta, k) == pytest.approx(float(rho), abs=1e-9)

    def test_domain_errors(self):
        with pytest.raises(InvalidConfigError):
            threshold_for_fpr(0.1, 1)
        with pytest.raises(InvalidConfigError):
            threshold_for_fpr(0.0, 2)
        with pytest.raises(InvalidConfigError):
            fpr_for_threshold(1.0, 2)


class TestDecisionRule:
    def test_from_fpr_consistency(self):
        rule = DecisionRule.from_fpr(0.1, 3)
        assert rule.delta == pytest.approx(0.8174258141649446)
        assert rule.rho == 0.1

    def test_inconsistent_pair_rejected(self):
        with pytest.raises(InvalidConfigError):
            DecisionRule(delta=0.9, rho=0.1, assumed_k_prime=2)


class TestDecideWinner:
    rule = DecisionRule.from_threshold(0.95)

    def test_clear_winner(self):
        assert decide_winner(np.array([0.96, 0.03, 0.01]), self.rule) == 1

    def test_no_winner(self):
        assert decide_winner(np.array([0.90, 0.07, 0.03]), self.rule) is None

    def test_boundary_is_strict(self):
        assert decide_winner(np.array([0.95, 0.05]), self.rule) is None

    def test_lowest_index_tie(self):
        rule = DecisionRule.from_threshold(0.4)
        assert decide_winner(np.array([0.45, 0.45, 0.10]), rule) == 1

    def test_at_most_one_winner_when_delta_geq_half(self):
        rng = rng_for(21)
        for _ in range(200):
            alpha = rng.dirichlet(np.ones(4))
            winners = [
                arm for arm in range(1, 5)
                if alpha[arm - 1] > 0.5
            ]
            assert len(winners) <= 1
