"""Tests for synthetic reward generation and replay."""

import math

import numpy as np
import pytest

from batchbandit.allocation import apply_floor
from batchbandit.environment import (
    ArmSpec,
    BatchSchedule,
    EnvironmentSpec,
    ReplayLog,
    check_variance_convergence,
    draw_batch,
    load_replay_log,
    mean_at_batch,
    replay_batch,
    write_replay_log,
)
from batchbandit.errors import InvalidInputError, ReplayCoverageError

CHI2_99_DF1 = 6.6348966010212145  # 99th percentile of chi-square with 1 dof


def rng_for(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


class TestMeanAtBatch:
    def test_stationary(self):
        spec = ArmSpec(0.7)
        assert mean_at_batch(spec, 1) == 0.7
        assert mean_at_batch(spec, 20) == 0.7

    def test_cosine_start_is_base(self):
        spec = ArmSpec(0.7, trend="cosine_decay")
        assert mean_at_batch(spec, 1) == pytest.approx(0.7, abs=1e-12)

    def test_cosine_midpoint(self):
        spec = ArmSpec(0.7, trend="cosine_decay")
        assert mean_at_batch(spec, 11) == pytest.approx(0.2, abs=1e-12)

    def test_cosine_end(self):
        spec = ArmSpec(0.0, trend="cosine_decay")
        assert mean_at_batch(spec, 20) == pytest.approx(-0.9938441702975689, abs=1e-12)

    def test_gaps_preserved_over_time(self):
        a = ArmSpec(0.9, trend="cosine_decay")
        b = ArmSpec(0.4, trend="cosine_decay")
        for batch in range(1, 21):
            gap = mean_at_batch(a, batch) - mean_at_batch(b, batch)
            assert gap == pytest.approx(0.5, abs=1e-12)

    def test_bad_batch_index(self):
        with pytest.raises(InvalidInputError):
            mean_at_batch(ArmSpec(0.0), 0)


def two_arm_env(sd=1.0, batch_size=500):
    return EnvironmentSpec(
        arms=(ArmSpec(0.3, sd), ArmSpec(-0.1, sd)),
        schedule=BatchSchedule("fixed_size", batch_size, 20),
    )


class TestDrawBatch:
    def test_counts_partition_batch_total(self):
        env = two_arm_env()
        alloc = apply_floor(np.array([0.7, 0.3]), 0.01)
        for b in range(1, 6):
            summaries = draw_batch(env, alloc, b, rng_for(b))
            assert sum(s.count for s in summaries) == 500
            assert all(s.batch_total == 500 for s in summaries)

    def test_multinomial_goodness_of_fit(self):
        env = two_arm_env()
        alloc = apply_floor(np.array([1.0, 0.0]), 0.01)  # e = (0.99, 0.01)
        rng = rng_for(0)
        totals = np.zeros(2)
        n_batches = 1000
        for b in range(n_batches):
            for s in draw_batch(env, alloc, 1, rng):
                totals[s.arm_index - 1] += s.count
        expected = n_batches * 500 * np.asarray(alloc.e)
        stat = float(((totals - expected) ** 2 / expected).sum())
        assert stat < CHI2_99_DF1

    def test_degenerate_noise_recovers_means(self):
        env = EnvironmentSpec(
            arms=(ArmSpec(0.3, 1e-9), ArmSpec(-0.1, 1e-9)),
            schedule=BatchSchedule("fixed_size", 400, 20),
        )
        alloc = apply_floor(np.array([0.5, 0.5]), 0.01)
        for s in draw_batch(env, alloc, 1, rng_for(3)):
            target = 0.3 if s.arm_index == 1 else -0.1
            assert s.mean == pytest.approx(target, abs=1e-6)

    def test_deterministic_given_seed(self):
        env = two_arm_env()
        alloc = apply_floor(np.array([0.6, 0.4]), 0.01)
        a = draw_batch(env, alloc, 2, rng_for(42))
        b = draw_batch(env, alloc, 2, rng_for(42))
        assert a == b

    def test_summaries_satisfy_invariants(self):
        env = two_arm_env(sd=2.0, batch_size=50)
        alloc = apply_floor(np.array([0.9, 0.1]), 0.01)
        rng = rng_for(5)
        for b in range(1, 50):
            for s in draw_batch(env, alloc, b, rng):
                # constructor re-validates; spot-check the quadratic bound
                assert s.sum_sq >= s.count * s.mean ** 2 - 1e-9

    def test_sample_moments_match_spec(self):
        env = two_arm_env(sd=1.0, batch_size=2000)
        alloc = apply_floor(np.array([0.5, 0.5]), 0.01)
        rng = rng_for(8)
        means = [s.mean for _ in range(300) for s in draw_batch(env, alloc, 1, rng)
                 if s.arm_index == 1]
        # batch means are N(0.3, 1/n) with n ~ 1000
        assert np.mean(means) == pytest.approx(0.3, abs=4 / math.sqrt(1000 * 300))
        assert np.std(means) == pytest.approx(1 / math.sqrt(1000), rel=0.15)

    def test_poisson_schedule_varies_total(self):
        env = EnvironmentSpec(
            arms=(ArmSpec(0.0), ArmSpec(0.0)),
            schedule=BatchSchedule("poisson_duration", 100, 5),
        )
        alloc = apply_floor(np.array([0.5, 0.5]), 0.01)
        rng = rng_for(9)
        totals = {draw_batch(env, alloc, 1, rng)[0].batch_total for _ in range(50)}
        assert len(totals) > 5
        assert abs(np.mean(sorted(totals)) - 100) < 30


def make_pool_log():
    rng = rng_for(100)
    pools = {}
    for b in (1, 2):
        pools[(b, 1)] = rng.standard_normal(400) + 0.5
        pools[(b, 2)] = rng.standard_normal(400) - 0.5
    return ReplayLog(num_batches=2, num_arms=2, pools=pools)


class TestReplay:
    def test_single_value_pool(self):
        log = ReplayLog(num_batches=1, num_arms=2,
                        pools={(1, 1): np.array([2.0]), (1, 2): np.array([3.0])})
        alloc = apply_floor(np.array([0.5, 0.5]), 0.01)
        summaries = replay_batch(log, alloc, 1, rng_for(1), total=100)
        s1 = summaries[0]
        assert s1.mean == 2.0
        assert s1.sum_sq == pytest.approx(s1.count * 4.0)

    def test_symmetric_log_converges_to_pool_means(self):
        rng = rng_for(7)
        shared = rng.standard_normal(1000) + 0.25
        log = ReplayLog(num_batches=1, num_arms=2,
                        pools={(1, 1): shared, (1, 2): shared.copy()})
        alloc = apply_floor(np.array([0.5, 0.5]), 0.01)
        m1 = []
        m2 = []
        for i in range(200):
            out = replay_batch(log, alloc, 1, rng_for(200 + i), total=400)
            m1.append(out[0].mean)
            m2.append(out[1].mean)
        assert np.mean(m1) == pytest.approx(np.mean(m2), abs=0.02)
        assert np.mean(m1) == pytest.approx(shared.mean(), abs=0.02)

    def test_bootstrap_mean_within_three_se(self):
        log = make_pool_log()
        pool = log.pools[(1, 1)]
        alloc = apply_floor(np.array([0.98, 0.02]), 0.01)
        out = replay_batch(log, alloc, 1, rng_for(55), total=2000)
        n = out[0].count
        assert out[0].mean == pytest.approx(pool.mean(), abs=3 * pool.std() / math.sqrt(n))

    def test_missing_cell_error_names_batch_and_arm(self):
        log = make_pool_log()
        alloc = apply_floor(np.array([0.5, 0.5]), 0.01)
        with pytest.raises(ReplayCoverageError, match="batch 3, arm 1"):
            replay_batch(log, alloc, 3, rng_for(0), total=100)

    def test_summary_mode_resampling(self):
        log = ReplayLog(
            num_batches=1, num_arms=2,
            summaries={(1, 1): (500, 1.0, 0.5), (1, 2): (500, -1.0, 0.5)},
        )
        alloc = apply_floor(np.array([0.5, 0.5]), 0.01)
        out = replay_batch(log, alloc, 1, rng_for(2), total=1000)
        assert out[0].mean == pytest.approx(1.0, abs=0.1)
        assert out[1].mean == pytest.approx(-1.0, abs=0.1)

    def test_csv_roundtrip_raw(self, tmp_path):
        log = make_pool_log()
        path = tmp_path / "log.csv"
        write_replay_log(path, log.pools)
        loaded = load_replay_log(path)
        assert loaded.num_batches == 2 and loaded.num_arms == 2
        np.testing.assert_array_equal(loaded.pools[(2, 1)], log.pools[(2, 1)])

    def test_csv_summary_mode(self, tmp_path):
        path = tmp_path / "log.csv"
        path.write_text("batch,arm,count,mean,sd\n1,1,100,0.5,1.0\n1,2,100,-0.5,1.0\n")
        log = load_replay_log(path)
        assert log.summaries[(1, 1)] == (100, 0.5, 1.0)

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "log.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(InvalidInputError):
            load_replay_log(path)

    def test_arm_sigma_sq_tracks_pool_variance(self):
        log = make_pool_log()
        sig = log.arm_sigma_sq()
        pooled = np.concatenate([log.pools[(1, 1)], log.pools[(2, 1)]])
        assert sig[0] == pytest.approx(pooled.var(), rel=1e-9)


class TestVarianceConvergence:
    def test_phi_one_any_schedule(self):
        sched = BatchSchedule("poisson_duration", 50, 100)
        assert check_variance_convergence(sched, "phi_one", rng=rng_for(0)) == 1.0

    def test_phi_sqrt_t_fixed_size(self):
        sched = BatchSchedule("fixed_size", 50, 100)
        assert check_variance_convergence(sched, "phi_sqrt_T", rng=rng_for(0)) == 1.0

    def test_phi_sqrt_t_poisson_concentrates(self):
        sched = BatchSchedule("poisson_duration", 100, 10_000)
        ratio = check_variance_convergence(sched, "phi_sqrt_T", rng=rng_for(13))
        assert ratio == pytest.approx(1.0, abs=0.01)
