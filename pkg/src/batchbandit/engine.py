"""Experiment execution: one run, and seeded Monte-Carlo campaigns of runs.

Reproducibility contract
------------------------
All randomness flows from ``master_seed`` through :func:`substream_seed`, a
chained SplitMix64 mix of integer parts, into numpy ``PCG64`` generators:

* environment draws of run ``r`` use ``substream_seed(master, r, 1)``;
* the optimal-probability draws after batch ``b`` of run ``r`` use
  ``substream_seed(master, r, 2, b)``.

Because every generator is derived from ``(master_seed, run index)`` rather
than shared, results are byte-identical for any worker count and execution
order, and independent of whether trajectories are retained.

Within a run, batch 1 is served exactly uniformly (the improper prior carries
no information); from batch 2 on, the sampling rule turns the latest optimal
probabilities into a traffic target, which is floored so every arm keeps a
minimum share.  After the last batch the winner is claimed if the largest
optimal probability clears the decision threshold.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import posterior as post
from .allocation import DecisionRule, mc_argmax_fractions, ttts_target
from .environment import (
    ArmSpec,
    BatchSchedule,
    ReplayLog,
    _summaries_from_arrays,
    draw_batch_stats,
    mean_at_batch,
    replay_batch_stats,
)
from .errors import InvalidConfigError
from .posterior import BatchSummary

RULE_UNIFORM = "uniform"
RULE_NB_TS = "NB-TS"
RULE_WB_TS = "WB-TS"
RULE_NB_TTTS = "NB-TTTS"
RULE_WB_TTTS = "WB-TTTS"
SAMPLING_RULES = (RULE_UNIFORM, RULE_NB_TS, RULE_WB_TS, RULE_NB_TTTS, RULE_WB_TTTS)

_STREAM_ENV = 1
_STREAM_ALPHA = 2

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def substream_seed(master_seed: int, *parts: int) -> int:
    """64-bit mix of (master_seed, *parts): chained SplitMix64 finalizers.

    ``z0 = mix(master)``, then ``z_{i+1} = mix(z_i XOR part_i)`` where ``mix``
    is the SplitMix64 output function.  Used to key independent PCG64 streams.
    """
    z = _splitmix64(master_seed & _MASK64)
    for p in parts:
        z = _splitmix64(z ^ (int(p) & _MASK64))
    return z


def _generator(master_seed: int, *parts: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream_seed(master_seed, *parts)))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs: ground truth, rule, and decision.

    Exactly one of ``arms`` (synthetic Gaussian rewards) or ``replay_log``
    (bootstrap resampling of logged rewards) supplies the environment.  NB
    rules pool batches by sample size; WB rules use the weighted-batch
    scheme.  ``eta`` rescales posterior precision wherever optimal
    probabilities are computed, allocation and final decision alike.
    """

    schedule: BatchSchedule
    sampling_rule: str
    decision: DecisionRule
    arms: tuple[ArmSpec, ...] | None = None
    replay_log: ReplayLog | None = None
    gamma: float = 0.01
    eta: float = 1.0
    beta: float = 0.5
    weight_scheme: str = post.PHI_ONE
    variance_mode: str = post.VARIANCE_KNOWN
    default_sigma_sq: float = 1.0
    alpha_draws: int = 10_000
    master_seed: int = 0
    experiment_id: str = ""
    hypothesis: str = ""
    true_best: int | None = None

    def __post_init__(self) -> None:
        if (self.arms is None) == (self.replay_log is None):
            raise InvalidConfigError("exactly one of arms / replay_log must be set")
        if self.sampling_rule not in SAMPLING_RULES:
            raise InvalidConfigError(
                f"unknown sampling rule {self.sampling_rule!r}; known: {SAMPLING_RULES}"
            )
        k = self.num_arms
        if k < 2:
            raise InvalidConfigError("need at least 2 arms")
        if not 0.0 <= self.gamma * k < 1.0:
            raise InvalidConfigError(f"need 0 <= gamma*K < 1, got gamma={self.gamma}, K={k}")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise InvalidConfigError(f"eta must be > 0, got {self.eta}")
        if not 0.0 < self.beta <= 1.0:
            raise InvalidConfigError(f"beta must be in (0, 1], got {self.beta}")
        if self.alpha_draws < 1000:
            raise InvalidConfigError(f"alpha_draws must be >= 1000, got {self.alpha_draws}")
        if self.schedule.batch_size < k:
            raise InvalidConfigError("schedule batch_size must be >= number of arms")
        if self.weight_scheme not in post.WEIGHT_SCHEMES:
            raise InvalidConfigError(f"unknown weight scheme {self.weight_scheme!r}")
        if self.variance_mode not in post.VARIANCE_MODES:
            raise InvalidConfigError(f"unknown variance mode {self.variance_mode!r}")
        if self.default_sigma_sq <= 0:
            raise InvalidConfigError("default_sigma_sq must be > 0")

    @property
    def num_arms(self) -> int:
        return len(self.arms) if self.arms is not None else self.replay_log.num_arms

    @property
    def statistic_scheme(self) -> str:
        """NB rules (and the uniform baseline) use "nb"; WB rules use "wb"."""
        return post.SCHEME_WB if self.sampling_rule.startswith("WB") else post.SCHEME_NB

    @property
    def is_adaptive(self) -> bool:
        return self.sampling_rule != RULE_UNIFORM


@dataclass(frozen=True)
class BatchRecord:
    """What happened in one batch of one run."""

    batch_index: int
    allocation: tuple[float, ...]
    summaries: tuple[BatchSummary, ...]
    alpha: tuple[float, ...] | None


@dataclass(frozen=True)
class DecisionRecord:
    """Per-run outcome streamed to the metrics layer.

    ``winner`` is the 1-based claimed arm, present iff the largest final
    optimal probability strictly exceeds the decision threshold.
    """

    run_index: int
    experiment_id: str
    hypothesis: str
    true_best: int | None
    final_alpha: tuple[float, ...] | None
    winner: int | None
    arm_counts: tuple[int, ...]
    total_samples: int

    def to_dict(self) -> dict:
        return {
            "run_index": self.run_index,
            "experiment_id": self.experiment_id,
            "hypothesis": self.hypothesis,
            "true_best": self.true_best,
            "final_alpha": list(self.final_alpha) if self.final_alpha is not None else None,
            "winner": self.winner,
            "arm_counts": list(self.arm_counts),
            "total_samples": self.total_samples,
        }


@dataclass(frozen=True)
class RunTrajectory:
    """Full per-batch log of one run (allocation, summaries, alpha)."""

    run_index: int
    batches: tuple[BatchRecord, ...]
    final_alpha: tuple[float, ...] | None
    winner: int | None
    arm_counts: tuple[int, ...]
    total_samples: int

    def to_dict(self) -> dict:
        return {
            "run_index": self.run_index,
            "batches": [
                {
                    "batch_index": rec.batch_index,
                    "allocation": list(rec.allocation),
                    "alpha": list(rec.alpha) if rec.alpha is not None else None,
                    "summaries": [
                        {
                            "batch_index": s.batch_index,
                            "arm_index": s.arm_index,
                            "count": s.count,
                            "mean": s.mean,
                            "reward_sum": s.reward_sum,
                            "sum_sq": s.sum_sq,
                            "batch_total": s.batch_total,
                            "served_prob": s.served_prob,
                        }
                        for s in rec.summaries
                    ],
                }
                for rec in self.batches
            ],
            "final_alpha": list(self.final_alpha) if self.final_alpha is not None else None,
            "winner": self.winner,
            "arm_counts": list(self.arm_counts),
            "total_samples": self.total_samples,
        }


class _RunContext:
    """Per-chunk precomputation shared by every run of a config."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        k = config.num_arms
        b = config.schedule.num_batches
        self.uniform = np.full(k, 1.0 / k)
        if config.replay_log is not None:
            self.replay = config.replay_log
            if self.replay.num_batches < b:
                raise InvalidConfigError(
                    f"replay log covers {self.replay.num_batches} batches, need {b}"
                )
            self.known_sigma_sq = self.replay.arm_sigma_sq()
            self.means_by_batch = None
            self.noise_sds = None
        else:
            self.replay = None
            self.means_by_batch = np.array(
                [[mean_at_batch(a, bi) for a in config.arms] for bi in range(1, b + 1)]
            )
            self.noise_sds = np.array([a.noise_sd for a in config.arms])
            self.known_sigma_sq = self.noise_sds ** 2

    def target_from_alpha(self, alpha: np.ndarray) -> np.ndarray:
        if self.config.sampling_rule in (RULE_NB_TS, RULE_WB_TS):
            return alpha
        return ttts_target(alpha, self.config.beta)

    def floored(self, target: np.ndarray) -> np.ndarray:
        # gamma + (1 - gamma*K) * t, with the uniform fixed point kept exact
        if target is self.uniform:
            return self.uniform
        k = target.size
        return self.config.gamma + (1.0 - self.config.gamma * k) * target

    def sigma_sq_vector(self, counts: np.ndarray, means: np.ndarray,
                        sum_sqs: np.ndarray, totals: np.ndarray) -> np.ndarray:
        """Per-arm reward variance under the configured mode."""
        cfg = self.config
        if cfg.variance_mode == post.VARIANCE_KNOWN:
            return self.known_sigma_sq
        if cfg.statistic_scheme == post.SCHEME_NB:
            est, _ = _nb_estimates(counts, means)
        else:
            est = _wb_estimates(counts, means, totals, cfg.weight_scheme)
        sig = post.sample_variance_from_arrays(counts, sum_sqs, est)
        return np.where(counts.sum(axis=0) >= 2, sig, cfg.default_sigma_sq)

    def posterior_mu_tau(self, counts, means, sum_sqs, totals):
        sigma_sq = self.sigma_sq_vector(counts, means, sum_sqs, totals)
        if self.config.statistic_scheme == post.SCHEME_NB:
            return post.nb_mu_tau(counts, means, sigma_sq)
        return post.wb_mu_tau(counts, means, totals, sigma_sq, self.config.weight_scheme)


def _nb_estimates(counts: np.ndarray, means: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = counts.sum(axis=0)
    safe = np.maximum(n, 1.0)
    return (counts * means).sum(axis=0) / safe, n


def _wb_estimates(counts, means, totals, weight_scheme) -> np.ndarray:
    w = post.wb_weights(counts, totals, weight_scheme)
    return (w * means).sum(axis=0)


def _run_single(
    ctx: _RunContext,
    run_index: int,
    keep_trajectory: bool,
) -> tuple[DecisionRecord, RunTrajectory | None]:
    cfg = ctx.config
    k = cfg.num_arms
    num_batches = cfg.schedule.num_batches
    env_rng = _generator(cfg.master_seed, run_index, _STREAM_ENV)

    counts = np.zeros((num_batches, k))
    means = np.zeros((num_batches, k))
    sum_sqs = np.zeros((num_batches, k))
    totals = np.zeros(num_batches)
    alpha: np.ndarray | None = None
    batch_records: list[BatchRecord] = []

    for b in range(1, num_batches + 1):
        if b == 1 or not cfg.is_adaptive or alpha is None:
            target = ctx.uniform
        else:
            target = ctx.target_from_alpha(alpha)
        e = ctx.floored(target)

        if ctx.replay is not None:
            total = cfg.schedule.draw_total(env_rng)
            n, ybar, ss = replay_batch_stats(ctx.replay, e, b, total, env_rng)
        else:
            total = cfg.schedule.draw_total(env_rng)
            n, ybar, ss = draw_batch_stats(
                ctx.means_by_batch[b - 1], ctx.noise_sds, e, total, env_rng
            )
        i = b - 1
        counts[i], means[i], sum_sqs[i], totals[i] = n, ybar, ss, total

        # Optimal probabilities after this batch: needed to allocate the next
        # batch under an adaptive rule, for the final decision, and whenever
        # the trajectory is retained.  Each (run, batch) has its own stream,
        # so skipping intermediate ones never shifts any other draw.
        need_alpha = (cfg.is_adaptive and b < num_batches) or b == num_batches or keep_trajectory
        if need_alpha:
            mu, tau = ctx.posterior_mu_tau(
                counts[:b], means[:b], sum_sqs[:b], totals[:b]
            )
            if np.all(tau > 0):
                sds = 1.0 / np.sqrt(cfg.eta * tau)
                alpha_rng = _generator(cfg.master_seed, run_index, _STREAM_ALPHA, b)
                alpha = mc_argmax_fractions(mu, sds, cfg.alpha_draws, alpha_rng)
            else:
                alpha = None  # some arm still has no data

        if keep_trajectory:
            batch_records.append(BatchRecord(
                batch_index=b,
                allocation=tuple(float(x) for x in e),
                summaries=tuple(_summaries_from_arrays(b, n, ybar, ss, int(total), e)),
                alpha=tuple(float(x) for x in alpha) if alpha is not None else None,
            ))

    arm_counts = tuple(int(c) for c in counts.sum(axis=0))
    winner = None
    if alpha is not None and float(alpha.max()) > cfg.decision.delta:
        winner = int(alpha.argmax()) + 1
    record = DecisionRecord(
        run_index=run_index,
        experiment_id=cfg.experiment_id,
        hypothesis=cfg.hypothesis,
        true_best=cfg.true_best,
        final_alpha=tuple(float(x) for x in alpha) if alpha is not None else None,
        winner=winner,
        arm_counts=arm_counts,
        total_samples=int(totals.sum()),
    )
    trajectory = None
    if keep_trajectory:
        trajectory = RunTrajectory(
            run_index=run_index,
            batches=tuple(batch_records),
            final_alpha=record.final_alpha,
            winner=winner,
            arm_counts=arm_counts,
            total_samples=record.total_samples,
        )
    return record, trajectory


def run_experiment(config: ExperimentConfig, run_index: int = 1) -> RunTrajectory:
    """Execute one run and return its full trajectory.

    ``run_index`` selects the run's random substreams; campaigns use indices
    1..num_runs, so ``run_experiment(config, r)`` reproduces run ``r`` of
    :func:`run_monte_carlo` exactly.
    """
    if run_index < 1:
        raise InvalidConfigError(f"run_index must be >= 1, got {run_index}")
    _, trajectory = _run_single(_RunContext(config), run_index, keep_trajectory=True)
    return trajectory


def allocation_for_batch(
    config: ExperimentConfig,
    run_index: int,
    batch_index: int,
    prior_summaries: Sequence[BatchSummary] = (),
) -> np.ndarray:
    """Allocation the engine would serve at ``batch_index``.

    Recomputes it from the summaries of batches 1..batch_index-1 alone, which
    is how trajectories can be audited: the served allocation is a pure
    function of (config, prior summaries, seed).
    """
    ctx = _RunContext(config)
    if batch_index == 1 or not config.is_adaptive:
        return ctx.floored(ctx.uniform).copy()
    k = config.num_arms
    by_batch: dict[int, dict[int, BatchSummary]] = {}
    for s in prior_summaries:
        by_batch.setdefault(s.batch_index, {})[s.arm_index] = s
    b_prev = batch_index - 1
    if sorted(by_batch) != list(range(1, b_prev + 1)):
        raise InvalidConfigError(f"need summaries for batches 1..{b_prev}")
    counts = np.array([[by_batch[b][a].count for a in range(1, k + 1)]
                       for b in range(1, b_prev + 1)], dtype=float)
    means = np.array([[by_batch[b][a].mean for a in range(1, k + 1)]
                      for b in range(1, b_prev + 1)])
    sum_sqs = np.array([[by_batch[b][a].sum_sq for a in range(1, k + 1)]
                        for b in range(1, b_prev + 1)])
    totals = np.array([by_batch[b][1].batch_total for b in range(1, b_prev + 1)], dtype=float)
    mu, tau = ctx.posterior_mu_tau(counts, means, sum_sqs, totals)
    if not np.all(tau > 0):
        return ctx.floored(ctx.uniform).copy()
    sds = 1.0 / np.sqrt(config.eta * tau)
    alpha_rng = _generator(config.master_seed, run_index, _STREAM_ALPHA, b_prev)
    alpha = mc_argmax_fractions(mu, sds, config.alpha_draws, alpha_rng)
    return ctx.floored(ctx.target_from_alpha(alpha)).copy()


def _worker_chunk(
    config: ExperimentConfig,
    run_indices: Sequence[int],
    keep_trajectories: bool,
) -> list[tuple[DecisionRecord, RunTrajectory | None]]:
    ctx = _RunContext(config)
    return [_run_single(ctx, r, keep_trajectories) for r in run_indices]


def run_monte_carlo(
    config: ExperimentConfig,
    num_runs: int,
    workers: int = 1,
    keep_trajectories: bool = False,
    progress: Callable[[int, int], None] | None = None,
    chunk_size: int = 256,
):
    """Run ``num_runs`` seeded runs; returns DecisionRecords sorted by run index.

    Run ``r`` (1-based) derives all its randomness from
    ``substream_seed(master_seed, r, ...)``, so the result set is identical
    for any ``workers`` count, chunking, or completion order.  With
    ``keep_trajectories`` a (records, trajectories) pair is returned instead.
    """
    if num_runs < 1:
        raise InvalidConfigError(f"num_runs must be >= 1, got {num_runs}")
    indices = list(range(1, num_runs + 1))
    chunks = [indices[i:i + chunk_size] for i in range(0, len(indices), chunk_size)]
    results: list[tuple[DecisionRecord, RunTrajectory | None]] = []
    if workers <= 1:
        ctx = _RunContext(config)
        for ci, chunk in enumerate(chunks):
            results.extend(_run_single(ctx, r, keep_trajectories) for r in chunk)
            if progress is not None:
                progress(min((ci + 1) * chunk_size, num_runs), num_runs)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_worker_chunk, config, chunk, keep_trajectories)
                for chunk in chunks
            ]
            done = 0
            for fut in futures:  # submission order; completion order is irrelevant
                part = fut.result()
                results.extend(part)
                done += len(part)
                if progress is not None:
                    progress(done, num_runs)
    results.sort(key=lambda pair: pair[0].run_index)
    records = [rec for rec, _ in results]
    if keep_trajectories:
        return records, [traj for _, traj in results]
    return records
