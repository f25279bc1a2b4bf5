"""Decision-quality metrics and the packaged simulation studies.

Metrics are computed from streamed :class:`~batchbandit.engine.DecisionRecord`
values and re-threshold the stored final optimal probabilities, so the same
records can be scored under different decision thresholds.

The packaged studies are:

* :func:`run_campaign` - a policy over a list of experiments;
* :func:`calibrate_neutral_eta` - grid search for the precision rescaling
  that makes the optimal probabilities of equivalent best arms match the
  flat-Dirichlet marginal Beta(1, K'-1);
* :func:`bias_demo` - the two-batch study contrasting the naive and
  weighted batch estimates through their studentized errors;
* :func:`convergence_study` - the long-horizon distribution of final
  optimal probabilities for equivalent best arms.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import posterior as post
from .allocation import DecisionRule, _argmax_fractions_from_z
from .datasets import H0, H1, ExperimentSpec
from .engine import (
    DecisionRecord,
    ExperimentConfig,
    RULE_UNIFORM,
    SAMPLING_RULES,
    _STREAM_ALPHA,
    _STREAM_ENV,
    _generator,
    run_monte_carlo,
    substream_seed,
)
from .environment import ArmSpec, BatchSchedule, draw_batch_stats
from .errors import InsufficientDataError, InvalidConfigError, InvalidInputError

_Z95 = 1.959963984540054  # Phi^{-1}(0.975)
_Z99 = 2.5758293035489004  # Phi^{-1}(0.995)

NO_CLAIMS = None  # sentinel returned by compute_precision when nothing was claimed


def wilson_interval(successes: int, total: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise InsufficientDataError("wilson_interval needs total >= 1")
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    centre = (p + z2 / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z2 / (4 * total * total)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == total else min(1.0, centre + half)
    return lo, hi


def _claims(record: DecisionRecord, delta: float) -> bool:
    return record.final_alpha is not None and max(record.final_alpha) > delta


def _claimed_arm(record: DecisionRecord) -> int:
    alpha = record.final_alpha
    return int(np.argmax(alpha)) + 1


def compute_fpr(records: Iterable[DecisionRecord], delta: float) -> tuple[float, tuple[float, float]]:
    """Fraction of H0 runs that claimed any winner, with a Wilson 95% CI."""
    h0 = [r for r in records if r.hypothesis == H0]
    if not h0:
        raise InsufficientDataError("compute_fpr needs at least one H0 record")
    hits = sum(_claims(r, delta) for r in h0)
    return hits / len(h0), wilson_interval(hits, len(h0))


def compute_power(records: Iterable[DecisionRecord], delta: float) -> tuple[float, tuple[float, float]]:
    """Fraction of H1 runs whose claim names the true best arm (Wilson 95% CI)."""
    h1 = [r for r in records if r.hypothesis == H1]
    if not h1:
        raise InsufficientDataError("compute_power needs at least one H1 record")
    hits = 0
    for r in h1:
        if r.true_best is None:
            raise InvalidInputError("H1 record without a true_best index")
        hits += _claims(r, delta) and _claimed_arm(r) == r.true_best
    return hits / len(h1), wilson_interval(hits, len(h1))


def compute_precision(records: Iterable[DecisionRecord], delta: float) -> float | None:
    """Correct claims / all claims; H0 claims and wrong-arm H1 claims count
    against the denominator.  Returns ``NO_CLAIMS`` (None) when no run claimed."""
    claims = 0
    correct = 0
    for r in records:
        if not _claims(r, delta):
            continue
        claims += 1
        if r.hypothesis == H1 and r.true_best is not None and _claimed_arm(r) == r.true_best:
            correct += 1
    if claims == 0:
        return NO_CLAIMS
    return correct / claims


def compute_regret(record: DecisionRecord, true_best: int | None = None) -> float:
    """Share of the run's samples served to arms other than the best one."""
    best = true_best if true_best is not None else record.true_best
    if best is None:
        raise InvalidInputError("regret needs the true best arm index")
    total = record.total_samples
    if total <= 0:
        raise InsufficientDataError("record has no samples")
    return (total - record.arm_counts[best - 1]) / total


def mean_regret(records: Iterable[DecisionRecord]) -> tuple[float, float]:
    """Mean and standard deviation of per-run regret over H1 records."""
    values = [compute_regret(r) for r in records if r.hypothesis == H1]
    if not values:
        raise InsufficientDataError("mean_regret needs at least one H1 record")
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


# ---------------------------------------------------------------------------
# Campaigns: one policy across a list of experiments.
# ---------------------------------------------------------------------------

METRICS_HEADER = ("metric", "policy", "dataset", "eta", "value", "ci_lo", "ci_hi", "runs", "seed")


@dataclass(frozen=True)
class CampaignResult:
    """Pooled decision records for one (policy, eta) over many experiments."""

    policy: str
    eta: float
    decision: DecisionRule
    master_seed: int
    runs_per_experiment: int
    experiments: tuple[ExperimentSpec, ...]
    records: tuple[DecisionRecord, ...]

    def records_for(self, experiment_id: str) -> tuple[DecisionRecord, ...]:
        return tuple(r for r in self.records if r.experiment_id == experiment_id)

    def fpr(self, delta: float | None = None):
        return compute_fpr(self.records, self.decision.delta if delta is None else delta)

    def power(self, delta: float | None = None):
        return compute_power(self.records, self.decision.delta if delta is None else delta)

    def precision(self, delta: float | None = None):
        return compute_precision(self.records, self.decision.delta if delta is None else delta)

    def regret(self) -> tuple[float, float]:
        return mean_regret(self.records)

    def has_hypothesis(self, hypothesis: str) -> bool:
        return any(r.hypothesis == hypothesis for r in self.records)

    def metric_rows(self, dataset_label: str, per_experiment: bool = True) -> list[dict]:
        """Rows for the metrics CSV (schema :data:`METRICS_HEADER`).

        Pooled rows use ``dataset_label``; per-experiment rows append the
        experiment name as ``label:exp``.  Precision has no CI; regret gets a
        normal-approximation CI on the mean.
        """
        groups: list[tuple[str, Sequence[DecisionRecord]]] = [(dataset_label, self.records)]
        if per_experiment and len(self.experiments) > 1:
            for exp in self.experiments:
                if exp.name:  # unnamed experiments only appear in the pooled row
                    groups.append((exp.name, self.records_for(exp.name)))
        rows = []
        delta = self.decision.delta
        for label, records in groups:
            n = len(records)
            base = {
                "policy": self.policy,
                "dataset": label,
                "eta": repr(self.eta),
                "runs": n,
                "seed": self.master_seed,
            }
            if any(r.hypothesis == H0 for r in records):
                rate, (lo, hi) = compute_fpr(records, delta)
                rows.append({**base, "metric": "fpr", "value": repr(rate),
                             "ci_lo": repr(lo), "ci_hi": repr(hi)})
            h1 = [r for r in records if r.hypothesis == H1]
            if h1:
                rate, (lo, hi) = compute_power(records, delta)
                rows.append({**base, "metric": "power", "value": repr(rate),
                             "ci_lo": repr(lo), "ci_hi": repr(hi)})
                mean, sd = mean_regret(records)
                half = _Z95 * sd / math.sqrt(len(h1)) if len(h1) > 1 else 0.0
                rows.append({**base, "metric": "regret", "value": repr(mean),
                             "ci_lo": repr(mean - half), "ci_hi": repr(mean + half)})
            precision = compute_precision(records, delta)
            rows.append({**base, "metric": "precision",
                         "value": repr(precision) if precision is not None else "",
                         "ci_lo": "", "ci_hi": ""})
        return rows


def experiment_config(
    experiment: ExperimentSpec,
    policy: str,
    *,
    schedule: BatchSchedule,
    decision: DecisionRule,
    eta: float = 1.0,
    gamma: float = 0.01,
    beta: float = 0.5,
    noise_sd: float = 1.0,
    alpha_draws: int = 10_000,
    variance_mode: str = post.VARIANCE_KNOWN,
    weight_scheme: str = post.PHI_ONE,
    default_sigma_sq: float = 1.0,
    master_seed: int = 0,
) -> ExperimentConfig:
    """Build the engine config for one experiment of a campaign."""
    arms = tuple(ArmSpec(m, noise_sd, trend=experiment.trend) for m in experiment.means)
    return ExperimentConfig(
        schedule=schedule,
        sampling_rule=policy,
        decision=decision,
        arms=arms,
        gamma=gamma,
        eta=eta,
        beta=beta,
        weight_scheme=weight_scheme,
        variance_mode=variance_mode,
        default_sigma_sq=default_sigma_sq,
        alpha_draws=alpha_draws,
        master_seed=master_seed,
        experiment_id=experiment.name,
        hypothesis=experiment.hypothesis,
        true_best=experiment.true_best,
    )


def run_campaign(
    experiments: Sequence[ExperimentSpec],
    policy: str,
    *,
    schedule: BatchSchedule,
    decision: DecisionRule,
    runs: int,
    master_seed: int = 0,
    eta: float = 1.0,
    gamma: float = 0.01,
    beta: float = 0.5,
    noise_sd: float = 1.0,
    alpha_draws: int = 10_000,
    variance_mode: str = post.VARIANCE_KNOWN,
    weight_scheme: str = post.PHI_ONE,
    default_sigma_sq: float = 1.0,
    workers: int = 1,
    progress=None,
) -> CampaignResult:
    """Run ``runs`` seeded runs of ``policy`` on every experiment.

    Experiment ``j`` (1-based position) draws its runs under master seed
    ``substream_seed(master_seed, j)``, so campaigns are reproducible and
    experiments are independent.
    """
    if policy not in SAMPLING_RULES:
        raise InvalidConfigError(f"unknown policy {policy!r}")
    all_records: list[DecisionRecord] = []
    for j, experiment in enumerate(experiments, start=1):
        config = experiment_config(
            experiment, policy,
            schedule=schedule, decision=decision, eta=eta, gamma=gamma, beta=beta,
            noise_sd=noise_sd, alpha_draws=alpha_draws, variance_mode=variance_mode,
            weight_scheme=weight_scheme, default_sigma_sq=default_sigma_sq,
            master_seed=substream_seed(master_seed, j),
        )
        exp_progress = None
        if progress is not None:
            exp_progress = lambda done, total, _j=j: progress(_j, len(experiments), done, total)
        all_records.extend(run_monte_carlo(
            config, runs, workers=workers, progress=exp_progress
        ))
    return CampaignResult(
        policy=policy,
        eta=eta,
        decision=decision,
        master_seed=master_seed,
        runs_per_experiment=runs,
        experiments=tuple(experiments),
        records=tuple(all_records),
    )


# ---------------------------------------------------------------------------
# Neutral-eta calibration.
# ---------------------------------------------------------------------------

def beta_marginal_moments(k_prime: int) -> tuple[float, float]:
    """Mean and variance of Beta(1, K'-1): the flat-Dirichlet marginal."""
    if k_prime < 2:
        raise InvalidConfigError(f"k_prime must be >= 2, got {k_prime}")
    mean = 1.0 / k_prime
    var = (k_prime - 1) / (k_prime ** 2 * (k_prime + 1))
    return mean, var


@dataclass(frozen=True)
class CalibrationPoint:
    eta: float
    mean: float
    variance: float
    distance: float


@dataclass(frozen=True)
class CalibrationResult:
    k_prime: int
    eta_star: float
    curve: tuple[CalibrationPoint, ...]
    runs: int
    master_seed: int


def _calibration_chunk(
    k_prime: int,
    grid: tuple[float, ...],
    run_indices: Sequence[int],
    batches: int,
    per_arm: int,
    noise_sd: float,
    alpha_draws: int,
    master_seed: int,
) -> np.ndarray:
    """First-arm optimal probabilities, one row per run, one column per eta.

    All etas reuse the run's data and the same standard-normal draws (common
    random numbers), so the moment-distance curve is smooth in eta and fully
    determined by the master seed.  Streams mirror the engine layout:
    environment draws on (seed, run, 1), final-alpha draws on
    (seed, run, 2, B).
    """
    k = k_prime
    total = k * per_arm
    means = np.zeros(k)
    sds = np.full(k, noise_sd)
    uniform = np.full(k, 1.0 / k)
    out = np.empty((len(run_indices), len(grid)))
    for i, r in enumerate(run_indices):
        env_rng = _generator(master_seed, r, _STREAM_ENV)
        counts = np.empty((batches, k))
        ybars = np.empty((batches, k))
        for b in range(batches):
            n, ybar, _ = draw_batch_stats(means, sds, uniform, total, env_rng)
            counts[b], ybars[b] = n, ybar
        mu, tau = post.nb_mu_tau(counts, ybars, noise_sd ** 2)
        alpha_rng = _generator(master_seed, r, _STREAM_ALPHA, batches)
        z = alpha_rng.standard_normal((k, alpha_draws))
        for gi, eta in enumerate(grid):
            alpha = _argmax_fractions_from_z(z, mu, 1.0 / np.sqrt(eta * tau), alpha_rng)
            out[i, gi] = alpha[0]
    return out


def calibrate_neutral_eta(
    k_prime: int,
    eta_grid: Sequence[float] | None = None,
    runs: int = 2000,
    samples_per_arm: int = 10_000,
    *,
    batches: int = 20,
    noise_sd: float = 1.0,
    alpha_draws: int = 2000,
    master_seed: int = 0,
    workers: int = 1,
) -> CalibrationResult:
    """Grid-search the precision rescaling that flattens equivalent-best arms.

    Protocol: K = K' arms with identical means, sampled uniformly for
    ``batches`` batches totalling ``samples_per_arm`` per arm; for each eta
    the final optimal probability of arm 1 is collected across runs and its
    (mean, variance) compared with Beta(1, K'-1) by squared distance.
    """
    if eta_grid is None:
        eta_grid = [round(0.40 + 0.05 * i, 2) for i in range(17)]  # 0.40 .. 1.20
    grid = tuple(float(e) for e in eta_grid)
    if not grid:
        raise InvalidConfigError("eta grid must not be empty")
    if any(not 0.0 < e <= 2.0 for e in grid):
        raise InvalidConfigError("eta grid values must lie in (0, 2]")
    per_arm = max(samples_per_arm // batches, 1)
    indices = list(range(1, runs + 1))
    if workers <= 1:
        alpha1 = _calibration_chunk(
            k_prime, grid, indices, batches, per_arm, noise_sd, alpha_draws, master_seed
        )
    else:
        chunks = [indices[i:i + 256] for i in range(0, runs, 256)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_calibration_chunk, k_prime, grid, chunk, batches,
                            per_arm, noise_sd, alpha_draws, master_seed)
                for chunk in chunks
            ]
            alpha1 = np.vstack([f.result() for f in futures])
    target_mean, target_var = beta_marginal_moments(k_prime)
    curve = []
    for gi, eta in enumerate(grid):
        mean = float(alpha1[:, gi].mean())
        var = float(alpha1[:, gi].var())
        distance = (mean - target_mean) ** 2 + (var - target_var) ** 2
        curve.append(CalibrationPoint(eta=eta, mean=mean, variance=var, distance=distance))
    eta_star = min(curve, key=lambda p: p.distance).eta
    return CalibrationResult(
        k_prime=k_prime, eta_star=eta_star, curve=tuple(curve),
        runs=runs, master_seed=master_seed,
    )


# ---------------------------------------------------------------------------
# Bias demonstration (two batches, three arms).
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasDemoResult:
    """Studentized errors of the best arm's estimate under both schemes."""

    rule: str
    runs: int
    z_nb: np.ndarray
    z_wb: np.ndarray

    def summary(self, scheme: str) -> dict:
        z = self.z_nb if scheme == post.SCHEME_NB else self.z_wb
        mean = float(z.mean())
        sd = float(z.std(ddof=1))
        se = sd / math.sqrt(z.size)
        return {
            "scheme": scheme,
            "runs": int(z.size),
            "mean": mean,
            "sd": sd,
            "se": se,
            "ci99_lo": mean - _Z99 * se,
            "ci99_hi": mean + _Z99 * se,
        }

    def histogram(self, scheme: str, bins: int = 80,
                  value_range: tuple[float, float] = (-5.0, 5.0)):
        z = self.z_nb if scheme == post.SCHEME_NB else self.z_wb
        counts, edges = np.histogram(z, bins=bins, range=value_range)
        return counts, edges


def _bias_chunk(
    config: ExperimentConfig,
    run_indices: Sequence[int],
    true_mean: float,
    variance_mode: str,
) -> tuple[np.ndarray, np.ndarray]:
    from .engine import _RunContext, _run_single

    ctx = _RunContext(config)
    z_nb = np.empty(len(run_indices))
    z_wb = np.empty(len(run_indices))
    for i, r in enumerate(run_indices):
        _, traj = _run_single(ctx, r, keep_trajectory=True)
        history = [rec.summaries[0] for rec in traj.batches]  # arm 1
        if variance_mode == post.VARIANCE_KNOWN:
            sigma_sq_nb = sigma_sq_wb = config.arms[0].noise_sd ** 2
        else:
            sigma_sq_nb = post.estimate_sample_variance(history, post.SCHEME_NB)
            sigma_sq_wb = post.estimate_sample_variance(
                history, post.SCHEME_WB, config.weight_scheme
            )
        theta_nb = post.nb_point_estimate(history)
        tau_nb = sum(s.count for s in history) / sigma_sq_nb
        theta_wb, tau_wb = post.wb_point_estimate(history, config.weight_scheme, sigma_sq_wb)
        z_nb[i] = post.studentized_z(theta_nb, tau_nb, true_mean)
        z_wb[i] = post.studentized_z(theta_wb, tau_wb, true_mean)
    return z_nb, z_wb


def bias_demo(
    rule: str,
    runs: int = 100_000,
    batch_size: int = 1000,
    *,
    arm_means: Sequence[float] = (0.01, 0.0, 0.0),
    noise_sd: float = 1.0,
    variance_mode: str = post.VARIANCE_KNOWN,
    alpha_draws: int = 2000,
    gamma: float = 0.01,
    beta: float = 0.5,
    master_seed: int = 0,
    workers: int = 1,
) -> BiasDemoResult:
    """Two-batch study of estimator bias under an adaptive rule.

    Arms are served uniformly in batch 1 and by ``rule`` in batch 2; the
    studentized error sqrt(tau)*(theta_hat - theta*) of the best arm is
    collected under both the naive and the weighted batch statistics.  The
    naive estimate is biased downward under adaptive traffic; the weighted
    one is centred.
    """
    if rule == RULE_UNIFORM or rule not in SAMPLING_RULES:
        raise InvalidConfigError(f"rule must be one of the adaptive rules, got {rule!r}")
    means = tuple(float(m) for m in arm_means)
    best = int(np.argmax(means))
    if best != 0:
        raise InvalidConfigError("arm_means must put the best arm first")
    config = ExperimentConfig(
        schedule=BatchSchedule(kind="fixed_size", batch_size=batch_size, num_batches=2),
        sampling_rule=rule,
        decision=DecisionRule(delta=0.95),
        arms=tuple(ArmSpec(m, noise_sd) for m in means),
        gamma=gamma,
        beta=beta,
        eta=1.0,
        variance_mode=variance_mode,
        alpha_draws=alpha_draws,
        master_seed=master_seed,
    )
    indices = list(range(1, runs + 1))
    if workers <= 1:
        z_nb, z_wb = _bias_chunk(config, indices, means[0], variance_mode)
    else:
        chunks = [indices[i:i + 1024] for i in range(0, runs, 1024)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_bias_chunk, config, chunk, means[0], variance_mode)
                for chunk in chunks
            ]
            parts = [f.result() for f in futures]
        z_nb = np.concatenate([p[0] for p in parts])
        z_wb = np.concatenate([p[1] for p in parts])
    return BiasDemoResult(rule=rule, runs=runs, z_nb=z_nb, z_wb=z_wb)


# ---------------------------------------------------------------------------
# Convergence of equivalent-best optimal probabilities.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceResult:
    """Final optimal probabilities restricted to the equivalent best arms."""

    k_prime: int
    eta: float
    rule: str
    alphas: np.ndarray  # (runs, K) final vectors
    delta: float

    @property
    def marginal_mean(self) -> float:
        return float(self.alphas[:, 0].mean())

    @property
    def marginal_variance(self) -> float:
        return float(self.alphas[:, 0].var())

    @property
    def exceedance(self) -> float:
        """P(max alpha > delta): the claim rate at the stored threshold."""
        return float((self.alphas.max(axis=1) > self.delta).mean())

    def beta_target(self) -> tuple[float, float]:
        return beta_marginal_moments(self.k_prime)


def convergence_study(
    num_arms: int,
    k_prime: int,
    rule: str,
    eta: float,
    runs: int,
    batches: int = 20,
    samples_per_arm_per_batch: int = 500,
    *,
    gap: float = 0.25,
    noise_sd: float = 1.0,
    decision: DecisionRule | None = None,
    alpha_draws: int = 2000,
    gamma: float = 0.01,
    beta: float = 0.5,
    master_seed: int = 0,
    workers: int = 1,
) -> ConvergenceResult:
    """Distribution of final optimal probabilities with K' equivalent bests.

    The first ``k_prime`` arms share the top mean; any remaining arms sit
    ``gap`` below it.  Runs discard everything but the final alpha vector.
    """
    if not 2 <= k_prime <= num_arms:
        raise InvalidConfigError(f"k_prime must be in [2, K], got {k_prime}")
    if decision is None:
        decision = DecisionRule.from_fpr(0.10, k_prime)
    means = tuple([gap] * k_prime + [0.0] * (num_arms - k_prime))
    experiment = ExperimentSpec(
        means=means, k_prime=k_prime, hypothesis=H0, name=f"conv:K{num_arms}:K'{k_prime}",
    )
    schedule = BatchSchedule(
        kind="fixed_size",
        batch_size=num_arms * samples_per_arm_per_batch,
        num_batches=batches,
    )
    config = experiment_config(
        experiment, rule,
        schedule=schedule, decision=decision, eta=eta, gamma=gamma, beta=beta,
        noise_sd=noise_sd, alpha_draws=alpha_draws, master_seed=master_seed,
    )
    records = run_monte_carlo(config, runs, workers=workers)
    alphas = np.array([
        r.final_alpha if r.final_alpha is not None else [math.nan] * num_arms
        for r in records
    ])
    return ConvergenceResult(k_prime=k_prime, eta=eta, rule=rule, alphas=alphas,
                             delta=decision.delta)
