"""Reward generation: synthetic Gaussian arms and replay of logged rewards.

Synthetic batches are drawn through their sufficient statistics: arm counts
come from one multinomial draw over the allocation, the batch mean of an arm
with n samples is N(true_mean, sigma^2/n), and the sum of squares adds an
independent sigma^2 * chi^2(n-1) term to n*mean^2.  This is distributionally
identical to drawing the n rewards one by one and summarizing them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .allocation import Allocation
from .errors import InvalidConfigError, InvalidInputError, ReplayCoverageError
from .posterior import PHI_ONE, PHI_SQRT_T, BatchSummary

TREND_STATIONARY = "stationary"
TREND_COSINE_DECAY = "cosine_decay"
TRENDS = (TREND_STATIONARY, TREND_COSINE_DECAY)

FIXED_SIZE = "fixed_size"
POISSON_DURATION = "poisson_duration"

# The cosine trend ramps down over a fixed 20-batch horizon.
_TREND_PERIOD = 20


@dataclass(frozen=True)
class ArmSpec:
    """Ground truth for one arm: base mean, reward noise, and mean trend."""

    base_mean: float
    noise_sd: float = 1.0
    trend: str = TREND_STATIONARY

    def __post_init__(self) -> None:
        if not math.isfinite(self.base_mean):
            raise InvalidInputError(f"base_mean must be finite, got {self.base_mean}")
        if not (math.isfinite(self.noise_sd) and self.noise_sd > 0):
            raise InvalidInputError(f"noise_sd must be > 0, got {self.noise_sd}")
        if self.trend not in TRENDS:
            raise InvalidInputError(f"unknown trend {self.trend!r}")


@dataclass(frozen=True)
class BatchSchedule:
    """Batch sizing: fixed T_b = lambda, or stochastic T_b ~ Poisson(lambda)."""

    kind: str = FIXED_SIZE
    batch_size: int = 500
    num_batches: int = 20

    def __post_init__(self) -> None:
        if self.kind not in (FIXED_SIZE, POISSON_DURATION):
            raise InvalidConfigError(f"unknown schedule kind {self.kind!r}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.num_batches < 1:
            raise InvalidConfigError(f"num_batches must be >= 1, got {self.num_batches}")

    def draw_total(self, rng: np.random.Generator) -> int:
        if self.kind == FIXED_SIZE:
            return self.batch_size
        return max(int(rng.poisson(self.batch_size)), 1)


@dataclass(frozen=True)
class EnvironmentSpec:
    """A set of arms plus the batch schedule they are sampled under."""

    arms: tuple[ArmSpec, ...]
    schedule: BatchSchedule

    def __post_init__(self) -> None:
        if len(self.arms) < 2:
            raise InvalidConfigError("need at least 2 arms")
        if self.schedule.batch_size < len(self.arms):
            raise InvalidConfigError(
                "batch_size must be >= number of arms so the traffic floor is meaningful"
            )

    @property
    def num_arms(self) -> int:
        return len(self.arms)

    def means_at_batch(self, b: int) -> np.ndarray:
        return np.array([mean_at_batch(a, b) for a in self.arms])

    def noise_sds(self) -> np.ndarray:
        return np.array([a.noise_sd for a in self.arms])


def mean_at_batch(spec: ArmSpec, b: int) -> float:
    """True mean of the arm at 1-based batch ``b``.

    The cosine-decay trend subtracts 0.5*(1 - cos(pi*(b-1)/20)), a monotone
    drop over 20 batches; the gap between any two arms stays constant.
    """
    if b < 1:
        raise InvalidInputError(f"batch index must be >= 1, got {b}")
    if spec.trend == TREND_STATIONARY:
        return spec.base_mean
    return spec.base_mean + 0.5 * (math.cos(math.pi / _TREND_PERIOD * (b - 1)) - 1.0)


def draw_batch_stats(
    means: np.ndarray,
    noise_sds: np.ndarray,
    e: np.ndarray,
    total: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-arm (count, mean, sum_sq) for one batch via sufficient statistics.

    Consumes the generator in a fixed order: multinomial counts, then K
    standard normals for the means, then K gammas for the within-arm scatter
    (arms with n <= 1 discard theirs; a gamma with shape 0 is exactly 0).
    """
    k = means.size
    counts = rng.multinomial(total, e)
    z = rng.standard_normal(k)
    safe = np.maximum(counts, 1)
    ybar = np.where(counts > 0, means + z * noise_sds / np.sqrt(safe), 0.0)
    scatter = rng.gamma(np.maximum(counts - 1, 0) / 2.0, 2.0 * noise_sds ** 2)
    sum_sq = np.where(counts > 0, scatter + counts * ybar ** 2, 0.0)
    return counts, ybar, sum_sq


def _summaries_from_arrays(
    b: int,
    counts: np.ndarray,
    ybar: np.ndarray,
    sum_sq: np.ndarray,
    total: int,
    e: np.ndarray,
) -> list[BatchSummary]:
    return [
        BatchSummary(
            batch_index=b,
            arm_index=arm + 1,
            count=int(counts[arm]),
            mean=float(ybar[arm]),
            reward_sum=float(counts[arm] * ybar[arm]),
            sum_sq=float(sum_sq[arm]),
            batch_total=total,
            served_prob=float(e[arm]),
        )
        for arm in range(counts.size)
    ]


def draw_batch(
    env: EnvironmentSpec,
    allocation: Allocation,
    b: int,
    rng: np.random.Generator,
) -> list[BatchSummary]:
    """Simulate one batch: assign traffic by ``allocation``, draw Gaussian rewards."""
    total = env.schedule.draw_total(rng)
    e = np.asarray(allocation.e, dtype=float)
    if e.size != env.num_arms:
        raise InvalidInputError("allocation length does not match arm count")
    counts, ybar, sum_sq = draw_batch_stats(
        env.means_at_batch(b), env.noise_sds(), e, total, rng
    )
    return _summaries_from_arrays(b, counts, ybar, sum_sq, total, e)


# ---------------------------------------------------------------------------
# Replay of logged experiments.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplayLog:
    """Logged rewards keyed by (1-based batch, 1-based arm).

    ``pools`` holds raw reward values per cell; ``summaries`` holds
    (count, mean, sd) per cell for logs that only retain aggregates.  Exactly
    one of the two is populated.  Replay resamples pools with replacement;
    summary cells draw Gaussian rewards with the cell's mean and sd, which is
    an approximation of the original distribution.
    """

    num_batches: int
    num_arms: int
    pools: dict[tuple[int, int], np.ndarray] | None = None
    summaries: dict[tuple[int, int], tuple[int, float, float]] | None = None

    def __post_init__(self) -> None:
        if (self.pools is None) == (self.summaries is None):
            raise InvalidConfigError("exactly one of pools/summaries must be given")
        if self.num_batches < 1 or self.num_arms < 2:
            raise InvalidConfigError("replay log needs >= 1 batch and >= 2 arms")

    def cell(self, b: int, arm: int):
        cells = self.pools if self.pools is not None else self.summaries
        try:
            return cells[(b, arm)]
        except KeyError:
            raise ReplayCoverageError(
                f"replay log has no rewards for batch {b}, arm {arm}"
            ) from None

    def arm_sigma_sq(self) -> np.ndarray:
        """Pooled per-arm reward variance across all logged cells.

        Used as the plug-in noise scale when replaying in known-variance
        mode, since the original experiment's noise level is not recorded.
        """
        out = np.empty(self.num_arms)
        for arm in range(1, self.num_arms + 1):
            if self.pools is not None:
                values = np.concatenate(
                    [self.pools[key] for key in self.pools if key[1] == arm]
                )
                out[arm - 1] = max(float(values.var()), 1e-12)
            else:
                n = s = ss = 0.0
                for (b, a), (cn, cm, csd) in self.summaries.items():
                    if a != arm:
                        continue
                    n += cn
                    s += cn * cm
                    ss += cn * (csd ** 2 + cm ** 2)
                mean = s / n
                out[arm - 1] = max(ss / n - mean ** 2, 1e-12)
        return out


def load_replay_log(path: str | Path) -> ReplayLog:
    """Read a replay log CSV.

    Raw mode has header ``batch,arm,value`` with one row per logged sample;
    summary mode has header ``batch,arm,count,mean,sd`` with one row per
    (batch, arm) cell.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InvalidInputError(f"{path}: empty replay log")
        header = [h.strip().lower() for h in header]
        rows = list(reader)
    if header == ["batch", "arm", "value"]:
        cells: dict[tuple[int, int], list[float]] = {}
        for row in rows:
            b, arm, value = int(row[0]), int(row[1]), float(row[2])
            cells.setdefault((b, arm), []).append(value)
        pools = {key: np.array(vals) for key, vals in cells.items()}
        num_batches = max(k[0] for k in pools)
        num_arms = max(k[1] for k in pools)
        return ReplayLog(num_batches=num_batches, num_arms=num_arms, pools=pools)
    if header == ["batch", "arm", "count", "mean", "sd"]:
        summaries = {
            (int(r[0]), int(r[1])): (int(r[2]), float(r[3]), float(r[4])) for r in rows
        }
        num_batches = max(k[0] for k in summaries)
        num_arms = max(k[1] for k in summaries)
        return ReplayLog(num_batches=num_batches, num_arms=num_arms, summaries=summaries)
    raise InvalidInputError(
        f"{path}: unrecognized replay header {header!r}; expected "
        "batch,arm,value or batch,arm,count,mean,sd"
    )


def write_replay_log(path: str | Path, pools: dict[tuple[int, int], np.ndarray]) -> None:
    """Write a raw-mode replay log CSV from per-(batch, arm) reward pools."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["batch", "arm", "value"])
        for (b, arm) in sorted(pools):
            for value in pools[(b, arm)]:
                writer.writerow([b, arm, repr(float(value))])


def replay_batch_stats(
    log: ReplayLog,
    e: np.ndarray,
    b: int,
    total: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-arm (count, mean, sum_sq) for one replayed batch.

    Counts come from one multinomial draw; each arm's rewards are then
    bootstrap-resampled from its (batch, arm) pool, in arm order.
    """
    k = log.num_arms
    counts = rng.multinomial(total, e)
    ybar = np.zeros(k)
    sum_sq = np.zeros(k)
    for arm in range(1, k + 1):
        n = int(counts[arm - 1])
        if n == 0:
            log.cell(b, arm)  # still require coverage for the requested batch
            continue
        cell = log.cell(b, arm)
        if log.pools is not None:
            idx = rng.integers(0, len(cell), size=n)
            values = cell[idx]
        else:
            cn, cm, csd = cell
            values = cm + csd * rng.standard_normal(n)
        ybar[arm - 1] = values.mean()
        sum_sq[arm - 1] = float((values * values).sum())
    return counts, ybar, sum_sq


def replay_batch(
    log: ReplayLog,
    allocation: Allocation,
    b: int,
    rng: np.random.Generator,
    total: int | None = None,
) -> list[BatchSummary]:
    """Replay one batch against the log (with-replacement resampling)."""
    e = np.asarray(allocation.e, dtype=float)
    if e.size != log.num_arms:
        raise InvalidInputError("allocation length does not match replay log arm count")
    if total is None:
        if log.pools is not None:
            total = sum(len(log.cell(b, arm)) for arm in range(1, log.num_arms + 1))
        else:
            total = sum(log.cell(b, arm)[0] for arm in range(1, log.num_arms + 1))
    counts, ybar, sum_sq = replay_batch_stats(log, e, b, total, rng)
    return _summaries_from_arrays(b, counts, ybar, sum_sq, total, e)


def check_variance_convergence(
    schedule: BatchSchedule,
    weight_scheme: str = PHI_ONE,
    num_batches: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Realized / expected value of sum_b sum_i phi_b^2 / T_b for one schedule draw.

    The inner sum over a batch's samples collapses to phi_b^2, so the
    numerator is B for phi = 1 and sum(T_b) for phi = sqrt(T_b).  Weights are
    admissible when this ratio converges to 1; it is identically 1 for
    phi = 1 under any schedule and for phi = sqrt(T) under fixed-size
    batches, and concentrates like Poisson(B*lambda)/(B*lambda) otherwise.
    """
    b = num_batches if num_batches is not None else schedule.num_batches
    if weight_scheme == PHI_ONE:
        return 1.0
    if weight_scheme != PHI_SQRT_T:
        raise InvalidInputError(f"unknown weight scheme {weight_scheme!r}")
    if schedule.kind == FIXED_SIZE:
        return 1.0
    if rng is None:
        rng = np.random.default_rng()
    totals = rng.poisson(schedule.batch_size, size=b)
    return float(totals.sum() / (b * schedule.batch_size))
