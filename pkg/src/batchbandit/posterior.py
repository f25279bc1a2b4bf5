"""Batch statistics and Gaussian posterior updating.

Two updating schemes are provided for a stream of per-arm batch summaries:

* naive batch ("nb"): batches are pooled by sample size, which is the
  textbook conjugate-Gaussian update.  Under outcome-adaptive traffic the
  resulting point estimate is biased for the leading arm.
* weighted batch ("wb"): batches are combined with weights proportional to
  ``phi * sqrt(n)`` where ``phi`` does not depend on the realized per-arm
  sample sizes.  This restores a martingale CLT and removes the bias.

Both schemes expose closed-form cumulative formulas over the batch history;
the weighted scheme must be recomputed from the full history because its
weights change as batches arrive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    InsufficientDataError,
    InvalidInputError,
    UninformedPosteriorError,
)

# Weight choices for the weighted-batch scheme: constant weights, or weights
# proportional to the square root of the batch's total traffic.
PHI_ONE = "phi_one"
PHI_SQRT_T = "phi_sqrt_T"
WEIGHT_SCHEMES = (PHI_ONE, PHI_SQRT_T)

SCHEME_NB = "nb"
SCHEME_WB = "wb"
STATISTIC_SCHEMES = (SCHEME_NB, SCHEME_WB)

VARIANCE_KNOWN = "known"
VARIANCE_ESTIMATED = "estimated"
VARIANCE_MODES = (VARIANCE_KNOWN, VARIANCE_ESTIMATED)

# Floor applied to estimated reward variances so a degenerate batch (all
# rewards identical) cannot produce an infinite-precision posterior.
VARIANCE_FLOOR = 1e-12


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidInputError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class BatchSummary:
    """Sufficient statistics for one arm in one batch.

    ``batch_index`` and ``arm_index`` are 1-based identifiers.  ``count`` is
    the number of samples the arm received, ``mean`` their average reward,
    ``reward_sum`` their sum, ``sum_sq`` the sum of squared rewards,
    ``batch_total`` the batch's traffic across all arms, and ``served_prob``
    the traffic share the arm was served with.
    """

    batch_index: int
    arm_index: int
    count: int
    mean: float
    reward_sum: float
    sum_sq: float
    batch_total: int
    served_prob: float

    def __post_init__(self) -> None:
        if self.batch_index < 1:
            raise InvalidInputError(f"batch_index must be >= 1, got {self.batch_index}")
        if self.arm_index < 1:
            raise InvalidInputError(f"arm_index must be >= 1, got {self.arm_index}")
        if self.count < 0:
            raise InvalidInputError(f"count must be >= 0, got {self.count}")
        if self.batch_total < 1:
            raise InvalidInputError(f"batch_total must be >= 1, got {self.batch_total}")
        if self.count > self.batch_total:
            raise InvalidInputError(
                f"count {self.count} exceeds batch_total {self.batch_total}"
            )
        for name in ("mean", "reward_sum", "sum_sq", "served_prob"):
            _require_finite(name, getattr(self, name))
        if not 0.0 <= self.served_prob <= 1.0:
            raise InvalidInputError(f"served_prob must be in [0, 1], got {self.served_prob}")
        if self.count > 0:
            if not math.isclose(self.mean, self.reward_sum / self.count,
                                rel_tol=1e-9, abs_tol=1e-9):
                raise InvalidInputError(
                    f"mean {self.mean} != reward_sum/count {self.reward_sum / self.count}"
                )
            # Cauchy-Schwarz on the raw rewards; small fp slack.
            if self.sum_sq < self.count * self.mean ** 2 - 1e-6 * max(1.0, abs(self.sum_sq)):
                raise InvalidInputError(
                    f"sum_sq {self.sum_sq} below count*mean^2 {self.count * self.mean ** 2}"
                )
        if self.sum_sq < 0:
            raise InvalidInputError(f"sum_sq must be >= 0, got {self.sum_sq}")

    @classmethod
    def from_rewards(
        cls,
        batch_index: int,
        arm_index: int,
        rewards: Sequence[float],
        batch_total: int,
        served_prob: float,
    ) -> "BatchSummary":
        """Summarize raw rewards for one arm of one batch."""
        arr = np.asarray(rewards, dtype=float)
        if arr.size and not np.isfinite(arr).all():
            raise InvalidInputError("rewards must be finite")
        n = int(arr.size)
        total = float(arr.sum())
        return cls(
            batch_index=batch_index,
            arm_index=arm_index,
            count=n,
            mean=total / n if n else 0.0,
            reward_sum=total,
            sum_sq=float((arr * arr).sum()),
            batch_total=batch_total,
            served_prob=served_prob,
        )


@dataclass(frozen=True)
class GaussianPosterior:
    """Normal posterior N(mu, 1/tau) for one arm's mean reward.

    ``tau == 0`` encodes the improper flat prior: no data has arrived and
    ``mu`` carries no information.
    """

    mu: float = 0.0
    tau: float = 0.0

    def __post_init__(self) -> None:
        _require_finite("mu", self.mu)
        _require_finite("tau", self.tau)
        if self.tau < 0:
            raise InvalidInputError(f"tau must be >= 0, got {self.tau}")

    @property
    def is_uninformed(self) -> bool:
        return self.tau == 0.0

    @property
    def variance(self) -> float:
        if self.tau == 0.0:
            raise UninformedPosteriorError("variance undefined for tau == 0")
        return 1.0 / self.tau

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


IMPROPER_PRIOR = GaussianPosterior(0.0, 0.0)


# ---------------------------------------------------------------------------
# Array kernels.  The engine calls these directly on per-run history arrays;
# the BatchSummary-based operations below are thin wrappers around them.
# ---------------------------------------------------------------------------

def nb_mu_tau(
    counts: np.ndarray,
    means: np.ndarray,
    sigma_sq,
    mu0=0.0,
    tau0=0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative naive-batch posterior over a (batches, arms) history.

    tau = tau0 + sum(n) / sigma_sq
    mu  = (mu0*tau0 + sum(n * ybar) / sigma_sq) / tau

    Rows with count 0 contribute nothing.  Arms whose tau comes out 0 keep
    mu = mu0 (uninformed state).
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    means = np.atleast_2d(np.asarray(means, dtype=float))
    n_tot = counts.sum(axis=0)
    tau = tau0 + n_tot / np.asarray(sigma_sq, dtype=float)
    weighted = (counts * means).sum(axis=0) / np.asarray(sigma_sq, dtype=float)
    # placeholder denominators keep the masked-out divisions well defined
    mu = np.where(tau > 0.0, (mu0 * tau0 + weighted) / np.where(tau > 0, tau, 1.0), mu0)
    return mu, tau


def wb_weights(
    counts: np.ndarray,
    batch_totals: np.ndarray,
    weight_scheme: str = PHI_ONE,
) -> np.ndarray:
    """Normalized batch weights w = phi*sqrt(n) / sum(phi*sqrt(n)) per arm.

    Batches where an arm has count 0 get weight 0 (and are likewise excluded
    from the phi^2 sum in :func:`wb_mu_tau`).
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    a = _phi(counts, batch_totals, weight_scheme) * np.sqrt(counts)
    denom = a.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, a / np.where(denom > 0, denom, 1.0), 0.0)


def _phi(counts: np.ndarray, batch_totals, weight_scheme: str) -> np.ndarray:
    if weight_scheme == PHI_ONE:
        return np.ones_like(counts)
    if weight_scheme == PHI_SQRT_T:
        totals = np.asarray(batch_totals, dtype=float).reshape(-1, 1)
        return np.broadcast_to(np.sqrt(totals), counts.shape)
    raise InvalidInputError(f"unknown weight scheme {weight_scheme!r}")


def wb_mu_tau(
    counts: np.ndarray,
    means: np.ndarray,
    batch_totals: np.ndarray,
    sigma_sq,
    weight_scheme: str = PHI_ONE,
    mu0=0.0,
    tau0=0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative weighted-batch posterior over a (batches, arms) history.

    With a = phi*sqrt(n) over batches where the arm has data:

    theta_wb = sum(a * ybar) / sum(a)
    tau_data = (sum a)^2 / (sigma_sq * sum(phi^2))
    tau      = tau0 + tau_data
    mu       = (mu0*tau0 + tau_data*theta_wb) / tau
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if weight_scheme == PHI_ONE:
        a = np.sqrt(counts)
        phi_sq = (counts > 0).sum(axis=0).astype(float)
    else:
        phi = _phi(counts, batch_totals, weight_scheme)
        a = phi * np.sqrt(counts)
        phi_sq = (np.square(phi) * (counts > 0)).sum(axis=0)
    big_a = a.sum(axis=0)
    # placeholder denominators keep the masked-out divisions well defined
    theta = np.where(big_a > 0, (a * means).sum(axis=0) / np.where(big_a > 0, big_a, 1.0), 0.0)
    tau_data = np.where(
        phi_sq > 0,
        big_a * big_a / (np.asarray(sigma_sq, dtype=float) * np.where(phi_sq > 0, phi_sq, 1.0)),
        0.0,
    )
    tau = tau0 + tau_data
    mu = np.where(tau > 0, (mu0 * tau0 + tau_data * theta) / np.where(tau > 0, tau, 1.0), mu0)
    return mu, tau


def sample_variance_from_arrays(
    counts: np.ndarray,
    sum_sqs: np.ndarray,
    estimates: np.ndarray,
    floor: float = VARIANCE_FLOOR,
) -> np.ndarray:
    """Plug-in reward variance sum(SS)/sum(n) - estimate^2, floored at ``floor``."""
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    sum_sqs = np.atleast_2d(np.asarray(sum_sqs, dtype=float))
    n = counts.sum(axis=0)
    raw = np.where(n > 0, sum_sqs.sum(axis=0) / np.where(n > 0, n, 1.0), 0.0)
    return np.maximum(raw - np.square(np.asarray(estimates, dtype=float)), floor)


# ---------------------------------------------------------------------------
# Single-arm operations on BatchSummary histories.
# ---------------------------------------------------------------------------

def _history_arrays(history: Iterable[BatchSummary]) -> tuple[np.ndarray, ...]:
    rows = list(history)
    counts = np.array([[s.count] for s in rows], dtype=float)
    means = np.array([[s.mean] for s in rows], dtype=float)
    sum_sqs = np.array([[s.sum_sq] for s in rows], dtype=float)
    totals = np.array([s.batch_total for s in rows], dtype=float)
    return counts, means, sum_sqs, totals


def _check_sigma_sq(sigma_sq: float) -> float:
    sigma_sq = _require_finite("sigma_sq", sigma_sq)
    if sigma_sq <= 0:
        raise InvalidInputError(f"sigma_sq must be > 0, got {sigma_sq}")
    return sigma_sq


def nb_update(
    prior: GaussianPosterior,
    history: Iterable[BatchSummary],
    sigma_sq: float,
) -> GaussianPosterior:
    """Naive-batch posterior for one arm from its batch history.

    Precision adds up as tau0 + sum(n)/sigma_sq; the mean is the
    precision-weighted combination of the prior mean and the pooled batch
    means.  Zero-count batches contribute nothing.  If no data has arrived
    and the prior is improper the result stays uninformed (tau == 0).
    """
    sigma_sq = _check_sigma_sq(sigma_sq)
    counts, means, _, _ = _history_arrays(history)
    if counts.size == 0:
        return prior
    mu, tau = nb_mu_tau(counts, means, sigma_sq, mu0=prior.mu, tau0=prior.tau)
    return GaussianPosterior(float(mu[0]), float(tau[0]))


def wb_update(
    prior: GaussianPosterior,
    history: Iterable[BatchSummary],
    sigma_sq: float,
    weight_scheme: str = PHI_ONE,
) -> GaussianPosterior:
    """Weighted-batch posterior for one arm from its batch history.

    Recomputed from the full history (the weights change as batches arrive).
    Batches where the arm has count 0 drop out of both the weight numerator
    and the phi^2 denominator.  All-zero counts return the prior state.
    """
    sigma_sq = _check_sigma_sq(sigma_sq)
    counts, means, _, totals = _history_arrays(history)
    if counts.size == 0 or counts.sum() == 0:
        return prior
    mu, tau = wb_mu_tau(counts, means, totals, sigma_sq, weight_scheme,
                        mu0=prior.mu, tau0=prior.tau)
    return GaussianPosterior(float(mu[0]), float(tau[0]))


def nb_point_estimate(history: Iterable[BatchSummary]) -> float:
    """Pooled mean sum(n*ybar)/sum(n) over the history."""
    counts, means, _, _ = _history_arrays(history)
    n = counts.sum()
    if n <= 0:
        raise UninformedPosteriorError("no samples in history")
    return float((counts * means).sum() / n)


def wb_point_estimate(
    history: Iterable[BatchSummary],
    weight_scheme: str = PHI_ONE,
    sigma_sq: float = 1.0,
) -> tuple[float, float]:
    """Weighted-batch estimate sum(w*ybar) and its precision.

    The precision 1 / sum(w^2 * sigma^2 / n) collapses to
    (sum a)^2 / (sigma^2 * sum phi^2) with a = phi*sqrt(n).
    """
    sigma_sq = _check_sigma_sq(sigma_sq)
    counts, means, _, totals = _history_arrays(history)
    if counts.size == 0 or counts.sum() == 0:
        raise UninformedPosteriorError("no samples in history")
    mu, tau = wb_mu_tau(counts, means, totals, sigma_sq, weight_scheme)
    return float(mu[0]), float(tau[0])


def estimate_sample_variance(
    history: Iterable[BatchSummary],
    estimator: str = SCHEME_NB,
    weight_scheme: str = PHI_ONE,
    floor: float = VARIANCE_FLOOR,
) -> float:
    """Reward variance estimate sum(SS)/sum(n) - theta_hat^2.

    ``estimator`` picks which point estimate is squared ("nb" or "wb").
    Degenerate data is floored at ``floor``.  Note the plug-in form is used
    as-is under adaptive sampling; it may inherit some of the naive
    estimator's finite-sample bias.
    """
    rows = list(history)
    counts, _, sum_sqs, _ = _history_arrays(rows)
    if counts.sum() < 2:
        raise InsufficientDataError("variance estimation needs at least 2 samples")
    if estimator == SCHEME_NB:
        theta = nb_point_estimate(rows)
    elif estimator == SCHEME_WB:
        theta, _ = wb_point_estimate(rows, weight_scheme)
    else:
        raise InvalidInputError(f"unknown estimator {estimator!r}")
    out = sample_variance_from_arrays(counts, sum_sqs, np.array([theta]), floor)
    return float(out[0])


def reshape_posterior(p: GaussianPosterior, eta: float) -> GaussianPosterior:
    """Scale posterior precision by eta (mu unchanged).

    eta < 1 widens the posterior (more exploration), eta > 1 sharpens it.
    """
    eta = _require_finite("eta", eta)
    if eta <= 0:
        raise InvalidInputError(f"eta must be > 0, got {eta}")
    if p.tau == 0:
        raise UninformedPosteriorError("cannot reshape an uninformed posterior")
    return replace(p, tau=eta * p.tau)


def studentized_z(estimate: float, tau: float, true_mean: float) -> float:
    """sqrt(tau) * (estimate - true_mean): the estimate in standard-error units."""
    estimate = _require_finite("estimate", estimate)
    true_mean = _require_finite("true_mean", true_mean)
    tau = _require_finite("tau", tau)
    if tau <= 0:
        raise InvalidInputError(f"tau must be > 0, got {tau}")
    return math.sqrt(tau) * (estimate - true_mean)


# ---------------------------------------------------------------------------
# PosteriorSet: per-arm posteriors plus the retained batch history.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorSet:
    """Per-arm posteriors with the batch history needed to recompute them.

    Immutable: :meth:`with_batch` returns a new set.  All arms must receive a
    summary for every batch (count 0 is fine), so histories stay aligned.
    """

    histories: tuple[tuple[BatchSummary, ...], ...]
    statistic_scheme: str = SCHEME_NB
    weight_scheme: str = PHI_ONE
    variance_mode: str = VARIANCE_KNOWN
    known_sigma_sq: tuple[float, ...] | float = 1.0
    default_sigma_sq: float = 1.0
    priors: tuple[GaussianPosterior, ...] = ()
    posteriors: tuple[GaussianPosterior, ...] = field(init=False, default=())

    def __post_init__(self) -> None:
        if self.statistic_scheme not in STATISTIC_SCHEMES:
            raise InvalidInputError(f"unknown statistic scheme {self.statistic_scheme!r}")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise InvalidInputError(f"unknown weight scheme {self.weight_scheme!r}")
        if self.variance_mode not in VARIANCE_MODES:
            raise InvalidInputError(f"unknown variance mode {self.variance_mode!r}")
        k = len(self.histories)
        if not self.priors:
            object.__setattr__(self, "priors", tuple(IMPROPER_PRIOR for _ in range(k)))
        if len(self.priors) != k:
            raise InvalidInputError("one prior per arm required")
        lengths = {len(h) for h in self.histories}
        if len(lengths) > 1:
            raise InvalidInputError("arm histories must cover the same batches")
        object.__setattr__(self, "posteriors", self._recompute())

    @classmethod
    def empty(cls, num_arms: int, **kwargs) -> "PosteriorSet":
        return cls(histories=tuple(() for _ in range(num_arms)), **kwargs)

    @property
    def num_arms(self) -> int:
        return len(self.histories)

    @property
    def num_batches(self) -> int:
        return len(self.histories[0]) if self.histories else 0

    def with_batch(self, summaries: Sequence[BatchSummary]) -> "PosteriorSet":
        """Return a new set extended by one batch (one summary per arm)."""
        if len(summaries) != self.num_arms:
            raise InvalidInputError(
                f"expected {self.num_arms} summaries, got {len(summaries)}"
            )
        ordered = sorted(summaries, key=lambda s: s.arm_index)
        if [s.arm_index for s in ordered] != list(range(1, self.num_arms + 1)):
            raise InvalidInputError("need exactly one summary per arm index 1..K")
        if len({s.batch_index for s in ordered}) != 1:
            raise InvalidInputError("summaries of one batch must share a batch_index")
        if len({s.batch_total for s in ordered}) != 1:
            raise InvalidInputError("summaries of one batch must share a batch_total")
        if sum(s.count for s in ordered) != ordered[0].batch_total:
            raise InvalidInputError("per-arm counts of a batch must sum to batch_total")
        histories = tuple(h + (s,) for h, s in zip(self.histories, ordered))
        return replace(self, histories=histories)

    def sigma_sq(self, arm: int) -> float:
        """Reward variance for 0-based ``arm`` under the configured mode."""
        if self.variance_mode == VARIANCE_KNOWN:
            if isinstance(self.known_sigma_sq, (int, float)):
                return float(self.known_sigma_sq)
            return float(self.known_sigma_sq[arm])
        history = self.histories[arm]
        if sum(s.count for s in history) < 2:
            return self.default_sigma_sq
        return estimate_sample_variance(history, self.statistic_scheme, self.weight_scheme)

    def _recompute(self) -> tuple[GaussianPosterior, ...]:
        out = []
        for arm, history in enumerate(self.histories):
            sigma_sq = self.sigma_sq(arm)
            if self.statistic_scheme == SCHEME_NB:
                out.append(nb_update(self.priors[arm], history, sigma_sq))
            else:
                out.append(wb_update(self.priors[arm], history, sigma_sq, self.weight_scheme))
        return tuple(out)
