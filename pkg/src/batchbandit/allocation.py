"""Optimal-probability estimation, traffic targets, and winner decisions.

``alpha`` throughout is the vector of posterior optimal probabilities: the
probability, under the joint (independent) posterior, that each arm has the
largest mean.  It is estimated by Monte Carlo and drives both the adaptive
traffic targets (TS / top-two TS) and the final winner decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, UninformedPosteriorError
from .posterior import GaussianPosterior, PosteriorSet


@dataclass(frozen=True)
class OptimalProbs:
    """Monte-Carlo estimate of per-arm optimal probabilities.

    Vectors produced by :func:`estimate_optimal_probs` sum to exactly 1.0
    (argmax counts over a common draw total; any sub-ulp rounding residue is
    folded into the largest component).  Hand-built vectors are accepted with
    up to 1e-9 of rounding slack.
    """

    alpha: np.ndarray
    draw_count: int
    rng_stream_id: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.alpha, dtype=float)
        arr.flags.writeable = False
        object.__setattr__(self, "alpha", arr)
        if self.draw_count < 1:
            raise InvalidInputError(f"draw_count must be >= 1, got {self.draw_count}")
        if arr.ndim != 1 or arr.size < 2:
            raise InvalidInputError("alpha must be a vector over >= 2 arms")
        if np.any(arr < 0) or np.any(arr > 1) or abs(arr.sum() - 1.0) > 1e-9:
            raise InvalidInputError("alpha must be a probability vector summing to 1")


def _fractions_from_theta(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-arm argmax fractions of a (K, draws) matrix of posterior draws.

    Exact floating-point ties (probability ~0 for continuous posteriors) are
    broken uniformly at random.  The returned vector sums to exactly 1.0.
    """
    k, draws = theta.shape
    winners = theta.argmax(axis=0)
    top = theta[winners, np.arange(draws)]
    tied = theta == top
    if tied.sum() > draws:  # at least one column has a genuine tie
        cols = np.flatnonzero(tied.sum(axis=0) > 1)
        for c in cols:
            winners[c] = rng.choice(np.flatnonzero(tied[:, c]))
    counts = np.bincount(winners, minlength=k)
    return _force_unit_sum(counts / draws)


def _force_unit_sum(alpha: np.ndarray) -> np.ndarray:
    """Nudge one component by ulps until ``alpha.sum() == 1.0`` exactly.

    ``counts/draws`` is exactly 1 as a rational but its float sum can land an
    ulp off.  Walking the smallest nonzero component in single-ulp steps
    sweeps the rounded sum in quanta no coarser than the sum's own ulp, so it
    cannot step over 1.0; the perturbation is below 1e-15 and statistically
    irrelevant.  Falls back to the other components, largest last.
    """
    if alpha.sum() == 1.0:
        return alpha
    order = [j for j in np.argsort(alpha) if alpha[j] > 0]
    for j in order:
        original = alpha[j]
        for _ in range(128):
            residual = 1.0 - alpha.sum()
            if residual == 0.0:
                return alpha
            alpha[j] = np.nextafter(alpha[j], math.copysign(math.inf, residual))
        alpha[j] = original
    raise RuntimeError("could not normalize argmax fractions to an exact unit sum")


def mc_argmax_fractions(
    mus: np.ndarray,
    sds: np.ndarray,
    draws: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Fraction of posterior draws on which each arm attains the maximum.

    Draws are laid out arm-major: one ``standard_normal((K, draws))`` call,
    so the result for a given generator state is independent of any internal
    chunking.
    """
    mus = np.asarray(mus, dtype=float)
    sds = np.asarray(sds, dtype=float)
    z = rng.standard_normal((mus.size, draws))
    z *= sds[:, None]
    z += mus[:, None]
    return _fractions_from_theta(z, rng)


def _argmax_fractions_from_z(
    z: np.ndarray,
    mus: np.ndarray,
    sds: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Like :func:`mc_argmax_fractions`, but reusing pre-drawn standard
    normals ``z`` of shape (K, draws); ``z`` is left untouched so callers can
    evaluate several posterior scalings against common random numbers."""
    mus = np.asarray(mus, dtype=float)
    sds = np.asarray(sds, dtype=float)
    return _fractions_from_theta(mus[:, None] + sds[:, None] * z, rng)


def estimate_optimal_probs(
    posteriors: PosteriorSet | Sequence[GaussianPosterior],
    eta: float,
    draws: int,
    rng: np.random.Generator,
    rng_stream_id: str = "",
) -> OptimalProbs:
    """Monte-Carlo optimal probabilities from reshaped posteriors.

    Each draw samples theta_k ~ N(mu_k, 1/(eta*tau_k)) independently per arm
    and records the argmax.  Every arm must be informed (tau > 0); callers
    holding uninformed arms should fall back to uniform allocation.
    """
    if isinstance(posteriors, PosteriorSet):
        posteriors = posteriors.posteriors
    if eta <= 0 or not math.isfinite(eta):
        raise InvalidInputError(f"eta must be positive and finite, got {eta}")
    if draws < 1:
        raise InvalidInputError(f"draws must be >= 1, got {draws}")
    mus = np.array([p.mu for p in posteriors], dtype=float)
    taus = np.array([p.tau for p in posteriors], dtype=float)
    if np.any(taus <= 0):
        bad = [i + 1 for i in np.flatnonzero(taus <= 0)]
        raise UninformedPosteriorError(
            f"arms {bad} are uninformed; use uniform allocation until they have data"
        )
    sds = 1.0 / np.sqrt(eta * taus)
    alpha = mc_argmax_fractions(mus, sds, draws, rng)
    return OptimalProbs(alpha=alpha, draw_count=draws, rng_stream_id=rng_stream_id)


def _alpha_vector(alpha) -> np.ndarray:
    if isinstance(alpha, OptimalProbs):
        return np.asarray(alpha.alpha, dtype=float)
    return np.asarray(alpha, dtype=float)


def ts_target(alpha) -> np.ndarray:
    """Thompson-sampling target: traffic proportional to alpha itself."""
    return _alpha_vector(alpha).copy()


def ttts_target(alpha, beta: float = 0.5) -> np.ndarray:
    """Top-two Thompson-sampling target.

    e_k = alpha_k * (beta + (1 - beta) * sum_{i != k} alpha_i / (1 - alpha_i))

    The output sums to 1 by algebraic identity and is componentwise >= 0.
    beta = 1 reduces to the TS target.  A degenerate alpha_k == 1 returns the
    unit vector on arm k (the renormalized limit of the formula).
    """
    a = _alpha_vector(alpha)
    if not np.isfinite(a).all():
        raise InvalidInputError("alpha must be finite")
    if not 0.0 < beta <= 1.0:
        raise InvalidInputError(f"beta must be in (0, 1], got {beta}")
    if a.max() >= 1.0:
        out = np.zeros_like(a)
        out[a.argmax()] = 1.0
        return out
    ratios = a / (1.0 - a)
    other = ratios.sum() - ratios
    return a * (beta + (1.0 - beta) * other)


@dataclass(frozen=True)
class Allocation:
    """Rollout traffic shares after the minimum-traffic floor."""

    e: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.e, dtype=float)
        arr.flags.writeable = False
        object.__setattr__(self, "e", arr)
        k = arr.size
        if not 0.0 <= self.gamma * k < 1.0:
            raise InvalidConfigError(f"gamma*K must be in [0, 1), got {self.gamma * k}")
        if np.any(arr < self.gamma - 1e-12):
            raise InvalidInputError("allocation below the traffic floor")
        if abs(arr.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"allocation must sum to 1, got {arr.sum()!r}")


def apply_floor(target, gamma: float) -> Allocation:
    """Affine floor e = gamma + (1 - gamma*K) * target.

    Guarantees every arm at least ``gamma`` traffic while preserving the
    component ranking of ``target``.
    """
    t = _alpha_vector(target)
    k = t.size
    if not math.isfinite(gamma) or gamma < 0 or gamma * k >= 1.0:
        raise InvalidConfigError(f"need 0 <= gamma*K < 1, got gamma={gamma}, K={k}")
    return Allocation(e=gamma + (1.0 - gamma * k) * t, gamma=gamma)


def threshold_for_fpr(rho: float, k_prime: int) -> float:
    """Decision threshold delta = 1 - (rho / K')^(1/(K'-1)).

    Under the flat-Dirichlet convergence of the optimal probabilities of K'
    equivalent best arms, claiming a winner when max alpha > delta has
    type-I error rho.
    """
    if not 0.0 < rho < 1.0:
        raise InvalidConfigError(f"rho must be in (0, 1), got {rho}")
    if k_prime < 2:
        raise InvalidConfigError(f"k_prime must be >= 2, got {k_prime}")
    return 1.0 - (rho / k_prime) ** (1.0 / (k_prime - 1))


def fpr_for_threshold(delta: float, k_prime: int) -> float:
    """Inverse of :func:`threshold_for_fpr`: rho = K' * (1 - delta)^(K'-1)."""
    if not 0.0 < delta < 1.0:
        raise InvalidConfigError(f"delta must be in (0, 1), got {delta}")
    if k_prime < 2:
        raise InvalidConfigError(f"k_prime must be >= 2, got {k_prime}")
    return k_prime * (1.0 - delta) ** (k_prime - 1)


@dataclass(frozen=True)
class DecisionRule:
    """Winner-decision threshold, optionally derived from a target FPR."""

    delta: float
    rho: float | None = None
    assumed_k_prime: int = 2

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise InvalidConfigError(f"delta must be in (0, 1), got {self.delta}")
        if self.assumed_k_prime < 2:
            raise InvalidConfigError(f"assumed_k_prime must be >= 2, got {self.assumed_k_prime}")
        if self.rho is not None:
            derived = threshold_for_fpr(self.rho, self.assumed_k_prime)
            if not math.isclose(derived, self.delta, rel_tol=0, abs_tol=1e-9):
                raise InvalidConfigError(
                    f"delta {self.delta} inconsistent with rho={self.rho}, "
                    f"K'={self.assumed_k_prime} (expected {derived})"
                )

    @classmethod
    def from_fpr(cls, rho: float, k_prime: int) -> "DecisionRule":
        return cls(delta=threshold_for_fpr(rho, k_prime), rho=rho, assumed_k_prime=k_prime)

    @classmethod
    def from_threshold(cls, delta: float, k_prime: int = 2) -> "DecisionRule":
        return cls(delta=delta, rho=None, assumed_k_prime=k_prime)


def decide_winner(alpha, rule: DecisionRule) -> int | None:
    """1-based index of the claimed winner, or None if no arm clears delta.

    The winner is the arm with the largest optimal probability, claimed only
    when it strictly exceeds the threshold (a max exactly equal to delta is
    no claim).  Ties on the max go to the lowest index.
    """
    a = _alpha_vector(alpha)
    best = int(a.argmax())
    if a[best] > rule.delta:
        return best + 1
    return None
