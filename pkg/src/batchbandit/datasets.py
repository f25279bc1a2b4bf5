"""Built-in synthetic datasets and the generator they were produced with.

Datasets A and B each hold ten 10-arm experiments: five with a unique best
arm (H1) and five with K' equivalent best arms (H0; K'=2 for A, K'=3 for B).
A' and B' reuse the same arm means but make them decay over time with the
cosine trend (the gaps between arms stay constant, so the best arm is
unchanged).  Arm means are stored largest-first, so the true best arm of an
H1 experiment is arm 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .environment import TREND_COSINE_DECAY, TREND_STATIONARY, TRENDS
from .errors import InvalidConfigError, InvalidInputError

H0 = "H0"
H1 = "H1"
HYPOTHESES = (H0, H1)


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: true arm means plus its hypothesis labelling."""

    means: tuple[float, ...]
    k_prime: int
    hypothesis: str
    trend: str = TREND_STATIONARY
    name: str = ""

    def __post_init__(self) -> None:
        if self.hypothesis not in HYPOTHESES:
            raise InvalidConfigError(f"hypothesis must be H0 or H1, got {self.hypothesis!r}")
        if self.trend not in TRENDS:
            raise InvalidConfigError(f"unknown trend {self.trend!r}")
        if not 2 <= self.k_prime <= len(self.means):
            raise InvalidConfigError(f"k_prime must be in [2, K], got {self.k_prime}")
        best = max(self.means)
        ties = sum(1 for m in self.means if m == best)
        if self.hypothesis == H0 and ties != self.k_prime:
            raise InvalidConfigError(
                f"H0 experiment must have exactly {self.k_prime} arms at the max, found {ties}"
            )
        if self.hypothesis == H1 and ties != 1:
            raise InvalidConfigError("H1 experiment must have a unique best arm")

    @property
    def num_arms(self) -> int:
        return len(self.means)

    @property
    def true_best(self) -> int | None:
        """1-based index of the unique best arm (H1 only)."""
        if self.hypothesis != H1:
            return None
        return int(np.argmax(self.means)) + 1


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    experiments: tuple[ExperimentSpec, ...]

    def filtered(self, hypothesis: str | None) -> tuple[ExperimentSpec, ...]:
        if hypothesis is None:
            return self.experiments
        return tuple(e for e in self.experiments if e.hypothesis == hypothesis)


_DATASET_A_H1 = (
    (0.872, 0.812, 0.433, 0.16, -0.125, -0.264, -0.306, -0.381, -0.536, -1.151),
    (0.572, 0.451, 0.45, 0.291, 0.251, -0.061, -0.134, -0.342, -0.468, -0.55),
    (1.05, 0.846, 0.83, 0.371, 0.095, 0.025, -0.096, -0.318, -0.374, -0.444),
    (0.626, 0.566, 0.466, 0.443, 0.256, 0.244, 0.143, -0.038, -0.149, -0.377),
    (0.414, 0.381, 0.205, 0.115, 0.099, 0.093, 0.06, -0.1, -0.111, -0.153),
)

_DATASET_A_H0 = (
    (0.731, 0.731, 0.567, 0.021, -0.086, -0.161, -0.192, -0.439, -0.55, -1.03),
    (0.265, 0.265, 0.117, -0.006, -0.198, -0.336, -0.344, -0.346, -0.423, -0.559),
    (0.419, 0.419, 0.309, 0.293, 0.15, 0.06, -0.104, -0.175, -0.176, -0.571),
    (1.093, 1.093, 0.76, 0.438, 0.158, 0.08, -0.252, -0.698, -0.722, -1.011),
    (0.599, 0.599, 0.565, 0.212, 0.189, 0.093, 0.061, -0.188, -0.319, -0.335),
)

_DATASET_B_H1 = (
    (0.82, 0.251, -0.028, -0.208, -0.421, -0.455, -0.529, -0.623, -0.897, -1.068),
    (0.128, 0.005, -0.078, -0.118, -0.169, -0.319, -0.374, -0.439, -0.494, -0.594),
    (0.866, 0.734, 0.386, 0.271, 0.251, 0.0, -0.157, -0.168, -0.422, -0.934),
    (0.639, 0.254, 0.217, 0.163, 0.108, -0.02, -0.066, -0.21, -0.317, -0.929),
    (0.792, 0.348, 0.033, -0.039, -0.046, -0.095, -0.191, -0.549, -1.017, -1.33),
)

_DATASET_B_H0 = (
    (1.146, 1.146, 1.146, 0.588, 0.276, 0.27, 0.021, -0.01, -0.298, -0.559),
    (1.116, 1.116, 1.116, 0.68, 0.185, 0.056, -0.077, -0.135, -0.711, -1.217),
    (0.5, 0.5, 0.5, 0.306, 0.044, 0.024, -0.037, -0.188, -0.191, -0.415),
    (0.421, 0.421, 0.421, 0.368, 0.262, 0.023, -0.327, -0.339, -0.72, -1.02),
    (0.684, 0.684, 0.684, 0.624, 0.609, 0.412, 0.175, -0.202, -0.231, -0.692),
)


def _build(name: str, h1_rows, h0_rows, k_prime: int, trend: str) -> DatasetSpec:
    experiments = []
    for i, means in enumerate(h1_rows, start=1):
        experiments.append(ExperimentSpec(
            means=means, k_prime=k_prime, hypothesis=H1, trend=trend, name=f"{name}:{i}"
        ))
    for i, means in enumerate(h0_rows, start=len(h1_rows) + 1):
        experiments.append(ExperimentSpec(
            means=means, k_prime=k_prime, hypothesis=H0, trend=trend, name=f"{name}:{i}"
        ))
    return DatasetSpec(name=name, experiments=tuple(experiments))


_BUILTINS = {
    "A": _build("A", _DATASET_A_H1, _DATASET_A_H0, 2, TREND_STATIONARY),
    "A'": _build("A'", _DATASET_A_H1, _DATASET_A_H0, 2, TREND_COSINE_DECAY),
    "B": _build("B", _DATASET_B_H1, _DATASET_B_H0, 3, TREND_STATIONARY),
    "B'": _build("B'", _DATASET_B_H1, _DATASET_B_H0, 3, TREND_COSINE_DECAY),
}

_ALIASES = {
    "A": "A", "A'": "A'", "A′": "A'", "APRIME": "A'", "A_PRIME": "A'",
    "B": "B", "B'": "B'", "B′": "B'", "BPRIME": "B'", "B_PRIME": "B'",
}


def dataset_names() -> tuple[str, ...]:
    return tuple(_BUILTINS)


def builtin_dataset(name: str) -> DatasetSpec:
    """Return a built-in dataset by name (A, A', B, B')."""
    key = _ALIASES.get(str(name).strip().upper().replace("′", "'"))
    if key is None:
        raise InvalidConfigError(
            f"unknown dataset {name!r}; known: {', '.join(_BUILTINS)}"
        )
    return _BUILTINS[key]


def generate_experiment(
    num_arms: int,
    k_prime: int,
    hypothesis: str,
    rng: np.random.Generator,
    scale: float = 0.5,
    scale_is_variance: bool = False,
    trend: str = TREND_STATIONARY,
    name: str = "",
) -> ExperimentSpec:
    """Draw a fresh experiment the way the built-ins were constructed.

    Arm means are sampled from a centred normal (``scale`` is its standard
    deviation, or its variance when ``scale_is_variance``) and sorted in
    decreasing order.  Under H0 the top ``k_prime`` means are all set to the
    sampled maximum; under H1 exact ties for the maximum are resampled.
    """
    if not 2 <= k_prime <= num_arms:
        raise InvalidConfigError(f"k_prime must be in [2, K], got {k_prime}")
    if hypothesis not in HYPOTHESES:
        raise InvalidConfigError(f"hypothesis must be H0 or H1, got {hypothesis!r}")
    sd = np.sqrt(scale) if scale_is_variance else scale
    if not sd > 0:
        raise InvalidInputError(f"scale must be positive, got {scale}")
    while True:
        means = np.sort(rng.normal(0.0, sd, size=num_arms))[::-1]
        if hypothesis == H0:
            means[1:k_prime] = means[0]
            break
        if means[0] > means[1]:  # ties have probability ~0; resample if hit
            break
    return ExperimentSpec(
        means=tuple(float(m) for m in means),
        k_prime=k_prime,
        hypothesis=hypothesis,
        trend=trend,
        name=name,
    )


# ---------------------------------------------------------------------------
# JSON import/export.  repr-based float round-tripping keeps means bit-exact.
# ---------------------------------------------------------------------------

def dataset_to_dict(ds: DatasetSpec) -> dict:
    return {
        "name": ds.name,
        "experiments": [
            {
                "means": list(e.means),
                "k_prime": e.k_prime,
                "hypothesis": e.hypothesis,
                "trend": e.trend,
            }
            for e in ds.experiments
        ],
    }


def dataset_from_dict(data: dict) -> DatasetSpec:
    try:
        name = data["name"]
        experiments = tuple(
            ExperimentSpec(
                means=tuple(float(m) for m in exp["means"]),
                k_prime=int(exp["k_prime"]),
                hypothesis=exp["hypothesis"],
                trend=exp.get("trend", TREND_STATIONARY),
                name=exp.get("name", f"{name}:{i}"),
            )
            for i, exp in enumerate(data["experiments"], start=1)
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed dataset JSON: {exc}") from exc
    return DatasetSpec(name=name, experiments=experiments)


def save_dataset(ds: DatasetSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds), indent=2) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> DatasetSpec:
    return dataset_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def with_trend(ds: DatasetSpec, trend: str) -> DatasetSpec:
    experiments = tuple(replace(e, trend=trend) for e in ds.experiments)
    return DatasetSpec(name=ds.name, experiments=experiments)
