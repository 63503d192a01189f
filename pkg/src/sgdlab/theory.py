"""Closed-form bounds on SGD's seed variability and their combinatorial backbone.

The seed-to-seed variability of k passes of SGD with an L-Lipschitz loss and
learning rate eta is at most 2kLN*eta (every one of the N steps per pass may
mismatch between two traversal orders), versus the 2kL*eta/B sensitivity bound
for a single replaced example. Treating the per-epoch mismatch count through
the number of fixed points of a random permutation (rencontres numbers, whose
law approaches Poisson(1)) gives the bound's mean 2kL*eta(N-1), variance
(2L*eta)^2 k, and a Chebyshev tail showing the bound concentrates far above
the sensitivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .rng import philox_stream

_MC_TAG = 105

EXACT_RENCONTRES_MAX_N = 20


class TheoryError(ValueError):
    """Raised for inputs outside a bound's stated domain."""


@dataclass(frozen=True)
class BoundInputs:
    k: float  # passes over the data
    lipschitz: float
    learning_rate: float
    n_rows: int
    batch_size: int = 1

    def __post_init__(self) -> None:
        if self.k < 0 or self.lipschitz <= 0 or self.learning_rate <= 0:
            raise TheoryError("k must be >= 0 and L, eta positive")
        if self.n_rows < 1 or self.batch_size < 1:
            raise TheoryError("N and B must be >= 1")


def variability_upper_bound(inputs: BoundInputs) -> float:
    """Worst-case seed variability 2 k L N eta (every step mismatched)."""
    return 2.0 * inputs.k * inputs.lipschitz * inputs.n_rows * inputs.learning_rate


def expected_variability_bound(inputs: BoundInputs) -> tuple[float, float]:
    """(mean, variance) of the per-epoch-mismatch variability bound.

    With X_i fixed points per epoch and E[X_i] = Var[X_i] = 1, the bound
    sum_i 2 L eta (N - X_i) has mean 2 k L eta (N - 1) and variance
    (2 L eta)^2 k; the variance does not depend on N.
    """
    two_l_eta = 2.0 * inputs.lipschitz * inputs.learning_rate
    return (
        inputs.k * two_l_eta * (inputs.n_rows - 1),
        two_l_eta * two_l_eta * inputs.k,
    )


@dataclass(frozen=True)
class ChebyshevTail:
    """P[|bound - mean| >= threshold] <= probability, threshold = k L eta (N-2)."""

    probability: float
    clamped: bool  # true when the raw bound exceeded 1 (e.g. N < 3) and was capped
    threshold: float | None


def chebyshev_tail(
    k: int, n_rows: int, lipschitz: float | None = None, learning_rate: float | None = None
) -> ChebyshevTail:
    """Tail bound 4 / (k (N-2)^2) on the variability bound's deviation.

    Equals variance / threshold^2 for the threshold k L eta (N - 2), for any
    positive L and eta (they cancel). The threshold is reported when L and
    eta are supplied. For N < 3 the raw expression is >= 1 and the
    probability is capped at 1 with ``clamped`` set.
    """
    if k < 1:
        raise TheoryError("k must be >= 1")
    if n_rows < 1:
        raise TheoryError("N must be >= 1")
    raw = math.inf if n_rows == 2 else 4.0 / (k * (n_rows - 2) ** 2)
    threshold = None
    if lipschitz is not None and learning_rate is not None:
        threshold = k * lipschitz * learning_rate * (n_rows - 2)
    return ChebyshevTail(probability=min(raw, 1.0), clamped=raw > 1.0, threshold=threshold)


def _subfactorials(up_to: int) -> list[int]:
    # !n = (n-1) (!(n-1) + !(n-2)), with !0 = 1, !1 = 0.
    sub = [1, 0]
    for n in range(2, up_to + 1):
        sub.append((n - 1) * (sub[n - 1] + sub[n - 2]))
    return sub[: up_to + 1]


def fixed_point_distribution(n: int) -> list[Fraction]:
    """Exact law of the number of fixed points of a uniform permutation of n.

    P(X = j) = C(n, j) !(n - j) / n! in exact rational arithmetic, so the
    probabilities sum to 1 exactly. Supported for n up to 20; beyond that use
    the Poisson(1) approximation (``poisson_pmf``).
    """
    if not (1 <= n <= EXACT_RENCONTRES_MAX_N):
        raise TheoryError(f"exact rencontres supported for 1 <= n <= {EXACT_RENCONTRES_MAX_N}")
    sub = _subfactorials(n)
    total = math.factorial(n)
    return [Fraction(math.comb(n, j) * sub[n - j], total) for j in range(n + 1)]


def poisson_pmf(j: int, rate: float = 1.0) -> float:
    """Poisson(rate) mass at j, the large-N limit of the fixed-point law."""
    if j < 0:
        raise TheoryError("j must be >= 0")
    return math.exp(-rate) * rate**j / math.factorial(j)


@dataclass(frozen=True)
class FixedPointSample:
    mean: float
    variance: float
    confidence_radius: float  # three standard errors of the mean
    trials: int


def monte_carlo_fixed_points(n: int, trials: int, seed: int) -> FixedPointSample:
    """Sample fixed-point counts of uniform permutations via seeded shuffling."""
    if trials < 100:
        raise TheoryError("need at least 100 trials")
    if n < 1:
        raise TheoryError("N must be >= 1")
    gen = philox_stream(seed, _MC_TAG)
    counts = [int((gen.permutation(n) == range(n)).sum()) for _ in range(trials)]
    mean = sum(counts) / trials
    variance = sum((c - mean) ** 2 for c in counts) / (trials - 1)
    return FixedPointSample(
        mean=mean,
        variance=variance,
        confidence_radius=3.0 * math.sqrt(variance / trials),
        trials=trials,
    )


def theory_report(inputs: BoundInputs) -> dict[str, float | None]:
    """All closed forms for one (k, L, eta, N, B), for the bounds report.

    The variability-to-sensitivity ratios expose how much larger the seed
    effect's bound is than the replace-one bound (N B in the batch form,
    N at B = 1), rather than reducing the comparison to a boolean.
    """
    sensitivity = (
        2.0 * inputs.k * inputs.lipschitz * inputs.learning_rate / inputs.batch_size
    )
    variability = variability_upper_bound(inputs)
    mean, variance = expected_variability_bound(inputs)
    k_whole = max(1, math.ceil(inputs.k))
    tail = chebyshev_tail(k_whole, inputs.n_rows, inputs.lipschitz, inputs.learning_rate)
    return {
        "k": inputs.k,
        "lipschitz": inputs.lipschitz,
        "learning_rate": inputs.learning_rate,
        "n_rows": float(inputs.n_rows),
        "batch_size": float(inputs.batch_size),
        "sensitivity_bound": sensitivity,
        "variability_bound": variability,
        "variability_to_sensitivity_ratio": (
            variability / sensitivity if sensitivity > 0 else None
        ),
        "expected_variability": mean,
        "variability_variance": variance,
        "chebyshev_tail_probability": tail.probability,
        "chebyshev_threshold": tail.threshold,
    }
