"""Normality and paired-comparison tests used by the weight analyses.

The Shapiro-Wilk implementation follows the standard AS R94 approximation
(Royston 1995): Blom-style expected normal order statistics with polynomial
corrections to the two extreme weights, and a p-value from a normal
approximation of a transform of W, with separate parameterisations for
n = 3, 4 <= n <= 11, and 12 <= n <= 5000. Sample sizes are capped at 5000,
the range the approximation is published for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np
from scipy.special import stdtr

from .train import ExperimentRecord

_STD_NORMAL = NormalDist()

# AS R94 polynomial coefficients, ascending powers.
_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)

SHAPIRO_MIN_N = 3
SHAPIRO_MAX_N = 5000


class StatsError(ValueError):
    """Raised for samples outside a test's domain."""


class DegenerateDifferences(StatsError):
    """Paired differences with zero variance admit no t statistic."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    sample_size: int


def _poly(coeffs: tuple[float, ...], x: float) -> float:
    total = 0.0
    for c in reversed(coeffs):
        total = total * x + c
    return total


def _shapiro_weights(n: int) -> np.ndarray:
    """Antisymmetric weight vector a for sample size n (sum of squares 1)."""
    a = np.zeros(n)
    n2 = n // 2
    if n == 3:
        a[0] = math.sqrt(0.5)
    else:
        an25 = n + 0.25
        m = np.array([_STD_NORMAL.inv_cdf((i + 0.625) / an25) for i in range(n2)])
        summ2 = 2.0 * float(m @ m)
        ssumm2 = math.sqrt(summ2)
        rsn = 1.0 / math.sqrt(n)
        a1 = _poly(_C1, rsn) - m[0] / ssumm2
        if n > 5:
            i1 = 2
            a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
            fac = math.sqrt(
                (summ2 - 2.0 * m[0] ** 2 - 2.0 * m[1] ** 2) / (1.0 - 2.0 * a1**2 - 2.0 * a2**2)
            )
            a[1] = a2
        else:
            i1 = 1
            fac = math.sqrt((summ2 - 2.0 * m[0] ** 2) / (1.0 - 2.0 * a1**2))
        a[0] = a1
        a[i1:n2] = m[i1:] / -fac
    a[n - n2 :] = a[n2 - 1 :: -1]
    a[:n2] *= -1.0
    return a


def shapiro_wilk(sample: list[float] | np.ndarray) -> TestResult:
    """W statistic and approximate p-value of the Shapiro-Wilk normality test."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.shape[0]
    if not (SHAPIRO_MIN_N <= n <= SHAPIRO_MAX_N):
        raise StatsError(f"sample size must lie in [{SHAPIRO_MIN_N}, {SHAPIRO_MAX_N}], got {n}")
    if x[0] == x[-1]:
        raise StatsError("sample has zero variance")

    a = _shapiro_weights(n)
    centered = x - x.mean()
    w = float((a @ x) ** 2 / (centered @ centered))
    w = min(w, 1.0)

    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        p = min(max(p, 0.0), 1.0)
        return TestResult(statistic=w, p_value=p, sample_size=n)
    if w == 1.0:
        # Perfectly linear normal plot; the log transforms degenerate from the
        # normal side, so report no evidence against normality.
        return TestResult(statistic=w, p_value=1.0, sample_size=n)
    if n <= 11:
        g = _poly(_G, n)
        if g <= math.log(1.0 - w):
            # Below the transform's W floor: maximal evidence against normality.
            return TestResult(statistic=w, p_value=0.0, sample_size=n)
        y = -math.log(g - math.log(1.0 - w))
        mean = _poly(_C3, n)
        sd = math.exp(_poly(_C4, n))
    else:
        ln_n = math.log(n)
        y = math.log(1.0 - w)
        mean = _poly(_C5, ln_n)
        sd = math.exp(_poly(_C6, ln_n))
    z = (y - mean) / sd
    p = 0.5 * math.erfc(z / math.sqrt(2.0))  # upper tail
    return TestResult(statistic=w, p_value=min(max(p, 0.0), 1.0), sample_size=n)


def paired_t_test(a: list[float] | np.ndarray, b: list[float] | np.ndarray) -> TestResult:
    """Two-sided paired t-test on the differences a - b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise StatsError("paired samples must be 1-D and of equal length")
    n = a.shape[0]
    if n < 2:
        raise StatsError("need at least 2 pairs")
    d = a - b
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise DegenerateDifferences("paired differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    p = 2.0 * float(stdtr(n - 1, -abs(t)))
    return TestResult(statistic=t, p_value=min(p, 1.0), sample_size=n)


def bonferroni_threshold(alpha: float, m: int) -> float:
    """Per-test threshold alpha / m controlling the familywise error rate."""
    if not (0.0 < alpha < 1.0):
        raise StatsError("alpha must lie in (0, 1)")
    if m < 1:
        raise StatsError("m must be >= 1")
    return alpha / m


@dataclass(frozen=True)
class SweepEntry:
    dataset_id: str
    coordinate: int
    statistic: float
    p_value: float


@dataclass(frozen=True)
class NormalitySweep:
    """Per-coordinate Shapiro-Wilk results across the seeds of each instance."""

    entries: tuple[SweepEntry, ...]
    untestable: int
    records_used: int
    alpha: float
    hypothesis_count: int  # records_used * parameter count, the Bonferroni m
    corrected_threshold: float
    rejected_raw: int
    rejected_corrected: int


def normality_sweep(records: list[ExperimentRecord], alpha: float = 0.05) -> NormalitySweep:
    """Test every final-weight coordinate of every instance for normality.

    For each dataset instance the across-seed sample of each coordinate is
    tested; coordinates whose sample is constant or too small are counted as
    untestable rather than failing the sweep. The multiple-testing correction
    uses m = (records used) x (parameter count).
    """
    if len({r.init_mode for r in records}) > 1:
        raise StatsError("normality sweep expects records of a single init mode; filter first")
    by_dataset: dict[str, list[ExperimentRecord]] = {}
    for r in records:
        by_dataset.setdefault(r.dataset_id, []).append(r)
    if not by_dataset:
        raise StatsError("no records given")

    entries: list[SweepEntry] = []
    untestable = 0
    records_used = 0
    p_count = records[0].final_weights.size
    for dataset_id, group in sorted(by_dataset.items()):
        group = sorted(group, key=lambda r: r.seed)
        records_used += len(group)
        stack = np.stack([r.final_weights.values for r in group])
        if not (SHAPIRO_MIN_N <= stack.shape[0] <= SHAPIRO_MAX_N):
            untestable += stack.shape[1]
            continue
        for j in range(stack.shape[1]):
            sample = stack[:, j]
            if sample.min() == sample.max():
                untestable += 1
                continue
            result = shapiro_wilk(sample)
            entries.append(
                SweepEntry(
                    dataset_id=dataset_id,
                    coordinate=j,
                    statistic=result.statistic,
                    p_value=result.p_value,
                )
            )
    if not entries:
        raise StatsError("no testable coordinates in the grid")
    m = records_used * p_count
    corrected = bonferroni_threshold(alpha, m)
    return NormalitySweep(
        entries=tuple(entries),
        untestable=untestable,
        records_used=records_used,
        alpha=alpha,
        hypothesis_count=m,
        corrected_threshold=corrected,
        rejected_raw=sum(1 for e in entries if e.p_value < alpha),
        rejected_corrected=sum(1 for e in entries if e.p_value < corrected),
    )
