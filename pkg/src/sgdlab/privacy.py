"""Gaussian-mechanism calibration and intrinsic-noise-aware output perturbation.

A model released with Gaussian output perturbation needs noise of standard
deviation sigma_target = c * sensitivity / epsilon. When SGD itself already
contributes intrinsic noise sigma_i, only the difference needs to be added:
since independent Gaussian noises add in variance, sampling the extra noise
with sigma_augment = sqrt(sigma_target^2 - sigma_i^2) reaches the same total.
The resulting guarantee is conditional on the Gaussian-mechanism view of SGD;
outputs carry that assumption explicitly and do not assert unconditional
differential privacy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DatasetInstance
from .model import ModelSpec, WeightVector
from .stats import DegenerateDifferences, TestResult, paired_t_test
from .train import evaluate

# Additive guard from the calibration recipe: c = sqrt(2 ln(1.25/delta)) + GUARD
# keeps c^2 strictly above the 2 ln(1.25/delta) requirement.
NOISE_MULTIPLIER_GUARD = 1e-5

GAUSSIAN_ASSUMPTION_NOTE = (
    "conditional on modelling seeded SGD as a Gaussian mechanism; "
    "not an unconditional differential-privacy guarantee"
)


class PrivacyError(ValueError):
    """Raised for parameters outside the mechanism's domain."""


def gaussian_noise_multiplier(delta: float) -> float:
    """c = sqrt(2 ln(1.25/delta)) + 1e-5, valid for delta in (0, 1)."""
    if not (0.0 < delta < 1.0):
        raise PrivacyError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(2.0 * math.log(1.25 / delta)) + NOISE_MULTIPLIER_GUARD


@dataclass(frozen=True)
class PrivacyParams:
    epsilon_target: float
    delta: float
    sensitivity: float

    def __post_init__(self) -> None:
        if self.epsilon_target <= 0:
            raise PrivacyError("epsilon_target must be positive")
        if not (0.0 < self.delta < 1.0):
            raise PrivacyError(f"delta must lie in (0, 1), got {self.delta}")
        if self.sensitivity < 0:
            raise PrivacyError("sensitivity must be >= 0")


def default_delta(n_rows: int) -> float:
    """The 1/N^2 convention for delta, from the training-set size."""
    if n_rows < 2:
        raise PrivacyError("need at least 2 rows for the 1/N^2 convention")
    return 1.0 / (n_rows * n_rows)


@dataclass(frozen=True)
class NoiseDecision:
    """How much noise to add on release, given the intrinsic noise present."""

    sigma_target: float
    sigma_i: float
    sigma_augment: float
    clipped: bool  # intrinsic noise already meets or exceeds the target


def sigma_target(params: PrivacyParams) -> float:
    """Required total noise scale c * sensitivity / epsilon."""
    return gaussian_noise_multiplier(params.delta) * params.sensitivity / params.epsilon_target


def sigma_augment(sigma_target_value: float, sigma_i: float) -> NoiseDecision:
    """Noise still to be added so intrinsic plus added reaches the target."""
    if sigma_target_value < 0 or sigma_i < 0:
        raise PrivacyError("noise scales must be >= 0")
    if sigma_i >= sigma_target_value:
        return NoiseDecision(
            sigma_target=sigma_target_value, sigma_i=sigma_i, sigma_augment=0.0, clipped=True
        )
    return NoiseDecision(
        sigma_target=sigma_target_value,
        sigma_i=sigma_i,
        sigma_augment=math.sqrt(sigma_target_value**2 - sigma_i**2),
        clipped=False,
    )


def privatize(w: WeightVector, sigma: float, noise_stream: np.random.Generator) -> WeightVector:
    """Add isotropic zero-mean Gaussian noise of scale sigma to every coordinate."""
    if sigma < 0:
        raise PrivacyError("sigma must be >= 0")
    if sigma == 0.0:
        return w
    noise = noise_stream.standard_normal(w.size) * sigma
    return WeightVector(values=w.values + noise, layout=w.layout)


@dataclass(frozen=True)
class UtilityCell:
    mean: float
    stddev: float


@dataclass(frozen=True)
class UtilityRow:
    """Accuracy comparison for one (sensitivity kind, epsilon) setting."""

    sensitivity_kind: str
    sensitivity: float
    epsilon: float
    sigma_target: float
    sigma_augment: float
    noiseless: UtilityCell
    deterministic: UtilityCell  # full sigma_target added
    randomized: UtilityCell  # sigma_augment added
    mean_improvement: float
    t_test: TestResult | None  # None when the paired differences are degenerate
    significant: bool
    percent_of_gap: float | None  # None when the noiseless-vs-deterministic gap is <= 0


@dataclass(frozen=True)
class UtilityTable:
    rows: tuple[UtilityRow, ...]
    per_model: tuple[tuple[str, str, float, str, float], ...]
    # (model_id, sensitivity_kind, epsilon, variant, accuracy)
    significance_threshold: float
    assumption: str = GAUSSIAN_ASSUMPTION_NOTE


def compare_utilities(
    models: list[tuple[str, WeightVector]],
    spec: ModelSpec,
    test_set: DatasetInstance,
    sensitivities: dict[str, float],
    sigma_i: float,
    epsilons: list[float],
    delta: float,
    noise_seed_stream: np.random.Generator,
    significance_threshold: float = 1e-6,
) -> UtilityTable:
    """Paired accuracy comparison of noiseless, full-noise, and reduced-noise release.

    Each model draws ONE standard normal vector, reused (rescaled) across all
    sensitivity kinds, epsilons, and variants, so per-model differences
    isolate the noise scale: the reduced-noise weights are always at most as
    far from the noiseless weights as the full-noise ones. Significance is a
    paired t-test between the two noisy variants across models.
    """
    if len(models) < 2:
        raise PrivacyError("need at least 2 models for a paired comparison")
    if sigma_i < 0:
        raise PrivacyError("sigma_i must be >= 0")
    if not epsilons:
        raise PrivacyError("need at least one epsilon")

    noise_vectors = [noise_seed_stream.standard_normal(w.size) for _, w in models]
    noiseless_acc = np.array([evaluate(spec, w, test_set)[1] for _, w in models])

    rows: list[UtilityRow] = []
    per_model: list[tuple[str, str, float, str, float]] = []
    for kind, sensitivity in sorted(sensitivities.items()):
        for epsilon in epsilons:
            target = sigma_target(PrivacyParams(epsilon, delta, sensitivity))
            decision = sigma_augment(target, sigma_i)
            acc_d = np.empty(len(models))
            acc_r = np.empty(len(models))
            for m, ((model_id, w), z) in enumerate(zip(models, noise_vectors)):
                w_d = WeightVector(values=w.values + target * z, layout=w.layout)
                w_r = WeightVector(values=w.values + decision.sigma_augment * z, layout=w.layout)
                acc_d[m] = evaluate(spec, w_d, test_set)[1]
                acc_r[m] = evaluate(spec, w_r, test_set)[1]
                per_model.append((model_id, kind, epsilon, "noiseless", float(noiseless_acc[m])))
                per_model.append((model_id, kind, epsilon, "sgd_d", float(acc_d[m])))
                per_model.append((model_id, kind, epsilon, "sgd_r", float(acc_r[m])))
            try:
                t_result: TestResult | None = paired_t_test(list(acc_r), list(acc_d))
            except DegenerateDifferences:
                t_result = None
            gap = float(noiseless_acc.mean() - acc_d.mean())
            improvement = float(acc_r.mean() - acc_d.mean())
            rows.append(
                UtilityRow(
                    sensitivity_kind=kind,
                    sensitivity=sensitivity,
                    epsilon=epsilon,
                    sigma_target=target,
                    sigma_augment=decision.sigma_augment,
                    noiseless=UtilityCell(float(noiseless_acc.mean()), float(noiseless_acc.std())),
                    deterministic=UtilityCell(float(acc_d.mean()), float(acc_d.std())),
                    randomized=UtilityCell(float(acc_r.mean()), float(acc_r.std())),
                    mean_improvement=improvement,
                    t_test=t_result,
                    significant=(
                        t_result is not None
                        and t_result.p_value < significance_threshold
                        and improvement > 0
                    ),
                    percent_of_gap=(improvement / gap if gap > 0 else None),
                )
            )
    return UtilityTable(
        rows=tuple(rows),
        per_model=tuple(per_model),
        significance_threshold=significance_threshold,
    )
