"""Sensitivity, variability, and intrinsic-epsilon estimation over run grids.

Inputs are collections of finished runs over a neighbouring family: per seed
r and family members a, b the pairwise sensitivity is ||w_ra - w_rb||, the
empirical sensitivity is the max over all such pairs, and the intrinsic
variability sigma is the pooled standard deviation of seed-induced weight
deviations, minimised over family members. Combining either sensitivity with
sigma through the Gaussian-mechanism relation yields the intrinsic epsilon.
All aggregations are order-independent functions of the record set, and none
of the outputs constitutes a formal privacy guarantee; they are descriptive
estimates of how seed noise compares to data sensitivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .privacy import gaussian_noise_multiplier
from .rng import philox_stream
from .train import ExperimentRecord, TrainError

KIND_S = "S"
KIND_V_FIX = "V_fix"
KIND_V_VARY = "V_vary"
KIND_S_PLUS_V = "S_plus_V"
DELTA_KINDS = (KIND_S, KIND_V_FIX, KIND_V_VARY, KIND_S_PLUS_V)

_RESAMPLE_TAG = 104
HISTOGRAM_FALLBACK_BINS = 50


class AnalysisError(ValueError):
    """Raised when a record grid cannot support the requested estimate."""


@dataclass(frozen=True)
class DeltaSample:
    """One pairwise weight distance, labelled by what differed between runs."""

    kind: str
    value: float
    key_a: tuple[str, int, str]
    key_b: tuple[str, int, str]


@dataclass(frozen=True)
class PairwiseDistance:
    seed: int
    dataset_a: str
    dataset_b: str
    value: float


@dataclass(frozen=True)
class SensitivityReport:
    theoretical: float | None
    empirical: float
    pairwise: tuple[PairwiseDistance, ...]


@dataclass(frozen=True)
class VariabilityReport:
    sigma_by_dataset: dict[str, float]
    sigma_i: float


@dataclass(frozen=True)
class SigmaDiagnostics:
    """Alternative aggregations of seed variability, for diagnostics only.

    ``per_weight_mean`` averages one stddev per coordinate; ``norm_stddev``
    is the stddev of the final-weight norms. Neither feeds any epsilon
    computation; the pooled estimate in ``VariabilityReport`` does.
    """

    pooled: float
    per_weight_mean: float
    norm_stddev: float


@dataclass(frozen=True)
class EpsilonValue:
    """An intrinsic epsilon estimate.

    ``exceeds_gaussian_range`` flags values above 1, where the Gaussian
    mechanism theorem does not apply and the number only describes the ratio
    of sensitivity to variability. ``infinite`` marks a zero-variability
    input.
    """

    value: float
    exceeds_gaussian_range: bool
    infinite: bool


@dataclass(frozen=True)
class PairwiseEpsilon:
    dataset_a: str
    dataset_b: str
    local_sensitivity: float
    local_sigma: float
    epsilon: EpsilonValue


@dataclass(frozen=True)
class EpsilonReport:
    delta: float
    sigma_i: float
    sigma_by_dataset: dict[str, float]
    epsilon_theoretical: EpsilonValue | None
    epsilon_empirical: EpsilonValue
    pairwise_epsilons: tuple[PairwiseEpsilon, ...]


@dataclass(frozen=True)
class DeltaSummary:
    count: int
    min: float
    median: float
    max: float
    bin_edges: tuple[float, ...]
    bin_counts: tuple[int, ...]


@dataclass(frozen=True)
class StepCurves:
    steps: tuple[int, ...]
    empirical_sensitivity: tuple[float, ...]
    sigma_fixed: tuple[float, ...]
    sigma_vary: tuple[float, ...]
    theoretical: tuple[float, ...] | None


@dataclass(frozen=True)
class ConvergenceCurves:
    subset_sizes: tuple[int, ...]
    empirical_sensitivity: tuple[float, ...]
    sigma_i: tuple[float, ...]


def weight_distance(w1, w2) -> float:
    """l2 distance between two flat weight vectors of identical layout."""
    if w1.layout != w2.layout:
        raise AnalysisError("weight vectors have different layouts")
    return float(np.linalg.norm(w1.values - w2.values))


def theoretical_sensitivity(k: float, lipschitz: float, learning_rate: float, batch_size: int) -> float:
    """Upper bound 2 k L eta / B on the sensitivity of k passes of SGD."""
    if k < 0 or lipschitz <= 0 or learning_rate <= 0 or batch_size < 1:
        raise AnalysisError("k must be >= 0 and L, eta, B positive")
    return 2.0 * k * lipschitz * learning_rate / batch_size


def _check_same_config(records: list[ExperimentRecord]) -> None:
    digests = {r.config_digest for r in records}
    if len(digests) > 1:
        raise TrainError(f"records mix {len(digests)} different configurations")


def _weights_of(record: ExperimentRecord, step: int | None) -> np.ndarray:
    if step is None:
        return record.final_weights.values
    if step not in record.checkpoints:
        raise AnalysisError(f"record {record.key} has no checkpoint at step {step}")
    return record.checkpoints[step].values


def _pairwise_sensitivities(
    records: list[ExperimentRecord], step: int | None = None
) -> list[PairwiseDistance]:
    by_seed_mode: dict[tuple[int, str], list[ExperimentRecord]] = {}
    for r in records:
        by_seed_mode.setdefault((r.seed, r.init_mode), []).append(r)
    out: list[PairwiseDistance] = []
    for (seed, _mode), group in sorted(by_seed_mode.items()):
        group = sorted(group, key=lambda r: r.dataset_id)
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                a, b = group[i], group[j]
                if a.dataset_id == b.dataset_id:
                    continue
                value = float(np.linalg.norm(_weights_of(a, step) - _weights_of(b, step)))
                out.append(PairwiseDistance(seed, a.dataset_id, b.dataset_id, value))
    return out


def empirical_sensitivity(
    records: list[ExperimentRecord], theoretical: float | None = None
) -> SensitivityReport:
    """Max pairwise distance between same-seed runs on different family members.

    ``theoretical`` is attached verbatim when the caller has a Lipschitz
    constant available (convex models only).
    """
    _check_same_config(records)
    pairwise = _pairwise_sensitivities(records)
    if not pairwise:
        raise AnalysisError("no same-seed pair of runs on different datasets available")
    return SensitivityReport(
        theoretical=theoretical,
        empirical=max(p.value for p in pairwise),
        pairwise=tuple(pairwise),
    )


def _pooled_sigma(stack: np.ndarray) -> float:
    # Population stddev of all coordinates of (w_r - mean_r w_r), pooled.
    deviations = stack - stack.mean(axis=0)
    return float(np.sqrt(np.mean(deviations * deviations)))


def variability_sigma(records: list[ExperimentRecord], step: int | None = None) -> VariabilityReport:
    """Per-dataset pooled stddev of seed-induced deviations, and its minimum.

    Expects records of a single init mode; mixing modes would pool two
    different weight clouds.
    """
    _check_same_config(records)
    if len({r.init_mode for r in records}) > 1:
        raise AnalysisError("variability must be estimated per init mode; filter first")
    by_dataset: dict[str, list[ExperimentRecord]] = {}
    for r in records:
        by_dataset.setdefault(r.dataset_id, []).append(r)
    if not by_dataset:
        raise AnalysisError("no records given")
    sigma_by_dataset: dict[str, float] = {}
    for dataset_id, group in sorted(by_dataset.items()):
        if len({r.seed for r in group}) < 2:
            raise AnalysisError(f"dataset {dataset_id} has fewer than 2 seeds")
        stack = np.stack([_weights_of(r, step) for r in sorted(group, key=lambda r: r.seed)])
        sigma_by_dataset[dataset_id] = _pooled_sigma(stack)
    return VariabilityReport(
        sigma_by_dataset=sigma_by_dataset, sigma_i=min(sigma_by_dataset.values())
    )


def sigma_diagnostics(records: list[ExperimentRecord], step: int | None = None) -> dict[str, SigmaDiagnostics]:
    """Per-dataset comparison of the pooled sigma with the alternative estimators."""
    _check_same_config(records)
    if len({r.init_mode for r in records}) > 1:
        raise AnalysisError("sigma diagnostics expect records of a single init mode; filter first")
    by_dataset: dict[str, list[ExperimentRecord]] = {}
    for r in records:
        by_dataset.setdefault(r.dataset_id, []).append(r)
    out: dict[str, SigmaDiagnostics] = {}
    for dataset_id, group in sorted(by_dataset.items()):
        if len({r.seed for r in group}) < 2:
            raise AnalysisError(f"dataset {dataset_id} has fewer than 2 seeds")
        stack = np.stack([_weights_of(r, step) for r in sorted(group, key=lambda r: r.seed)])
        out[dataset_id] = SigmaDiagnostics(
            pooled=_pooled_sigma(stack),
            per_weight_mean=float(stack.std(axis=0).mean()),
            norm_stddev=float(np.linalg.norm(stack, axis=1).std()),
        )
    return out


def compute_epsilon(sensitivity: float, sigma: float, delta: float) -> EpsilonValue:
    """epsilon = (sqrt(2 ln(1.25/delta)) + 1e-5) * sensitivity / sigma.

    A zero sigma yields a distinguished infinite value; results above 1 are
    flagged because the Gaussian mechanism theorem only covers epsilon in
    (0, 1).
    """
    if sensitivity < 0:
        raise AnalysisError("sensitivity must be >= 0")
    if sigma < 0:
        raise AnalysisError("sigma must be >= 0")
    if sigma == 0.0:
        if sensitivity == 0.0:
            return EpsilonValue(value=0.0, exceeds_gaussian_range=False, infinite=False)
        return EpsilonValue(value=math.inf, exceeds_gaussian_range=True, infinite=True)
    value = gaussian_noise_multiplier(delta) * sensitivity / sigma
    return EpsilonValue(value=value, exceeds_gaussian_range=value > 1.0, infinite=False)


def pairwise_epsilon(records: list[ExperimentRecord], delta: float) -> tuple[PairwiseEpsilon, ...]:
    """One epsilon per family-member pair from local sensitivity and local sigma.

    Local sensitivity for (a, b) is the max over seeds of ||w_ra - w_rb||;
    local sigma is the variability estimated from the records of a and b only.
    """
    _check_same_config(records)
    if len({r.init_mode for r in records}) > 1:
        raise AnalysisError("pairwise epsilon must be computed per init mode; filter first")
    by_pair: dict[tuple[str, str], list[float]] = {}
    for p in _pairwise_sensitivities(records):
        by_pair.setdefault((p.dataset_a, p.dataset_b), []).append(p.value)
    if not by_pair:
        raise AnalysisError("no same-seed pair of runs on different datasets available")
    by_dataset: dict[str, list[ExperimentRecord]] = {}
    for r in records:
        by_dataset.setdefault(r.dataset_id, []).append(r)
    out = []
    for (id_a, id_b), values in sorted(by_pair.items()):
        local = variability_sigma(by_dataset[id_a] + by_dataset[id_b])
        local_sensitivity = max(values)
        out.append(
            PairwiseEpsilon(
                dataset_a=id_a,
                dataset_b=id_b,
                local_sensitivity=local_sensitivity,
                local_sigma=local.sigma_i,
                epsilon=compute_epsilon(local_sensitivity, local.sigma_i, delta),
            )
        )
    return tuple(out)


def estimate_epsilon_report(
    records: list[ExperimentRecord], delta: float, theoretical: float | None = None
) -> EpsilonReport:
    """Run the full estimation pipeline on a single-mode record grid."""
    sens = empirical_sensitivity(records, theoretical=theoretical)
    var = variability_sigma(records)
    return EpsilonReport(
        delta=delta,
        sigma_i=var.sigma_i,
        sigma_by_dataset=var.sigma_by_dataset,
        epsilon_theoretical=(
            compute_epsilon(theoretical, var.sigma_i, delta) if theoretical is not None else None
        ),
        epsilon_empirical=compute_epsilon(sens.empirical, var.sigma_i, delta),
        pairwise_epsilons=pairwise_epsilon(records, delta),
    )


def classify_pair(a: ExperimentRecord, b: ExperimentRecord) -> str | None:
    """Which of S, V_fix, V_vary, S_plus_V a record pair contributes to.

    Pairs with different init modes are not comparable and return ``None``.
    """
    if a.init_mode != b.init_mode:
        return None
    same_data = a.dataset_id == b.dataset_id
    same_seed = a.seed == b.seed
    if same_data and same_seed:
        return None
    if same_seed:
        return KIND_S
    if same_data:
        return KIND_V_FIX if a.init_mode == "fixed" else KIND_V_VARY
    return KIND_S_PLUS_V


def _histogram(values: np.ndarray) -> tuple[tuple[float, ...], tuple[int, ...]]:
    """Freedman-Diaconis binning with a documented 50-equal-bin fallback."""
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return (lo, hi), (len(values),)
    q75, q25 = np.percentile(values, [75, 25])
    width = 2.0 * (q75 - q25) / len(values) ** (1.0 / 3.0)
    if width > 0:
        bins = max(1, min(10_000, math.ceil((hi - lo) / width)))
    else:
        bins = HISTOGRAM_FALLBACK_BINS
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return tuple(float(e) for e in edges), tuple(int(c) for c in counts)


def delta_distributions(records: list[ExperimentRecord]) -> dict[str, DeltaSummary]:
    """Classify every admissible record pair and summarize distances per kind."""
    _check_same_config(records)
    ordered = sorted(records, key=lambda r: r.key)
    samples: dict[str, list[float]] = {k: [] for k in DELTA_KINDS}
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            kind = classify_pair(ordered[i], ordered[j])
            if kind is None:
                continue
            samples[kind].append(
                float(np.linalg.norm(ordered[i].final_weights.values - ordered[j].final_weights.values))
            )
    out: dict[str, DeltaSummary] = {}
    for kind in DELTA_KINDS:
        values = np.array(samples[kind])
        if values.size == 0:
            continue
        edges, counts = _histogram(values)
        out[kind] = DeltaSummary(
            count=int(values.size),
            min=float(values.min()),
            median=float(np.median(values)),
            max=float(values.max()),
            bin_edges=edges,
            bin_counts=counts,
        )
    if not out:
        raise AnalysisError("no admissible record pairs for any delta kind")
    return out


def theoretical_sensitivity_at_step(
    step: int,
    lipschitz: float,
    learning_rate: float,
    batch_size: int,
    n_rows: int,
    accounting: str = "fractional",
) -> float:
    """Theory curve 2 k(t) L eta / B with fractional or whole-epoch passes.

    ``fractional`` counts k(t) = t B / N; ``per_epoch`` charges each begun
    epoch in full (a stepwise curve), using the drop-remainder epoch length.
    """
    if accounting == "fractional":
        k = step * batch_size / n_rows
    elif accounting == "per_epoch":
        k = math.ceil(step / (n_rows // batch_size)) if step > 0 else 0.0
    else:
        raise AnalysisError(f"unknown accounting {accounting!r}")
    return theoretical_sensitivity(k, lipschitz, learning_rate, batch_size) if step > 0 else 0.0


def stability_vs_steps(
    records: list[ExperimentRecord],
    lipschitz: float | None = None,
    learning_rate: float | None = None,
    batch_size: int | None = None,
    n_rows: int | None = None,
    accounting: str = "fractional",
) -> StepCurves:
    """Recompute sensitivity and variability at every shared checkpoint.

    Entries are NaN where the grid lacks the pairs a quantity needs (for
    example no fixed-init runs). The theoretical curve is included when the
    Lipschitz constant and training geometry are supplied.
    """
    _check_same_config(records)
    schedules = {tuple(sorted(r.checkpoints)) for r in records}
    if len(schedules) != 1:
        raise AnalysisError("records have mismatched checkpoint schedules")
    steps = schedules.pop()
    if not steps:
        raise AnalysisError("records carry no checkpoints")

    emp: list[float] = []
    sig_fix: list[float] = []
    sig_vary: list[float] = []
    for step in steps:
        pairs = _pairwise_sensitivities(records, step=step)
        emp.append(max((p.value for p in pairs), default=math.nan))
        sig_fix.append(_sigma_i_or_nan([r for r in records if r.init_mode == "fixed"], step))
        sig_vary.append(_sigma_i_or_nan([r for r in records if r.init_mode == "vary"], step))

    theoretical = None
    if None not in (lipschitz, learning_rate, batch_size, n_rows):
        theoretical = tuple(
            theoretical_sensitivity_at_step(
                s, lipschitz, learning_rate, batch_size, n_rows, accounting
            )
            for s in steps
        )
    return StepCurves(
        steps=tuple(steps),
        empirical_sensitivity=tuple(emp),
        sigma_fixed=tuple(sig_fix),
        sigma_vary=tuple(sig_vary),
        theoretical=theoretical,
    )


def _sigma_i_or_nan(records: list[ExperimentRecord], step: int | None = None) -> float:
    """sigma_i over the datasets that have >= 2 seeds, NaN when none qualify."""
    by_group: dict[tuple[str, str], list[ExperimentRecord]] = {}
    for r in records:
        by_group.setdefault((r.dataset_id, r.init_mode), []).append(r)
    eligible = [g for g in by_group.values() if len({r.seed for r in g}) >= 2]
    if not eligible:
        return math.nan
    return min(variability_sigma(g, step=step).sigma_i for g in eligible)


def estimate_convergence(
    records: list[ExperimentRecord], subset_sizes: list[int], resample_seed: int
) -> ConvergenceCurves:
    """Track how the estimates settle as more experiments are included.

    Records are shuffled once (deterministically in the resample seed) and
    subsets are prefixes, so they grow by inclusion and the sensitivity curve
    is monotone nondecreasing. Entries are NaN where a subset cannot support
    the estimate yet.
    """
    _check_same_config(records)
    sizes = sorted(set(int(s) for s in subset_sizes))
    if not sizes or sizes[0] < 1:
        raise AnalysisError("subset sizes must be positive")
    if sizes[-1] > len(records):
        raise AnalysisError(f"subset size {sizes[-1]} exceeds {len(records)} records")
    ordered = sorted(records, key=lambda r: r.key)
    perm = philox_stream(resample_seed, _RESAMPLE_TAG).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]

    emp: list[float] = []
    sig: list[float] = []
    for size in sizes:
        subset = shuffled[:size]
        pairs = _pairwise_sensitivities(subset)
        emp.append(max((p.value for p in pairs), default=math.nan))
        sig.append(_sigma_i_or_nan(subset))
    return ConvergenceCurves(
        subset_sizes=tuple(sizes),
        empirical_sensitivity=tuple(emp),
        sigma_i=tuple(sig),
    )
