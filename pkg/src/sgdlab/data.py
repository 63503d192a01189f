"""Dataset ingestion, synthesis, preprocessing, and neighbouring families.

A dataset here is an immutable feature matrix with binary labels and a
certified bound on the row norms. Sensitivity experiments are driven by
"replace-one" families: each member replaces one row of the base data with
row 0 and then drops row 0, so any two members differ in exactly one element
as multisets and at exactly two positions as ordered lists.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import philox_stream

# Domain tags for data-owned streams (distinct from the training tags).
_SYNTH_TAG = 101
_GRP_TAG = 102
_SPLIT_TAG = 103

_NORM_SLACK = 4e-12  # relative slack for row-norm checks (ULP effects of scaling)


class DataError(ValueError):
    """Raised for malformed inputs or violated dataset preconditions."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DatasetInstance:
    """Immutable (features, labels) pair with a certified max row norm."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64, values in {0, 1}
    norm_bound: float
    source_id: str

    def __post_init__(self) -> None:
        f = _readonly(np.asarray(self.features, dtype=np.float64))
        y = _readonly(np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise DataError(f"features must be a nonempty 2-D matrix, got shape {f.shape}")
        if y.shape != (f.shape[0],):
            raise DataError("labels length must equal the number of rows")
        if not np.isin(y, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        if not np.isfinite(f).all():
            raise DataError("features must be finite")
        norms = np.linalg.norm(f, axis=1)
        if norms.max(initial=0.0) > self.norm_bound * (1.0 + _NORM_SLACK):
            raise DataError(
                f"row norm {norms.max():.17g} exceeds certified bound {self.norm_bound:.17g}"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class NeighbourFamily:
    """A base dataset plus its replace-one derived instances.

    ``members[k]`` is the base with row ``member_indices[k]`` overwritten by
    row 0 and row 0 dropped, so each member has ``base.n - 1`` rows.
    """

    base: DatasetInstance
    member_indices: tuple[int, ...]
    members: tuple[DatasetInstance, ...]

    def member_id(self, index: int) -> str:
        return family_member_id(self.base.source_id, index)


@dataclass(frozen=True)
class SplitSpec:
    """Held-out fractions and the seed of the splitting permutation."""

    validation_fraction: float = 0.0
    test_fraction: float = 0.0
    split_seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.validation_fraction < 1.0 and 0.0 <= self.test_fraction < 1.0):
            raise DataError("split fractions must lie in [0, 1)")
        if self.validation_fraction + self.test_fraction >= 1.0:
            raise DataError("split fractions must sum to less than 1")


def family_member_id(base_id: str, index: int) -> str:
    return f"{base_id}~i{index:04d}"


def max_row_norm(features: np.ndarray) -> float:
    return float(np.linalg.norm(features, axis=1).max())


def _instance(features: np.ndarray, labels: np.ndarray, source_id: str) -> DatasetInstance:
    return DatasetInstance(
        features=features,
        labels=labels,
        norm_bound=max_row_norm(features),
        source_id=source_id,
    )


def load_csv(path: str, label_column: str) -> DatasetInstance:
    """Load a comma-separated file with a header row into a dataset.

    The label column must contain exactly two distinct values; the first one
    seen maps to 0 and the other to 1. All remaining columns must be numeric
    (``.`` decimal point). The certified norm bound is the observed maximum
    row norm.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not found in {path}")
        label_pos = header.index(label_column)
        feature_pos = [i for i in range(len(header)) if i != label_pos]
        if not feature_pos:
            raise DataError("dataset must have at least one feature column")

        rows: list[list[float]] = []
        labels: list[int] = []
        label_codes: dict[str, int] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            raw_label = rec[label_pos]
            if raw_label not in label_codes:
                if len(label_codes) == 2:
                    raise DataError(
                        f"{path}:{lineno}: more than two distinct label values "
                        f"({sorted(label_codes)} and {raw_label!r})"
                    )
                label_codes[raw_label] = len(label_codes)
            labels.append(label_codes[raw_label])
            try:
                rows.append([float(rec[i]) for i in feature_pos])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
    if not rows:
        raise DataError(f"no data rows in {path}")

    stem = path.rsplit("/", 1)[-1]
    stem = stem[: -len(".csv")] if stem.endswith(".csv") else stem
    return _instance(np.array(rows, dtype=np.float64), np.array(labels), stem)


def save_csv(dataset: DatasetInstance, path: str, label_column: str = "label") -> None:
    """Write a dataset in the CSV fixture format consumed by ``load_csv``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(dataset.d)] + [label_column])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def generate_synthetic(n: int, d: int, separation: float, seed: int) -> DatasetInstance:
    """Two spherical unit-variance Gaussian classes with mean distance ``separation``.

    Class 0 gets ``ceil(n / 2)`` rows (the remainder), class 1 the rest; rows
    are grouped by class. Deterministic in the seed.
    """
    if n < 2 or d < 1 or separation < 0:
        raise DataError("need n >= 2, d >= 1, separation >= 0")
    gen = philox_stream(seed, _SYNTH_TAG)
    n1 = n // 2
    n0 = n - n1
    offset = np.zeros(d)
    offset[0] = separation / 2.0
    features = np.vstack(
        [
            gen.standard_normal((n0, d)) - offset,
            gen.standard_normal((n1, d)) + offset,
        ]
    )
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return _instance(features, labels, f"syn-n{n}-d{d}-p{separation:g}-s{seed}")


def normalize_max_norm(dataset: DatasetInstance) -> DatasetInstance:
    """Scale all rows by 1 / (max row norm), certifying a norm bound of 1.

    The scale is computed from every row of ``dataset``; callers that split
    afterwards therefore apply the same factor to held-out rows. The original
    scale can be recovered as ``1 / max_row_norm(dataset.features)``.
    """
    scale = max_row_norm(dataset.features)
    if scale == 0.0:
        raise DataError("cannot normalize an all-zero dataset")
    return DatasetInstance(
        features=dataset.features / scale,
        labels=dataset.labels,
        norm_bound=1.0,
        source_id=dataset.source_id,
    )


@dataclass(frozen=True)
class PcaProjection:
    """Mean and components fitted on training rows, reusable on held-out rows."""

    mean: np.ndarray  # (d,)
    components: np.ndarray  # (d, d_out), columns ordered by descending eigenvalue
    eigenvalues: np.ndarray = field(repr=False)  # (d_out,)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) @ self.components


def pca_project(
    dataset: DatasetInstance, d_out: int, train_rows: np.ndarray | None = None
) -> tuple[DatasetInstance, PcaProjection]:
    """Project onto the top principal components of the training covariance.

    The covariance is estimated from ``train_rows`` only (all rows when
    omitted); the projection is then applied to every row. Components are
    ordered by descending eigenvalue, and each eigenvector's sign is fixed by
    making its largest-magnitude coordinate positive so results are
    reproducible across platforms.
    """
    if not (1 <= d_out <= dataset.d):
        raise DataError(f"d_out must be in [1, {dataset.d}], got {d_out}")
    rows = np.arange(dataset.n) if train_rows is None else np.asarray(train_rows, dtype=np.intp)
    if rows.size < 2:
        raise DataError("PCA needs at least two training rows")
    train = dataset.features[rows]
    mean = train.mean(axis=0)
    centered = train - mean
    cov = centered.T @ centered / (centered.shape[0] - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1][:d_out]
    components = eigenvectors[:, order]
    for j in range(components.shape[1]):
        pivot = np.argmax(np.abs(components[:, j]))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    projection = PcaProjection(
        mean=_readonly(mean),
        components=_readonly(components),
        eigenvalues=_readonly(eigenvalues[order]),
    )
    return (
        _instance(projection.apply(dataset.features), dataset.labels, f"{dataset.source_id}|pca{d_out}"),
        projection,
    )


def grp_project(dataset: DatasetInstance, d_out: int, seed: int) -> DatasetInstance:
    """Gaussian random projection to ``d_out`` coordinates.

    Multiplies features by a (d, d_out) matrix of independent standard
    normals scaled by 1/sqrt(d_out), which preserves squared norms in
    expectation. Deterministic in the seed.
    """
    if d_out < 1:
        raise DataError("d_out must be >= 1")
    gen = philox_stream(seed, _GRP_TAG)
    matrix = gen.standard_normal((dataset.d, d_out)) / math.sqrt(d_out)
    return _instance(
        dataset.features @ matrix, dataset.labels, f"{dataset.source_id}|grp{d_out}-s{seed}"
    )


def select_features(dataset: DatasetInstance, index_set: list[int]) -> DatasetInstance:
    """Retain the listed feature columns, in the given order."""
    if len(index_set) == 0:
        raise DataError("index set must be nonempty")
    if len(set(index_set)) != len(index_set):
        raise DataError("feature indices must be distinct")
    for j in index_set:
        if not (0 <= j < dataset.d):
            raise DataError(f"feature index {j} out of range for d={dataset.d}")
    return _instance(
        dataset.features[:, list(index_set)], dataset.labels, f"{dataset.source_id}|sel{len(index_set)}"
    )


def central_square_indices(height: int, width: int, side: int) -> list[int]:
    """Column indices of the central ``side x side`` block of a flattened image grid."""
    if not (0 < side <= min(height, width)):
        raise DataError("side must be positive and fit inside the grid")
    top = (height - side) // 2
    left = (width - side) // 2
    return [(top + r) * width + (left + c) for r in range(side) for c in range(side)]


def make_neighbour_family(dataset: DatasetInstance, member_indices: list[int]) -> NeighbourFamily:
    """Build the replace-one instances {S_i} for the requested row indices.

    S_i is the base with row i overwritten by row 0 and the first row dropped,
    so original row j sits at position j - 1 and members S_i, S_j agree at
    every position except i - 1 and j - 1.
    """
    if dataset.n < 3:
        raise DataError("neighbour families need at least 3 rows")
    indices = [int(i) for i in member_indices]
    if len(indices) != len(set(indices)):
        raise DataError("member indices must be distinct")
    members = []
    for i in indices:
        if not (1 <= i <= dataset.n - 1):
            raise DataError(f"member index {i} outside [1, {dataset.n - 1}]")
        features = dataset.features.copy()
        labels = dataset.labels.copy()
        features[i] = dataset.features[0]
        labels[i] = dataset.labels[0]
        members.append(
            DatasetInstance(
                features=features[1:],
                labels=labels[1:],
                norm_bound=dataset.norm_bound,
                source_id=family_member_id(dataset.source_id, i),
            )
        )
    return NeighbourFamily(
        base=dataset, member_indices=tuple(indices), members=tuple(members)
    )


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sorted (train, validation, test) row indices for a seeded split of n rows."""
    perm = philox_stream(spec.split_seed, _SPLIT_TAG).permutation(n)
    n_test = int(n * spec.test_fraction)
    n_val = int(n * spec.validation_fraction)
    return (
        np.sort(perm[n_test + n_val :]),
        np.sort(perm[n_test : n_test + n_val]),
        np.sort(perm[:n_test]),
    )


def take_rows(dataset: DatasetInstance, rows: np.ndarray, tag: str) -> DatasetInstance:
    """Row-subset instance inheriting the certified norm bound."""
    return DatasetInstance(
        features=dataset.features[rows],
        labels=dataset.labels[rows],
        norm_bound=dataset.norm_bound,
        source_id=f"{dataset.source_id}|{tag}",
    )


def split_dataset(
    dataset: DatasetInstance, spec: SplitSpec
) -> tuple[DatasetInstance, DatasetInstance | None, DatasetInstance | None]:
    """Partition rows into (train, validation, test) by a seeded permutation.

    Validation and test parts are ``None`` when their fraction is zero. Row
    counts are rounded down, so train always keeps at least one row.
    """
    train_rows, val_rows, test_rows = split_indices(dataset.n, spec)
    return (
        take_rows(dataset, train_rows, "train"),
        take_rows(dataset, val_rows, "val") if val_rows.size else None,
        take_rows(dataset, test_rows, "test") if test_rows.size else None,
    )
