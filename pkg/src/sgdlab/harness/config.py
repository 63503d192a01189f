"""Grid configuration: a strict, versioned key-per-field JSON schema.

Unknown keys are errors rather than silently ignored, so configuration drift
cannot change what a grid means. The config digest covers every field that
influences a record's contents (data, split, projection, model, training,
delta) but not the grid extent (seeds, members, modes), so enlarging a grid
resumes cleanly while any training-relevant edit is refused by the store.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from ..data import (
    DataError,
    DatasetInstance,
    NeighbourFamily,
    SplitSpec,
    generate_synthetic,
    grp_project,
    load_csv,
    make_neighbour_family,
    normalize_max_norm,
    pca_project,
    select_features,
    split_indices,
    take_rows,
)
from ..model import LossConstants, ModelSpec, loss_constants
from ..privacy import default_delta
from ..train import TrainConfig

SCHEMA_VERSION = 1

INIT_MODES = ("fixed", "vary")


class ConfigError(ValueError):
    """Raised for malformed or unknown configuration content."""


def _require_keys(section: dict, name: str, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> None:
    unknown = set(section) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(section)
    if missing:
        raise ConfigError(f"{name}: missing keys {sorted(missing)}")


@dataclass(frozen=True)
class GridConfig:
    raw: dict  # validated, canonical content (what meta.json stores)
    member_indices: tuple[int, ...]
    seeds: tuple[int, ...]
    init_modes: tuple[str, ...]
    model_kind: str
    hidden_size: int | None
    train: TrainConfig
    delta_override: float | None

    @property
    def digest(self) -> str:
        subset = {
            key: self.raw.get(key)
            for key in ("schema_version", "data", "split", "projection", "model", "train", "privacy")
        }
        blob = json.dumps(subset, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(obj: dict) -> GridConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    _require_keys(
        obj,
        "config",
        required=("schema_version", "data", "family", "grid", "model", "train"),
        optional=("split", "projection", "privacy"),
    )
    if obj["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {obj['schema_version']!r}")

    data = obj["data"]
    if data.get("kind") == "synthetic":
        _require_keys(data, "data", required=("kind", "n", "d", "separation", "seed"))
    elif data.get("kind") == "csv":
        _require_keys(data, "data", required=("kind", "path", "label_column"))
    else:
        raise ConfigError(f"data.kind must be 'synthetic' or 'csv', got {data.get('kind')!r}")

    split = obj.get("split")
    if split is not None:
        _require_keys(split, "split", required=("test_fraction",), optional=("validation_fraction", "seed"))

    projection = obj.get("projection")
    if projection is not None:
        kind = projection.get("kind")
        if kind == "pca":
            _require_keys(projection, "projection", required=("kind", "d_out"))
        elif kind == "grp":
            _require_keys(projection, "projection", required=("kind", "d_out", "seed"))
        elif kind == "select":
            _require_keys(projection, "projection", required=("kind", "indices"))
        else:
            raise ConfigError(f"projection.kind must be 'pca', 'grp' or 'select', got {kind!r}")

    family = obj["family"]
    _require_keys(family, "family", required=("member_indices",))
    member_indices = tuple(int(i) for i in family["member_indices"])
    if not member_indices:
        raise ConfigError("family.member_indices must be nonempty")
    if len(set(member_indices)) != len(member_indices):
        raise ConfigError("family.member_indices must be duplicate-free")

    grid = obj["grid"]
    _require_keys(grid, "grid", required=("seeds", "init_modes"))
    seeds = tuple(int(s) for s in grid["seeds"])
    if not seeds:
        raise ConfigError("grid.seeds must be nonempty")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("grid.seeds must be duplicate-free")
    init_modes = tuple(grid["init_modes"])
    if not init_modes or len(set(init_modes)) != len(init_modes):
        raise ConfigError("grid.init_modes must be nonempty and duplicate-free")
    for mode in init_modes:
        if mode not in INIT_MODES:
            raise ConfigError(f"unknown init mode {mode!r}")

    model = obj["model"]
    if model.get("kind") == "logreg":
        _require_keys(model, "model", required=("kind",))
        hidden = None
    elif model.get("kind") == "mlp":
        _require_keys(model, "model", required=("kind", "hidden_size"))
        hidden = int(model["hidden_size"])
    else:
        raise ConfigError(f"model.kind must be 'logreg' or 'mlp', got {model.get('kind')!r}")

    train = obj["train"]
    _require_keys(
        train,
        "train",
        required=("learning_rate", "batch_size", "total_steps"),
        optional=("checkpoint_steps", "eval_every"),
    )
    train_cfg = TrainConfig(
        learning_rate=float(train["learning_rate"]),
        batch_size=int(train["batch_size"]),
        total_steps=int(train["total_steps"]),
        checkpoint_steps=tuple(int(s) for s in train.get("checkpoint_steps", ())),
        eval_every=int(train.get("eval_every", 0)),
    )

    privacy = obj.get("privacy")
    delta_override = None
    if privacy is not None:
        _require_keys(privacy, "privacy", required=(), optional=("delta",))
        if privacy.get("delta") is not None:
            delta_override = float(privacy["delta"])
            if not (0.0 < delta_override < 1.0):
                raise ConfigError("privacy.delta must lie in (0, 1)")

    return GridConfig(
        raw=obj,
        member_indices=member_indices,
        seeds=seeds,
        init_modes=init_modes,
        model_kind=model["kind"],
        hidden_size=hidden,
        train=train_cfg,
        delta_override=delta_override,
    )


def load_config(path: str | Path) -> GridConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(obj)


@dataclass(frozen=True)
class DataContext:
    """Everything a grid needs, deterministically rebuilt from its config."""

    train_base: DatasetInstance
    test_set: DatasetInstance | None
    family: NeighbourFamily
    model_spec: ModelSpec
    constants: LossConstants
    delta: float
    member_rows: int  # rows each family member trains on


def build_data_context(cfg: GridConfig) -> DataContext:
    """Load, project, normalize, split, and derive the neighbour family.

    Order: projection first (PCA fitted on training rows only), then max-norm
    normalization using the full pre-split data (the documented default), then
    the train/test partition and the replace-one family over training rows.
    """
    data = cfg.raw["data"]
    if data["kind"] == "synthetic":
        dataset = generate_synthetic(
            n=int(data["n"]), d=int(data["d"]), separation=float(data["separation"]), seed=int(data["seed"])
        )
    else:
        dataset = load_csv(data["path"], data["label_column"])

    split = cfg.raw.get("split")
    if split is not None:
        spec = SplitSpec(
            validation_fraction=float(split.get("validation_fraction", 0.0)),
            test_fraction=float(split["test_fraction"]),
            split_seed=int(split.get("seed", 0)),
        )
        train_rows, _val_rows, test_rows = split_indices(dataset.n, spec)
    else:
        train_rows, test_rows = None, None

    projection = cfg.raw.get("projection")
    if projection is not None:
        if projection["kind"] == "pca":
            dataset, _ = pca_project(dataset, int(projection["d_out"]), train_rows=train_rows)
        elif projection["kind"] == "grp":
            dataset = grp_project(dataset, int(projection["d_out"]), seed=int(projection["seed"]))
        else:
            dataset = select_features(dataset, [int(i) for i in projection["indices"]])

    dataset = normalize_max_norm(dataset)
    if train_rows is not None:
        train_base = take_rows(dataset, train_rows, "train")
        test_set = take_rows(dataset, test_rows, "test") if test_rows.size else None
    else:
        train_base, test_set = dataset, None

    try:
        family = make_neighbour_family(train_base, list(cfg.member_indices))
    except DataError as exc:
        raise ConfigError(f"family.member_indices invalid for this data: {exc}") from None

    member_rows = train_base.n - 1
    if cfg.train.batch_size > member_rows:
        raise ConfigError(
            f"train.batch_size {cfg.train.batch_size} exceeds member size {member_rows}"
        )
    model_spec = ModelSpec(kind=cfg.model_kind, input_dim=train_base.d, hidden_size=cfg.hidden_size)
    return DataContext(
        train_base=train_base,
        test_set=test_set,
        family=family,
        model_spec=model_spec,
        constants=loss_constants(model_spec, train_base.norm_bound),
        delta=cfg.delta_override if cfg.delta_override is not None else default_delta(member_rows),
        member_rows=member_rows,
    )
