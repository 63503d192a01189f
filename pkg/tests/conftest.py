"""Shared fixtures: the desk-scale grid every empirical check runs against."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import pytest

from sgdlab.harness import ResultStore, build_data_context, parse_config, run_grid
from sgdlab.harness.config import DataContext, GridConfig
from sgdlab.train import ExperimentRecord, TrainConfig, run_sgd

# Desk-scale grid: ~500 training rows, 10 neighbouring instances, 40 seeds,
# logistic regression.
DESK_CONFIG = {
    "schema_version": 1,
    "data": {"kind": "synthetic", "n": 627, "d": 5, "separation": 2.0, "seed": 11},
    "split": {"test_fraction": 0.2, "seed": 0},
    "family": {"member_indices": list(range(1, 11))},
    "grid": {"seeds": list(range(1, 41)), "init_modes": ["vary"]},
    "model": {"kind": "logreg"},
    "train": {
        "learning_rate": 0.5,
        "batch_size": 32,
        "total_steps": 450,
        "checkpoint_steps": [0, 450],
        "eval_every": 0,
    },
}


@dataclass
class DeskGrid:
    cfg: GridConfig
    ctx: DataContext
    store: ResultStore
    records: list[ExperimentRecord]


def desk_config(**overrides) -> dict:
    cfg = copy.deepcopy(DESK_CONFIG)
    for key, value in overrides.items():
        cfg[key] = value
    return cfg


@pytest.fixture(scope="session")
def desk_grid(tmp_path_factory) -> DeskGrid:
    cfg = parse_config(desk_config())
    store_dir = tmp_path_factory.mktemp("desk") / "store"
    run_grid(cfg, store_dir, jobs=1)
    store = ResultStore(store_dir)
    return DeskGrid(
        cfg=cfg, ctx=build_data_context(cfg), store=store, records=store.load_all()
    )


@pytest.fixture(scope="session")
def divergence_runs(desk_grid) -> dict[tuple[int, int], ExperimentRecord]:
    """Per-step-checkpointed runs over the desk family: (member index, seed) -> record."""
    cfg = TrainConfig(
        learning_rate=0.5, batch_size=32, total_steps=60, checkpoint_steps=tuple(range(61))
    )
    ctx = desk_grid.ctx
    runs = {}
    for member_index, member in zip(ctx.family.member_indices, ctx.family.members):
        for seed in (1, 2, 3):
            runs[(member_index, seed)] = run_sgd(ctx.model_spec, member, cfg, seed, "vary")
    return runs
