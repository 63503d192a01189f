"""Experiment-grid execution: one SGD run per (family member, seed, init mode).

Runs are pure functions of the config, so the grid is idempotent (existing
keys are skipped) and resumable, and may execute in parallel: workers rebuild
the data context deterministically from the config JSON, and new records are
appended in sorted key order after all workers finish so store bytes never
depend on scheduling.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from ..train import ExperimentRecord, run_sgd
from .config import DataContext, GridConfig, build_data_context, parse_config
from .store import Key, ResultStore


@dataclass(frozen=True)
class GridRunResult:
    store_dir: str
    total: int
    new: int
    skipped: int


@lru_cache(maxsize=4)
def _context_from_json(config_blob: str) -> tuple[GridConfig, DataContext]:
    cfg = parse_config(json.loads(config_blob))
    return cfg, build_data_context(cfg)


def _run_one(config_blob: str, digest: str, member_index: int, seed: int, mode: str) -> ExperimentRecord:
    cfg, ctx = _context_from_json(config_blob)
    member = ctx.family.members[ctx.family.member_indices.index(member_index)]
    return run_sgd(
        ctx.model_spec, member, cfg.train, seed, init_mode=mode, config_digest=digest
    )


def run_grid(cfg: GridConfig, out_dir: str | Path, jobs: int = 1) -> GridRunResult:
    """Execute all missing grid cells and persist them into the store."""
    ctx = build_data_context(cfg)
    digest = cfg.digest
    store = ResultStore.create(out_dir, cfg.raw, digest, input_dim=ctx.model_spec.input_dim)

    tasks: list[tuple[int, Key]] = []
    for member_index in cfg.member_indices:
        member_id = ctx.family.member_id(member_index)
        for seed in cfg.seeds:
            for mode in cfg.init_modes:
                key = (member_id, seed, mode)
                if key not in store:
                    tasks.append((member_index, key))

    config_blob = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
    records: list[ExperimentRecord] = []
    if jobs <= 1 or len(tasks) <= 1:
        for member_index, (_, seed, mode) in tasks:
            records.append(_run_one(config_blob, digest, member_index, seed, mode))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_one, config_blob, digest, member_index, seed, mode)
                for member_index, (_, seed, mode) in tasks
            ]
            records = [f.result() for f in futures]

    new = store.append_records(records)
    total = len(cfg.member_indices) * len(cfg.seeds) * len(cfg.init_modes)
    return GridRunResult(
        store_dir=str(store.root), total=total, new=new, skipped=total - new
    )
