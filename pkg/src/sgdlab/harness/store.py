"""On-disk result store: line-delimited record metadata plus binary weights.

Layout under the store root:

    meta.json        canonical config JSON, its digest, and a format version
    records.jsonl    one JSON object per finished run, appended in key order
    weights/<id>__s<seed>__<mode>/   one .sgdw file per checkpoint + final

Records are immutable once written and keyed by (dataset id, seed, init
mode); every line carries the config digest so a store can never silently
mix two configurations. Weight payloads round-trip bit-exactly.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from ..model import ModelError, ModelSpec, WeightVector, layout_for, load_weight_values, save_weights
from ..train import ExperimentRecord

STORE_FORMAT_VERSION = 1

Key = tuple[str, int, str]


class StoreError(RuntimeError):
    """Raised for missing keys, corrupt payloads, or config mismatches."""


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._~-]", "-", name)


def _record_dir(key: Key) -> str:
    dataset_id, seed, mode = key
    return f"{_sanitize(dataset_id)}__s{seed}__{mode}"


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class ResultStore:
    """Append-only store of experiment records under one directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        meta_path = self.root / "meta.json"
        if not meta_path.exists():
            raise StoreError(f"not a result store (no meta.json): {self.root}")
        self.meta = json.loads(meta_path.read_text())
        if self.meta.get("store_format") != STORE_FORMAT_VERSION:
            raise StoreError(f"unsupported store format in {meta_path}")
        self._index: dict[Key, dict] = {}
        records_path = self.root / "records.jsonl"
        if records_path.exists():
            for line in records_path.read_text().splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                key = (obj["dataset_id"], obj["seed"], obj["init_mode"])
                if key in self._index:
                    raise StoreError(f"duplicate record key {key} in {records_path}")
                if obj["config_digest"] != self.digest:
                    raise StoreError(
                        f"record {key} carries digest {obj['config_digest'][:12]}..., "
                        f"store is {self.digest[:12]}..."
                    )
                self._index[key] = obj

    @classmethod
    def create(
        cls, root: str | Path, config_raw: dict, digest: str, input_dim: int
    ) -> "ResultStore":
        """Open a store for this config, initializing it on first use.

        Opening an existing store with a different config digest is refused:
        a store holds runs of exactly one configuration. ``input_dim`` is the
        post-preprocessing feature dimension, recorded so weights can be
        reshaped without rebuilding the data.
        """
        root = Path(root)
        meta_path = root / "meta.json"
        if meta_path.exists():
            store = cls(root)
            if store.digest != digest:
                raise StoreError(
                    f"store at {root} was built with a different config "
                    f"(digest {store.digest[:12]}... != {digest[:12]}...)"
                )
            return store
        root.mkdir(parents=True, exist_ok=True)
        meta = {
            "store_format": STORE_FORMAT_VERSION,
            "config": config_raw,
            "config_digest": digest,
            "input_dim": input_dim,
        }
        meta_path.write_text(_canonical_json(meta) + "\n")
        return cls(root)

    @property
    def digest(self) -> str:
        return self.meta["config_digest"]

    @property
    def config_raw(self) -> dict:
        return self.meta["config"]

    def keys(self) -> list[Key]:
        return sorted(self._index)

    def __contains__(self, key: Key) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self._index)

    def model_spec(self) -> ModelSpec:
        model = self.config_raw["model"]
        return ModelSpec(
            kind=model["kind"],
            input_dim=int(self.meta["input_dim"]),
            hidden_size=int(model["hidden_size"]) if model["kind"] == "mlp" else None,
        )

    def append_records(self, records: list[ExperimentRecord]) -> int:
        """Persist new records (weights first, then metadata lines in key order)."""
        fresh = sorted(records, key=lambda r: (r.dataset_id, r.seed, r.init_mode))
        lines = []
        for record in fresh:
            key = record.key
            if key in self._index:
                raise StoreError(f"record {key} already exists")
            if record.config_digest != self.digest:
                raise StoreError(f"record {key} built under a different config digest")
            rel_dir = Path("weights") / _record_dir(key)
            (self.root / rel_dir).mkdir(parents=True, exist_ok=True)
            final_rel = rel_dir / "final.sgdw"
            save_weights(str(self.root / final_rel), record.final_weights)
            checkpoint_rows = []
            for step in sorted(record.checkpoints):
                rel = rel_dir / f"step{step:08d}.sgdw"
                save_weights(str(self.root / rel), record.checkpoints[step])
                checkpoint_rows.append([step, str(rel)])
            obj = {
                "dataset_id": record.dataset_id,
                "seed": record.seed,
                "init_mode": record.init_mode,
                "config_digest": record.config_digest,
                "final_weights": str(final_rel),
                "checkpoints": checkpoint_rows,
                "metrics": [
                    [step, record.metrics[step][0], record.metrics[step][1]]
                    for step in sorted(record.metrics)
                ],
            }
            self._index[key] = obj
            lines.append(_canonical_json(obj))
        if lines:
            with open(self.root / "records.jsonl", "a", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")
        return len(lines)

    def load_record(self, key: Key) -> ExperimentRecord:
        if key not in self._index:
            raise StoreError(f"no record for key {key}")
        obj = self._index[key]
        layout = layout_for(self.model_spec())

        def read(rel: str) -> WeightVector:
            try:
                return WeightVector(values=load_weight_values(self.root / rel), layout=layout)
            except (ModelError, OSError) as exc:
                raise StoreError(f"corrupt weight payload {rel}: {exc}") from None

        return ExperimentRecord(
            dataset_id=obj["dataset_id"],
            seed=obj["seed"],
            init_mode=obj["init_mode"],
            final_weights=read(obj["final_weights"]),
            checkpoints={step: read(rel) for step, rel in obj["checkpoints"]},
            metrics={step: (loss, acc) for step, loss, acc in obj["metrics"]},
            config_digest=obj["config_digest"],
        )

    def load_all(self) -> list[ExperimentRecord]:
        return [self.load_record(key) for key in self.keys()]
