"""Seeded SGD with per-epoch shuffling, checkpoints, and trajectory comparison.

Each run is a pure function of (model spec, dataset, config, master seed,
init mode): the master seed derives independent streams for initialisation
and shuffling, every epoch draws a fresh permutation, and batches are
consecutive blocks of the permutation with the incomplete trailing batch
dropped so every update averages exactly B examples.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetInstance
from .model import ModelSpec, WeightVector, gradient, init_weights, layout_for, loss, predict_proba
from .rng import derive_streams


class TrainError(ValueError):
    """Raised for invalid configurations or mismatched records."""


class TrainingDiverged(RuntimeError):
    """Raised when weights stop being finite; carries the failing step."""

    def __init__(self, step: int):
        super().__init__(f"non-finite weights after step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    total_steps: int
    checkpoint_steps: tuple[int, ...] = ()
    eval_every: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise TrainError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise TrainError("batch_size must be >= 1")
        if self.total_steps < 0:
            raise TrainError("total_steps must be >= 0")
        if self.eval_every < 0:
            raise TrainError("eval_every must be >= 0")
        steps = tuple(sorted(int(s) for s in self.checkpoint_steps))
        object.__setattr__(self, "checkpoint_steps", steps)
        if steps and (steps[0] < 0 or steps[-1] > self.total_steps):
            raise TrainError("checkpoint_steps must lie within [0, total_steps]")
        if len(set(steps)) != len(steps):
            raise TrainError("checkpoint_steps must be distinct")


@dataclass(frozen=True)
class ExperimentRecord:
    """One finished SGD run, keyed by (dataset id, master seed, init mode)."""

    dataset_id: str
    seed: int
    init_mode: str
    final_weights: WeightVector
    checkpoints: dict[int, WeightVector] = field(repr=False)
    metrics: dict[int, tuple[float, float]] = field(repr=False)  # step -> (loss, accuracy)
    config_digest: str = ""

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.dataset_id, self.seed, self.init_mode)


def local_config_digest(spec: ModelSpec, cfg: TrainConfig) -> str:
    payload = {
        "model": {"kind": spec.kind, "input_dim": spec.input_dim, "hidden_size": spec.hidden_size},
        "train": {
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "total_steps": cfg.total_steps,
            "checkpoint_steps": list(cfg.checkpoint_steps),
            "eval_every": cfg.eval_every,
        },
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def evaluate(spec: ModelSpec, w: WeightVector, dataset: DatasetInstance) -> tuple[float, float]:
    """(mean cross-entropy, binary accuracy); a tie at p = 0.5 classifies as 1."""
    p = predict_proba(spec, w, dataset.features)
    accuracy = float(np.mean((p >= 0.5) == (dataset.labels == 1)))
    return loss(spec, w, dataset.features, dataset.labels), accuracy


def run_sgd(
    spec: ModelSpec,
    dataset: DatasetInstance,
    cfg: TrainConfig,
    master_seed: int,
    init_mode: str = "vary",
    fixed_init: WeightVector | None = None,
    config_digest: str | None = None,
) -> ExperimentRecord:
    """Run exactly ``cfg.total_steps`` SGD updates and record the trajectory.

    The dataset must be normalized (certified norm bound at most 1). Batches
    are consecutive index blocks of a fresh per-epoch permutation drawn from
    the shuffle stream; the incomplete trailing batch of each epoch is
    dropped. Update rule: w <- w - lr * mean-gradient. Repeated calls with the
    same arguments produce bit-identical weights.
    """
    n = dataset.n
    if cfg.batch_size > n:
        raise TrainError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    if dataset.norm_bound > 1.0 + 1e-9:
        raise TrainError("dataset must be normalized to norm bound <= 1 before training")

    if fixed_init is not None:
        w = fixed_init.values.copy()
    else:
        w = init_weights(spec, master_seed, init_mode).values.copy()
    layout = layout_for(spec)
    shuffle = derive_streams(master_seed).shuffle
    steps_per_epoch = n // cfg.batch_size
    wanted_checkpoints = set(cfg.checkpoint_steps)

    checkpoints: dict[int, WeightVector] = {}
    metrics: dict[int, tuple[float, float]] = {}

    def snapshot(step: int, weights: np.ndarray) -> None:
        if step in wanted_checkpoints:
            checkpoints[step] = WeightVector(values=weights.copy(), layout=layout)
        if cfg.eval_every and step % cfg.eval_every == 0:
            metrics[step] = evaluate(spec, WeightVector(values=weights.copy(), layout=layout), dataset)

    snapshot(0, w)
    perm = np.empty(0, dtype=np.intp)
    for step in range(1, cfg.total_steps + 1):
        pos = (step - 1) % steps_per_epoch
        if pos == 0:
            perm = shuffle.permutation(n)
        batch = perm[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
        g = gradient(spec, WeightVector(values=w, layout=layout), dataset.features[batch], dataset.labels[batch])
        w = w - cfg.learning_rate * g.values
        if not np.isfinite(w).all():
            raise TrainingDiverged(step)
        snapshot(step, w)

    final = WeightVector(values=w, layout=layout)
    if cfg.eval_every and cfg.total_steps not in metrics:
        metrics[cfg.total_steps] = evaluate(spec, final, dataset)
    return ExperimentRecord(
        dataset_id=dataset.source_id,
        seed=master_seed,
        init_mode=init_mode,
        final_weights=final,
        checkpoints=checkpoints,
        metrics=metrics,
        config_digest=config_digest if config_digest is not None else local_config_digest(spec, cfg),
    )


def divergence_step(a: ExperimentRecord, b: ExperimentRecord) -> int | None:
    """Smallest checkpointed step at which two trajectories differ bitwise.

    Returns ``None`` when every shared checkpoint is identical. The records
    must carry the same config digest and checkpoint schedule.
    """
    if a.config_digest != b.config_digest:
        raise TrainError("records come from different configurations")
    steps_a, steps_b = sorted(a.checkpoints), sorted(b.checkpoints)
    if steps_a != steps_b:
        raise TrainError("records have mismatched checkpoint schedules")
    for step in steps_a:
        if not np.array_equal(a.checkpoints[step].values, b.checkpoints[step].values):
            return step
    return None


def recommend_convergence_step(
    metrics: dict[int, tuple[float, float]], patience: int = 3
) -> int:
    """Offline early-stopping advisor over recorded (loss, accuracy) metrics.

    Returns the step after which the loss failed to improve ``patience`` times
    in a row, or the last recorded step if that never happens. Training itself
    always runs the configured number of steps; this only recommends a T for
    future configs so grid members keep identical step counts.
    """
    if not metrics:
        raise TrainError("no recorded metrics to analyze")
    steps = sorted(metrics)
    best_step, best_loss, misses = steps[0], metrics[steps[0]][0], 0
    for step in steps[1:]:
        if metrics[step][0] < best_loss:
            best_step, best_loss, misses = step, metrics[step][0], 0
        else:
            misses += 1
            if misses >= patience:
                return best_step
    return steps[-1]
