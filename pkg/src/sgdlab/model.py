"""Logistic regression and one-hidden-layer MLP as pure weight-vector functions.

Weights live in a single flat float64 vector with a fixed layout per model
kind, which keeps weight distances, persistence, and noise addition
unambiguous. All arithmetic is 64-bit; forward/loss/gradient are pure
functions of (spec, weights, batch).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .rng import FIXED_INIT_SEED, derive_streams

LOGREG = "logreg"
MLP = "mlp"

# Probabilities are clamped to [CLAMP, 1 - CLAMP] inside the loss only, so a
# confidently wrong prediction yields a large finite loss without perturbing
# gradients.
CLAMP = 1e-12

_WEIGHT_MAGIC = b"SGDW"
_WEIGHT_VERSION = 1


class ModelError(ValueError):
    """Raised for invalid specs, layouts, or batch shapes."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    hidden_size: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (LOGREG, MLP):
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ModelError("input_dim must be >= 1")
        if self.kind == MLP and (self.hidden_size is None or self.hidden_size < 1):
            raise ModelError("mlp requires a positive hidden_size")
        if self.kind == LOGREG and self.hidden_size is not None:
            raise ModelError("logreg takes no hidden_size")


Layout = tuple[tuple[str, tuple[int, ...], int], ...]


def layout_for(spec: ModelSpec) -> Layout:
    """Fixed flattening order: logreg = [weights, bias]; mlp = [W, b, v, c]."""
    d = spec.input_dim
    if spec.kind == LOGREG:
        return (("weights", (d,), 0), ("bias", (1,), d))
    h = spec.hidden_size
    assert h is not None
    return (
        ("hidden_weights", (d, h), 0),
        ("hidden_bias", (h,), d * h),
        ("output_weights", (h,), d * h + h),
        ("output_bias", (1,), d * h + 2 * h),
    )


def param_count(spec: ModelSpec) -> int:
    name, shape, offset = layout_for(spec)[-1]
    return offset + math.prod(shape)


@dataclass(frozen=True)
class WeightVector:
    """Flat parameter vector plus the (name, shape, offset) layout descriptor."""

    values: np.ndarray  # (P,) float64, read-only
    layout: Layout

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        expected = self.layout[-1][2] + math.prod(self.layout[-1][1])
        if v.shape != (expected,):
            raise ModelError(f"expected {expected} parameters, got shape {v.shape}")

    @property
    def size(self) -> int:
        return self.values.shape[0]


def flatten(spec: ModelSpec, tensors: dict[str, np.ndarray]) -> WeightVector:
    layout = layout_for(spec)
    flat = np.empty(param_count(spec), dtype=np.float64)
    for name, shape, offset in layout:
        flat[offset : offset + math.prod(shape)] = np.asarray(tensors[name], dtype=np.float64).reshape(-1)
    return WeightVector(values=flat, layout=layout)


def unflatten(w: WeightVector) -> dict[str, np.ndarray]:
    out = {}
    for name, shape, offset in w.layout:
        out[name] = w.values[offset : offset + math.prod(shape)].reshape(shape)
    return out


@dataclass(frozen=True)
class LossConstants:
    """Lipschitz and smoothness constants of the per-example loss, when known."""

    lipschitz: float | None
    smoothness: float | None


def loss_constants(
    spec: ModelSpec, norm_bound: float, bias_augmented_smoothness: bool = True
) -> LossConstants:
    """Constants for logistic regression with a bias term; none for the MLP.

    The Lipschitz constant is sup ||(x, 1)|| = sqrt(norm_bound^2 + 1), which is
    sqrt(2) when rows are normalized to norm at most 1. The smoothness constant
    is sup ||x||^2; whether the bias coordinate should augment it is ambiguous,
    so the flag selects between norm_bound^2 + 1 (default) and norm_bound^2.
    It is reported for reference and never used in any computation here.
    """
    if spec.kind != LOGREG:
        return LossConstants(lipschitz=None, smoothness=None)
    sq = norm_bound * norm_bound
    return LossConstants(
        lipschitz=math.sqrt(sq + 1.0),
        smoothness=sq + 1.0 if bias_augmented_smoothness else sq,
    )


def init_weights(spec: ModelSpec, seed: int, mode: str) -> WeightVector:
    """Glorot-uniform weight matrices, zero biases.

    Each matrix is drawn uniform on +/- sqrt(6 / (fan_in + fan_out)). With
    ``mode="vary"`` the initialisation stream derives from the run seed; with
    ``mode="fixed"`` it derives from the module-wide constant seed, so every
    run shares one initial model. Matrices are drawn in layout order.
    """
    if mode not in ("fixed", "vary"):
        raise ModelError(f"init mode must be 'fixed' or 'vary', got {mode!r}")
    gen = derive_streams(FIXED_INIT_SEED if mode == "fixed" else seed).init
    d = spec.input_dim
    if spec.kind == LOGREG:
        lim = math.sqrt(6.0 / (d + 1))
        return flatten(spec, {"weights": gen.uniform(-lim, lim, d), "bias": np.zeros(1)})
    h = spec.hidden_size
    assert h is not None
    lim_w = math.sqrt(6.0 / (d + h))
    lim_v = math.sqrt(6.0 / (h + 1))
    return flatten(
        spec,
        {
            "hidden_weights": gen.uniform(-lim_w, lim_w, (d, h)),
            "hidden_bias": np.zeros(h),
            "output_weights": gen.uniform(-lim_v, lim_v, h),
            "output_bias": np.zeros(1),
        },
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Evaluated piecewise to avoid overflow either side.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_batch(spec: ModelSpec, features: np.ndarray, labels: np.ndarray | None) -> None:
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise ModelError(
            f"batch features must have shape (B, {spec.input_dim}), got {features.shape}"
        )
    if features.shape[0] == 0:
        raise ModelError("batch must be nonempty")
    if labels is not None and labels.shape != (features.shape[0],):
        raise ModelError("labels must be one per batch row")


def predict_proba(spec: ModelSpec, w: WeightVector, features: np.ndarray) -> np.ndarray:
    """P(y = 1 | x) for each row of ``features``."""
    features = np.asarray(features, dtype=np.float64)
    _check_batch(spec, features, None)
    t = unflatten(w)
    if spec.kind == LOGREG:
        return _sigmoid(features @ t["weights"] + t["bias"][0])
    hidden = np.maximum(features @ t["hidden_weights"] + t["hidden_bias"], 0.0)
    return _sigmoid(hidden @ t["output_weights"] + t["output_bias"][0])


def forward(spec: ModelSpec, w: WeightVector, x: np.ndarray) -> float:
    """Predicted probability for a single feature row."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.input_dim,):
        raise ModelError(f"expected a feature row of length {spec.input_dim}, got {x.shape}")
    return float(predict_proba(spec, w, x[None, :])[0])


def loss(spec: ModelSpec, w: WeightVector, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy over the batch, with probability clamping."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    _check_batch(spec, features, labels)
    p = np.clip(predict_proba(spec, w, features), CLAMP, 1.0 - CLAMP)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


def gradient(spec: ModelSpec, w: WeightVector, features: np.ndarray, labels: np.ndarray) -> WeightVector:
    """Exact gradient of the mean cross-entropy over the batch."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    _check_batch(spec, features, labels)
    t = unflatten(w)
    b = features.shape[0]
    if spec.kind == LOGREG:
        p = _sigmoid(features @ t["weights"] + t["bias"][0])
        residual = (p - labels) / b
        return flatten(
            spec,
            {"weights": features.T @ residual, "bias": np.array([residual.sum()])},
        )
    pre = features @ t["hidden_weights"] + t["hidden_bias"]
    hidden = np.maximum(pre, 0.0)
    p = _sigmoid(hidden @ t["output_weights"] + t["output_bias"][0])
    residual = (p - labels) / b
    d_hidden = np.outer(residual, t["output_weights"]) * (pre > 0.0)
    return flatten(
        spec,
        {
            "hidden_weights": features.T @ d_hidden,
            "hidden_bias": d_hidden.sum(axis=0),
            "output_weights": hidden.T @ residual,
            "output_bias": np.array([residual.sum()]),
        },
    )


def save_weights(path: str, w: WeightVector) -> None:
    """Write magic "SGDW", a version byte, LE uint32 count, then LE float64s."""
    with open(path, "wb") as fh:
        fh.write(_WEIGHT_MAGIC)
        fh.write(bytes([_WEIGHT_VERSION]))
        fh.write(struct.pack("<I", w.size))
        fh.write(w.values.astype("<f8").tobytes())


def load_weight_values(path: str) -> np.ndarray:
    """Read a weight file back into a flat float64 vector (bit-exact)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = 4 + 1 + 4
    if len(blob) < header or blob[:4] != _WEIGHT_MAGIC:
        raise ModelError(f"{path}: not a weight file (bad magic)")
    if blob[4] != _WEIGHT_VERSION:
        raise ModelError(f"{path}: unsupported weight file version {blob[4]}")
    (count,) = struct.unpack("<I", blob[5:9])
    if len(blob) != header + 8 * count:
        raise ModelError(f"{path}: truncated or oversized payload for count {count}")
    return np.frombuffer(blob[header:], dtype="<f8").astype(np.float64)


def load_weights(path: str, spec: ModelSpec) -> WeightVector:
    values = load_weight_values(path)
    if values.shape[0] != param_count(spec):
        raise ModelError(
            f"{path}: file has {values.shape[0]} parameters, spec needs {param_count(spec)}"
        )
    return WeightVector(values=values, layout=layout_for(spec))
