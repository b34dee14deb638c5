"""Tiny trainable MLP with exact flatten/shard round-trips.

Dense layers with tanh activations and a softmax cross-entropy head; plain
mini-batch SGD. Everything is numpy, fully deterministic per seed, and
small enough that analytic gradients can be checked against central finite
differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import NumericalDivergence, ParameterError, ShapeMismatch

INIT_RANGE = 0.1


@dataclass
class ModelParams:
    """Dense layers as (weights, bias) pairs, applied in order."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    def copy(self) -> "ModelParams":
        return ModelParams([(w.copy(), b.copy()) for w, b in self.layers])

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    @property
    def layer_shapes(self) -> tuple[tuple[int, int], ...]:
        return tuple(w.shape for w, _ in self.layers)


def init_mlp(feature_dim: int, hidden_sizes: tuple[int, ...], class_count: int,
             seed: int) -> ModelParams:
    """Uniform [-0.1, 0.1] initialization, layer sizes from the architecture."""
    rng = np.random.default_rng(seed)
    sizes = [feature_dim, *hidden_sizes, class_count]
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        w = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(fan_in, fan_out))
        b = rng.uniform(-INIT_RANGE, INIT_RANGE, size=fan_out)
        layers.append((w, b))
    return ModelParams(layers)


def _forward(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return logits and per-layer activations (inputs to each layer)."""
    activations = [x]
    h = x
    for i, (w, b) in enumerate(params.layers):
        z = h @ w + b
        h = z if i == len(params.layers) - 1 else np.tanh(z)
        activations.append(h)
    return h, activations


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(params: ModelParams, x: np.ndarray,
                   y: np.ndarray) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Mean cross-entropy over the batch and its analytic gradient."""
    logits, activations = _forward(params, x)
    probs = _softmax(logits)
    n = x.shape[0]
    loss = float(-np.log(probs[np.arange(n), y] + 1e-300).mean())
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    for i in reversed(range(len(params.layers))):
        w, _ = params.layers[i]
        inp = activations[i]
        grads[i] = (inp.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.T) * (1.0 - activations[i] ** 2)
    return loss, grads


def mean_loss(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    logits, _ = _forward(params, x)
    probs = _softmax(logits)
    return float(-np.log(probs[np.arange(x.shape[0]), y] + 1e-300).mean())


def local_train(model: ModelParams, data: Dataset, epochs: int, lr: float,
                batch_size: int, seed: int) -> ModelParams:
    """Mini-batch SGD from a copy of the model; deterministic per seed."""
    if lr <= 0:
        raise ParameterError("lr must be positive")
    if len(data.labels) == 0:
        raise ParameterError("training data must be non-empty")
    params = model.copy()
    rng = np.random.default_rng(seed)
    n = len(data.labels)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            loss, grads = loss_and_grads(params, data.features[batch], data.labels[batch])
            if not np.isfinite(loss):
                raise NumericalDivergence(f"loss became {loss}")
            for (w, b), (gw, gb) in zip(params.layers, grads):
                w -= lr * gw
                b -= lr * gb
    return params


def evaluate(model: ModelParams, data: Dataset) -> tuple[float, float]:
    """(accuracy, mean loss); argmax ties resolve to the lowest class index."""
    if len(data.labels) == 0:
        raise ParameterError("test data must be non-empty")
    logits, _ = _forward(model, data.features)
    predictions = np.argmax(logits, axis=1)
    accuracy = float((predictions == data.labels).mean())
    return accuracy, mean_loss(model, data.features, data.labels)


def sign_flip_attack(update: ModelParams) -> ModelParams:
    """Negate every parameter of a trained update."""
    return ModelParams([(-w, -b) for w, b in update.layers])


# --- flatten / shard ---------------------------------------------------------

@dataclass
class ShardedModel:
    """Equal-length slices of the flat parameter vector, zero-padded at the end."""

    shards: list[np.ndarray]
    original_length: int
    pad_length: int
    layer_shapes: tuple[tuple[int, int], ...]

    @property
    def shard_length(self) -> int:
        return len(self.shards[0]) if self.shards else 0


def flatten(model: ModelParams) -> np.ndarray:
    """Layer 0 weights row-major, layer 0 bias, layer 1 weights, ..."""
    pieces = []
    for w, b in model.layers:
        pieces.append(w.reshape(-1))
        pieces.append(b.reshape(-1))
    return np.concatenate(pieces)


def unflatten_vector(flat: np.ndarray, layer_shapes: tuple[tuple[int, int], ...]) -> ModelParams:
    layers = []
    offset = 0
    for fan_in, fan_out in layer_shapes:
        w = flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out).copy()
        offset += fan_in * fan_out
        b = flat[offset:offset + fan_out].copy()
        offset += fan_out
        layers.append((w, b))
    if offset != len(flat):
        raise ShapeMismatch(f"flat vector has {len(flat)} entries, shapes need {offset}")
    return ModelParams(layers)


def flatten_shard(model: ModelParams, shard_count: int) -> ShardedModel:
    """Split the flat vector into shard_count equal slices, padding the tail."""
    if shard_count < 1:
        raise ParameterError("shard_count must be >= 1")
    flat = flatten(model)
    total = len(flat)
    if shard_count > total:
        raise ParameterError(f"shard_count {shard_count} exceeds parameter count {total}")
    shard_len = -(-total // shard_count)
    pad = shard_len * shard_count - total
    padded = np.concatenate([flat, np.zeros(pad)])
    shards = [padded[i * shard_len:(i + 1) * shard_len].copy() for i in range(shard_count)]
    return ShardedModel(shards, total, pad, model.layer_shapes)


def unflatten(sharded: ShardedModel) -> ModelParams:
    """Exact inverse of flatten_shard; rejects inconsistent metadata."""
    if not sharded.shards:
        raise ShapeMismatch("shard list is empty")
    lengths = {len(s) for s in sharded.shards}
    if len(lengths) != 1:
        raise ShapeMismatch(f"unequal shard lengths {sorted(lengths)}")
    flat = np.concatenate(sharded.shards)
    if len(flat) != sharded.original_length + sharded.pad_length:
        raise ShapeMismatch("shard lengths disagree with original_length + pad_length")
    flat = flat[:sharded.original_length]
    return unflatten_vector(flat, sharded.layer_shapes)


def model_bytes(model: ModelParams) -> bytes:
    """Canonical bytes: shape header then float64 little-endian flat values."""
    header = struct.pack("<I", len(model.layers))
    for fan_in, fan_out in model.layer_shapes:
        header += struct.pack("<II", fan_in, fan_out)
    return header + flatten(model).astype("<f8").tobytes()
