"""Dense ReLU/softmax classifier operating on one flat float64 parameter vector.

Federation, attacks, and defenses all treat a model as a flat vector, so the
layout here is the single source of truth: per layer, the (n_in, n_out) weight
matrix in C order followed by the n_out bias entries.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .common import check_vector, derive_rng
from .data import Dataset

_EVAL_CHUNK = 4096


@dataclass(frozen=True)
class ModelSpec:
    """Layer widths: (input dim, hidden dims ..., class count)."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("need at least 2 layers (input and output)")
        if any(s < 1 for s in sizes):
            raise ValueError("all layer sizes must be >= 1")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        return sum(
            (n_in + 1) * n_out
            for n_in, n_out in zip(self.layer_sizes, self.layer_sizes[1:])
        )


@dataclass(frozen=True)
class TrainSpec:
    """Local SGD hyperparameters; seed drives the shuffling."""

    learning_rate: float = 0.1
    local_epochs: int = 2
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@lru_cache(maxsize=None)
def _layout(layer_sizes: tuple[int, ...]):
    """(w_slice, b_slice, (n_in, n_out)) per layer within the flat vector."""
    out = []
    offset = 0
    for n_in, n_out in zip(layer_sizes, layer_sizes[1:]):
        w = slice(offset, offset + n_in * n_out)
        offset += n_in * n_out
        b = slice(offset, offset + n_out)
        offset += n_out
        out.append((w, b, (n_in, n_out)))
    return tuple(out)


def _views(params: np.ndarray, spec: ModelSpec):
    return [
        (params[w].reshape(shape), params[b])
        for w, b, shape in _layout(spec.layer_sizes)
    ]


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Uniform [-a, a] weights with a = sqrt(6/(n_in+n_out)) per layer, zero biases."""
    rng = derive_rng(seed)
    params = np.zeros(spec.param_count)
    for w, _, (n_in, n_out) in _layout(spec.layer_sizes):
        a = np.sqrt(6.0 / (n_in + n_out))
        params[w] = rng.uniform(-a, a, size=n_in * n_out)
    return params


def _check_features(spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != spec.input_dim:
        raise ValueError(
            f"features shape {feats.shape} incompatible with input dim {spec.input_dim}"
        )
    return feats


def _forward(params: np.ndarray, spec: ModelSpec, features: np.ndarray):
    """Returns (per-layer activations, final logits)."""
    layers = _views(params, spec)
    acts = [features]
    for weights, bias in layers[:-1]:
        acts.append(np.maximum(acts[-1] @ weights + bias, 0.0))
    w_out, b_out = layers[-1]
    return acts, acts[-1] @ w_out + b_out


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def predict(params: np.ndarray, spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    """Predicted class per row; argmax ties resolve to the lowest class index."""
    _, logits = _forward(check_vector(params, spec.param_count), spec, _check_features(spec, features))
    return np.argmax(logits, axis=1)


def loss_and_grad(
    params: np.ndarray, spec: ModelSpec, features: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy over the batch and its flat gradient."""
    params = check_vector(params, spec.param_count)
    feats = _check_features(spec, features)
    labs = np.asarray(labels, dtype=np.int64)
    batch = feats.shape[0]
    if batch == 0:
        raise ValueError("batch must be non-empty")
    if labs.shape != (batch,):
        raise ValueError("labels must be 1-D and match the batch size")

    acts, logits = _forward(params, spec, feats)
    log_probs = _log_softmax(logits)
    loss = -log_probs[np.arange(batch), labs].mean()

    d_logits = np.exp(log_probs)
    d_logits[np.arange(batch), labs] -= 1.0
    d_logits /= batch

    grad = np.zeros_like(params)
    layers = _layout(spec.layer_sizes)
    delta = d_logits
    for i in range(len(layers) - 1, -1, -1):
        w_slice, b_slice, shape = layers[i]
        grad[w_slice] = (acts[i].T @ delta).ravel()
        grad[b_slice] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[w_slice].reshape(shape).T) * (acts[i] > 0.0)
    return float(loss), grad


def sgd_train(params: np.ndarray, spec: ModelSpec, shard: Dataset, ts: TrainSpec) -> np.ndarray:
    """Mini-batch SGD for ts.local_epochs epochs; shuffling seeded by ts.seed.

    Pure: returns new parameters, the input vector is left untouched.
    """
    if len(shard) == 0:
        raise ValueError("training shard must be non-empty")
    params = check_vector(params, spec.param_count).copy()
    rng = derive_rng(ts.seed)
    n = len(shard)
    for _ in range(ts.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, ts.batch_size):
            idx = order[start : start + ts.batch_size]
            _, grad = loss_and_grad(params, spec, shard.features[idx], shard.labels[idx])
            params -= ts.learning_rate * grad
    return params


def evaluate(params: np.ndarray, spec: ModelSpec, data: Dataset) -> tuple[float, np.ndarray]:
    """Accuracy and the K x K confusion matrix (rows: true class, cols: predicted)."""
    if len(data) == 0:
        raise ValueError("evaluation data must be non-empty")
    k = spec.class_count
    confusion = np.zeros((k, k), dtype=np.int64)
    for start in range(0, len(data), _EVAL_CHUNK):
        stop = start + _EVAL_CHUNK
        preds = predict(params, spec, data.features[start:stop])
        np.add.at(confusion, (data.labels[start:stop], preds), 1)
    accuracy = confusion.trace() / len(data)
    return float(accuracy), confusion


def accuracy_excluding_class(confusion: np.ndarray, excluded: int) -> float | None:
    """Accuracy recomputed with the excluded true-class row removed."""
    keep = np.ones(confusion.shape[0], dtype=bool)
    keep[excluded] = False
    total = confusion[keep].sum()
    if total == 0:
        return None
    correct = confusion.diagonal()[keep].sum()
    return float(correct / total)
