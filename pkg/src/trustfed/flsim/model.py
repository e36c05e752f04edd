"""Desk-scale classifier: softmax regression with an optional ReLU hidden layer.

Parameters travel as one flat vector so aggregation is plain vector math.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..datagen import ClientDataset
from ..errors import EmptyDataset, ShapeMismatch


@dataclass(frozen=True)
class ModelShape:
    inputs: int
    classes: int
    hidden: int = 0

    @property
    def size(self) -> int:
        if self.hidden:
            return self.inputs * self.hidden + self.hidden + self.hidden * self.classes + self.classes
        return self.inputs * self.classes + self.classes


@dataclass(frozen=True)
class ModelParams:
    weights: np.ndarray
    shape: ModelShape

    def __post_init__(self):
        if self.weights.shape != (self.shape.size,):
            raise ShapeMismatch(f"expected {self.shape.size} weights, got {self.weights.shape}")

    def copy(self) -> "ModelParams":
        return ModelParams(self.weights.copy(), self.shape)


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 0.5
    local_epochs: int = 3
    batch_size: int = 32
    l2: float = 1e-4


def init_params(shape: ModelShape, seed: int = 0) -> ModelParams:
    if not shape.hidden:
        return ModelParams(np.zeros(shape.size), shape)
    g = rngmod.stream(seed, "model")
    w1 = g.normal(0, np.sqrt(2.0 / shape.inputs), size=shape.inputs * shape.hidden)
    w2 = g.normal(0, np.sqrt(1.0 / shape.hidden), size=shape.hidden * shape.classes)
    return ModelParams(np.concatenate([w1, np.zeros(shape.hidden), w2, np.zeros(shape.classes)]), shape)


def _unpack(w: np.ndarray, s: ModelShape):
    if not s.hidden:
        W = w[: s.inputs * s.classes].reshape(s.inputs, s.classes)
        return W, w[s.inputs * s.classes:]
    o = 0
    W1 = w[o:o + s.inputs * s.hidden].reshape(s.inputs, s.hidden); o += s.inputs * s.hidden
    b1 = w[o:o + s.hidden]; o += s.hidden
    W2 = w[o:o + s.hidden * s.classes].reshape(s.hidden, s.classes); o += s.hidden * s.classes
    return W1, b1, W2, w[o:]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(params: ModelParams, X: np.ndarray) -> np.ndarray:
    s = params.shape
    if not s.hidden:
        W, b = _unpack(params.weights, s)
        return _softmax(X @ W + b)
    W1, b1, W2, b2 = _unpack(params.weights, s)
    return _softmax(np.maximum(X @ W1 + b1, 0.0) @ W2 + b2)


def accuracy(params: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    return float((predict_proba(params, X).argmax(axis=1) == y).mean())


def loss_and_grad(weights: np.ndarray, shape: ModelShape, X: np.ndarray, y: np.ndarray,
                  l2: float = 0.0) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * ||w||^2`` and its analytic gradient."""
    n = len(y)
    onehot = np.zeros((n, shape.classes))
    onehot[np.arange(n), y] = 1.0
    if not shape.hidden:
        W, b = _unpack(weights, shape)
        p = _softmax(X @ W + b)
        d = (p - onehot) / n
        grad = np.concatenate([(X.T @ d).ravel(), d.sum(axis=0)])
    else:
        W1, b1, W2, b2 = _unpack(weights, shape)
        pre = X @ W1 + b1
        h = np.maximum(pre, 0.0)
        p = _softmax(h @ W2 + b2)
        d = (p - onehot) / n
        dh = (d @ W2.T) * (pre > 0)
        grad = np.concatenate([(X.T @ dh).ravel(), dh.sum(axis=0), (h.T @ d).ravel(), d.sum(axis=0)])
    loss = float(-np.log(np.clip(p[np.arange(n), y], 1e-300, None)).mean()) + 0.5 * l2 * float(weights @ weights)
    return loss, grad + l2 * weights


# ---- feature encoding ------------------------------------------------------

def feature_dim(n_areas: int) -> int:
    return n_areas + 7 + 2 + 2


def encode(ds: ClientDataset, n_areas: int) -> np.ndarray:
    """Area and weekday one-hots, cyclic hour, scaled log-duration and frequency."""
    n = len(ds)
    X = np.zeros((n, feature_dim(n_areas)))
    X[np.arange(n), ds.area] = 1.0
    X[np.arange(n), n_areas + ds.day_of_week] = 1.0
    ang = 2 * np.pi * ds.hour / 24.0
    X[:, n_areas + 7] = np.sin(ang)
    X[:, n_areas + 8] = np.cos(ang)
    X[:, n_areas + 9] = (np.log(np.maximum(ds.duration, 1e-3)) - 3.5) / 1.2
    X[:, n_areas + 10] = (ds.frequency - 3.5) / 2.0
    return X


def split_indices(n: int, seed: int, test_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then the first 80% train and the rest test."""
    perm = rngmod.stream(seed, "split").permutation(n)
    cut = n - int(round(test_fraction * n)) if n > 1 else n
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def sgd(params: ModelParams, X: np.ndarray, y: np.ndarray, hyper: TrainHyper,
        g: np.random.Generator) -> ModelParams:
    w = params.weights.copy()
    n = len(y)
    for _ in range(hyper.local_epochs):
        perm = g.permutation(n)
        for s in range(0, n, hyper.batch_size):
            b = perm[s:s + hyper.batch_size]
            _, grad = loss_and_grad(w, params.shape, X[b], y[b], hyper.l2)
            w -= hyper.learning_rate * grad
    return ModelParams(w, params.shape)


@dataclass(frozen=True)
class LocalData:
    """Encoded train / held-out split of one client's records."""

    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray

    def replace_train(self, X: np.ndarray, y: np.ndarray) -> "LocalData":
        return LocalData(X, y, self.X_test, self.y_test)


def prepare_local_data(dataset: ClientDataset, n_areas: int, split_seed: int) -> LocalData:
    if len(dataset) == 0:
        raise EmptyDataset(f"{dataset.owner} has no records")
    X = encode(dataset, n_areas)
    y = dataset.location
    tr, te = split_indices(len(dataset), split_seed)
    return LocalData(X[tr], y[tr], X[te], y[te])


def fit_local(data: LocalData, global_params: ModelParams, hyper: TrainHyper,
              seed: int) -> tuple[ModelParams, float, int]:
    if len(data.y_train) == 0 or hyper.local_epochs == 0:
        params = global_params.copy()
    else:
        params = sgd(global_params, data.X_train, data.y_train, hyper, rngmod.stream(seed, "train"))
    return params, accuracy(params, data.X_test, data.y_test), int(len(data.y_train))


def local_train(dataset: ClientDataset, global_params: ModelParams, hyper: TrainHyper, seed: int,
                n_areas: int = 6, split_seed: int | None = None) -> tuple[ModelParams, float, int]:
    """Mini-batch SGD from ``global_params`` on an 80% split; accuracy on the held-out 20%.

    Returns ``(params, held-out accuracy, training sample count)``.
    """
    data = prepare_local_data(dataset, n_areas, seed if split_seed is None else split_seed)
    return fit_local(data, global_params, hyper, seed)


def aggregate_fedavg(updates) -> ModelParams:
    """Sample-count weighted coordinate mean of ``(params, sample_count)`` pairs."""
    updates = list(updates)
    if not updates:
        raise ShapeMismatch("no updates to aggregate")
    shape = updates[0][0].shape
    if any(p.shape != shape for p, _ in updates):
        raise ShapeMismatch("updates have different shapes")
    counts = np.asarray([c for _, c in updates], dtype=float)
    if counts.sum() <= 0:
        counts = np.ones_like(counts)
    W = np.stack([p.weights for p, _ in updates])
    return ModelParams((counts / counts.sum()) @ W, shape)
