"""One-hidden-layer ReLU MLP with softmax cross-entropy, on flat parameter vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils import check_random_state
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import EmptyDataset, ShapeError


@dataclass(frozen=True)
class MLPShape:
    n_features: int
    n_hidden: int
    n_classes: int

    @property
    def sizes(self):
        d, h, b = self.n_features, self.n_hidden, self.n_classes
        return (d * h, h, h * b, b)

    @property
    def n_params(self) -> int:
        return sum(self.sizes)

    def unpack(self, vector: np.ndarray):
        """Views ``(W1, b1, W2, b2)`` into ``vector``."""
        if vector.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {vector.shape}")
        d, h, b = self.n_features, self.n_hidden, self.n_classes
        s = np.cumsum((0,) + self.sizes)
        return (vector[s[0]:s[1]].reshape(d, h), vector[s[1]:s[2]],
                vector[s[2]:s[3]].reshape(h, b), vector[s[3]:s[4]])


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector plus the layer shapes it encodes."""

    vector: np.ndarray
    shape: MLPShape

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.shape != (self.shape.n_params,):
            raise ShapeError(f"expected {self.shape.n_params} parameters, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "vector", vec)

    def replace_vector(self, vector) -> "ModelParams":
        return ModelParams(vector, self.shape)


def init_params(shape: MLPShape, rng: np.random.Generator) -> ModelParams:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases of each layer."""
    parts = []
    for fan_in, size in ((shape.n_features, shape.sizes[0]), (shape.n_features, shape.sizes[1]),
                         (shape.n_hidden, shape.sizes[2]), (shape.n_hidden, shape.sizes[3])):
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size))
    return ModelParams(np.concatenate(parts), shape)


def logits(vector: np.ndarray, shape: MLPShape, X: np.ndarray) -> np.ndarray:
    W1, b1, W2, b2 = shape.unpack(vector)
    return np.maximum(X @ W1 + b1, 0.0) @ W2 + b2


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(vector: np.ndarray, shape: MLPShape, X: np.ndarray, y: np.ndarray,
                  weight_decay: float = 0.0):
    """Mean cross-entropy plus ``weight_decay / 2 * ||theta||^2``, and its gradient."""
    if len(y) == 0:
        raise EmptyDataset("no samples")
    W1, b1, W2, b2 = shape.unpack(vector)
    pre = X @ W1 + b1
    hidden = np.maximum(pre, 0.0)
    logp = _log_softmax(hidden @ W2 + b2)
    n = len(y)
    loss = -logp[np.arange(n), y].mean() + 0.5 * weight_decay * float(vector @ vector)

    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    gW2 = hidden.T @ dz
    gb2 = dz.sum(axis=0)
    dpre = (dz @ W2.T) * (pre > 0)
    gW1 = X.T @ dpre
    gb1 = dpre.sum(axis=0)
    grad = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2]) + weight_decay * vector
    return loss, grad


def cross_entropy(vector: np.ndarray, shape: MLPShape, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise EmptyDataset("no samples")
    logp = _log_softmax(logits(vector, shape, X))
    return float(-logp[np.arange(len(y)), y].mean())


def accuracy(vector: np.ndarray, shape: MLPShape, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise EmptyDataset("no samples")
    return float(np.mean(np.argmax(logits(vector, shape, X), axis=1) == y))


def sgd(vector: np.ndarray, shape: MLPShape, X: np.ndarray, y: np.ndarray, steps: int,
        learning_rate: float, batch_size: int, weight_decay: float,
        rng: np.random.Generator) -> np.ndarray:
    """``steps`` minibatch SGD steps; batches walk fresh permutations epoch by epoch."""
    if len(y) == 0:
        raise EmptyDataset("no samples")
    vector = vector.copy()
    n = len(y)
    batch = min(batch_size, n)
    order = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        if pos + batch > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + batch]
        pos += batch
        _, grad = loss_and_grad(vector, shape, X[idx], y[idx], weight_decay)
        vector -= learning_rate * grad
    return vector


class SoftmaxMLP(ClassifierMixin, BaseEstimator):
    """Centralised counterpart of the federated model, for baselines and checks."""

    def __init__(self, n_hidden=64, learning_rate=0.01, batch_size=50, epochs=5,
                 weight_decay=5e-4, random_state=None):
        self.n_hidden = n_hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        codes = np.searchsorted(self.classes_, y)
        seed = check_random_state(self.random_state).randint(0, 2**31 - 1)
        rng = np.random.default_rng(seed)
        shape = MLPShape(X.shape[1], self.n_hidden, len(self.classes_))
        params = init_params(shape, rng)
        steps = self.epochs * int(np.ceil(len(y) / self.batch_size))
        vector = sgd(params.vector, shape, X, codes, steps, self.learning_rate,
                     self.batch_size, self.weight_decay, rng)
        self.params_ = params.replace_vector(vector)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return logits(self.params_.vector, self.params_.shape, X)

    def predict_proba(self, X):
        return np.exp(_log_softmax(self.decision_function(X)))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
