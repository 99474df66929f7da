"""Small classifiers used by the classifier two-sample tests.

The multilayer perceptron mirrors common library defaults: one hidden
layer of 100 rectified units, a two-unit softmax output trained on
cross-entropy with Adam (learning rate 1e-3), mini-batches of
``min(200, n)`` rows and 200 epochs, no regularization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "MlpModel",
    "AdamState",
    "mlp_init",
    "mlp_loss_and_grads",
    "mlp_fit",
    "mlp_accuracy",
    "knn_predict",
    "knn_accuracy",
]

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    classes: np.ndarray

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        hidden = np.maximum(X @ self.W1 + self.b1, 0.0)
        return hidden @ self.W2 + self.b2

    def predict(self, X) -> np.ndarray:
        # argmax keeps the first maximum, i.e. the lower class label on ties
        return self.classes[np.argmax(self.scores(X), axis=1)]


class AdamState:
    """First/second moment accumulators for a dict of parameter arrays."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place."""
        self.step_count += 1
        t = self.step_count
        lr_t = self.lr * np.sqrt(1.0 - self.beta2 ** t) / (1.0 - self.beta1 ** t)
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= lr_t * m / (np.sqrt(v) + self.eps)


def _check_labeled(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X, y


def mlp_init(dim: int, classes, hidden: int = 100, seed: int = 0) -> MlpModel:
    """Glorot-uniform initialization of weights and biases."""
    rng = np.random.default_rng(seed)
    classes = np.asarray(classes)

    def glorot(fan_in, fan_out, shape):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)

    n_out = classes.size
    return MlpModel(
        W1=glorot(dim, hidden, (dim, hidden)),
        b1=glorot(dim, hidden, (hidden,)),
        W2=glorot(hidden, n_out, (hidden, n_out)),
        b2=glorot(hidden, n_out, (n_out,)),
        classes=classes,
    )


def mlp_loss_and_grads(params: dict, X: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy and its gradient for class-index ``targets``."""
    W1, b1, W2, b2 = (params[name] for name in PARAM_NAMES)
    n = X.shape[0]
    pre = X @ W1 + b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ W2 + b2
    logits = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(logits).sum(axis=1, keepdims=True))
    log_prob = logits - log_norm
    rows = np.arange(n)
    loss = -float(log_prob[rows, targets].mean())

    d_logits = np.exp(log_prob)
    d_logits[rows, targets] -= 1.0
    d_logits /= n
    d_hidden = d_logits @ W2.T
    d_hidden[pre <= 0] = 0.0
    grads = {
        "W1": X.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
        "W2": hidden.T @ d_logits,
        "b2": d_logits.sum(axis=0),
    }
    return loss, grads


def mlp_fit(X, y, epochs: int = 200, seed: int = 0, hidden: int = 100,
            batch_size: int = 200, lr: float = 1e-3) -> MlpModel:
    """Train a one-hidden-layer perceptron with Adam.

    Parameters
    ----------
    X : array_like, shape (n, d)
        Training features.
    y : array_like, shape (n,)
        Labels; exactly two distinct values are required.
    epochs : int
        Full passes over the data, each with a freshly shuffled batch order.
    seed : int
        Seeds both the initialization and the batch shuffling.

    Returns
    -------
    MlpModel
    """
    X, y = _check_labeled(X, y)
    if X.shape[0] < 2:
        raise ValueError("mlp_fit needs at least two rows")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("mlp_fit needs both classes present, got a single class")
    if classes.size > 2:
        raise ValueError(f"mlp_fit is binary, got {classes.size} classes")
    targets = np.searchsorted(classes, y)
    model = mlp_init(X.shape[1], classes, hidden=hidden, seed=seed)
    params = model.params()
    adam = AdamState(params, lr=lr)
    rng = np.random.default_rng([seed, 1])
    n = X.shape[0]
    bs = min(batch_size, n)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            batch = order[start:start + bs]
            _, grads = mlp_loss_and_grads(params, X[batch], targets[batch])
            adam.step(params, grads)
    return model


def mlp_accuracy(model: MlpModel, X, y) -> float:
    X, y = _check_labeled(X, y)
    if X.shape[0] == 0:
        raise ValueError("accuracy needs a non-empty test set")
    if X.shape[1] != model.W1.shape[0]:
        raise ValueError(f"test data has {X.shape[1]} features, model expects {model.W1.shape[0]}")
    return float(np.mean(model.predict(X) == y))


def knn_predict(train_X, train_y, test_X, k: int = 5) -> np.ndarray:
    """Majority vote among the ``k`` nearest training rows.

    Distance ties go to the lower training row index, vote ties to the
    lower label.
    """
    train_X, train_y = _check_labeled(train_X, train_y)
    test_X = np.asarray(test_X, dtype=float)
    if test_X.ndim == 1:
        test_X = test_X[:, None]
    if k < 1 or k > train_X.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {train_X.shape[0]}]")
    classes, codes = np.unique(train_y, return_inverse=True)
    d = cdist(test_X, train_X, "sqeuclidean")
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    votes = np.zeros((test_X.shape[0], classes.size), dtype=int)
    for j in range(k):
        np.add.at(votes, (np.arange(test_X.shape[0]), codes[nearest[:, j]]), 1)
    return classes[np.argmax(votes, axis=1)]


def knn_accuracy(train_X, train_y, test_X, test_y, k: int = 5) -> float:
    test_X, test_y = _check_labeled(test_X, test_y)
    if test_X.shape[0] == 0:
        raise ValueError("accuracy needs a non-empty test set")
    return float(np.mean(knn_predict(train_X, train_y, test_X, k) == test_y))
