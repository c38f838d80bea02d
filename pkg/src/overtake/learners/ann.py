"""One-hidden-layer perceptron for binary classification.

ReLU hidden units, logistic output, mean binary cross-entropy plus a small L2
penalty on the weights, full-batch Adam. Training stops when the best loss
has improved by less than ``plateau_tol`` (relative) over the last
``plateau_window`` iterations, or at ``max_iterations``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass
class MLPParams:
    W1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (h,)
    b2: float

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2, [self.b2]])

    @classmethod
    def unflat(cls, v: np.ndarray, d: int, h: int) -> "MLPParams":
        i = d * h
        return cls(v[:i].reshape(d, h).copy(), v[i:i + h].copy(), v[i + h:i + 2 * h].copy(), float(v[-1]))

    def to_json(self) -> dict:
        return {"W1": self.W1.tolist(), "b1": self.b1.tolist(), "W2": self.W2.tolist(), "b2": self.b2}

    @classmethod
    def from_json(cls, doc: dict) -> "MLPParams":
        return cls(np.array(doc["W1"], float), np.array(doc["b1"], float), np.array(doc["W2"], float),
                   float(doc["b2"]))


def init_params(d: int, h: int, rng: np.random.Generator) -> MLPParams:
    lim1 = np.sqrt(6.0 / (d + h))
    lim2 = np.sqrt(6.0 / (h + 1))
    return MLPParams(rng.uniform(-lim1, lim1, (d, h)), np.zeros(h), rng.uniform(-lim2, lim2, h), 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(p: MLPParams, X: np.ndarray) -> np.ndarray:
    """Logit of the positive class."""
    return np.maximum(X @ p.W1 + p.b1, 0.0) @ p.W2 + p.b2


def predict_proba(p: MLPParams, X: np.ndarray) -> np.ndarray:
    return _sigmoid(forward(p, X))


def loss_and_grad(p: MLPParams, X: np.ndarray, y: np.ndarray, alpha: float = 0.0):
    """Mean cross-entropy + ``0.5 * alpha * ||W||^2 / n`` and its gradient."""
    n = len(y)
    z1 = X @ p.W1 + p.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ p.W2 + p.b2
    # log(1 + exp(z)) - y z, stable for both signs
    loss = np.mean(np.logaddexp(0.0, z2) - y * z2)
    loss += 0.5 * alpha * (np.sum(p.W1 ** 2) + np.sum(p.W2 ** 2)) / n
    dz2 = (_sigmoid(z2) - y) / n
    gW2 = a1.T @ dz2 + alpha * p.W2 / n
    gb2 = dz2.sum()
    dz1 = np.outer(dz2, p.W2) * (z1 > 0)
    gW1 = X.T @ dz1 + alpha * p.W1 / n
    gb1 = dz1.sum(axis=0)
    return loss, MLPParams(gW1, gb1, gW2, float(gb2))


@dataclass
class FitResult:
    params: MLPParams
    iterations: int
    converged: bool
    loss: float


class _FlatObjective:
    """Same loss and gradient as :func:`loss_and_grad`, on a flat parameter vector.

    Hidden activations are laid out as (h, n) and all per-row temporaries are
    preallocated; fresh multi-megabyte arrays on every iteration cost more
    than the arithmetic.
    """

    def __init__(self, X, y, d, h, alpha):
        n = len(y)
        self.X, self.XT, self.y = np.ascontiguousarray(X), np.ascontiguousarray(X.T), y
        self.n, self.d, self.h, self.alpha = n, d, h, alpha
        self.g = np.zeros(d * h + 2 * h + 1)
        self.z1 = np.empty((h, n))
        self.a1 = np.empty((h, n))
        self.active = np.empty((h, n), dtype=bool)
        self.z2 = np.empty(n)
        self.tmp = np.empty(n)
        self.dz2 = np.empty(n)

    def views(self, v):
        d, h = self.d, self.h
        i = d * h
        return v[:i].reshape(d, h), v[i:i + h], v[i + h:i + 2 * h], v[i + 2 * h:]

    def __call__(self, theta):
        W1, b1, W2, b2 = self.views(theta)
        gW1, gb1, gW2, gb2 = self.views(self.g)
        n, a = self.n, self.alpha
        z1, a1, active, z2, tmp, dz2 = self.z1, self.a1, self.active, self.z2, self.tmp, self.dz2
        np.matmul(W1.T, self.XT, out=z1)
        z1 += b1[:, None]
        np.greater(z1, 0.0, out=active)
        np.multiply(z1, active, out=a1)
        np.matmul(W2, a1, out=z2)
        z2 += b2[0]
        np.logaddexp(0.0, z2, out=tmp)
        loss = tmp.sum() / n - np.dot(self.y, z2) / n
        w1 = theta[:self.d * self.h]
        loss += 0.5 * a * (np.dot(w1, w1) + np.dot(W2, W2)) / n
        # dz2 = (sigmoid(z2) - y) / n
        np.multiply(z2, 0.5, out=dz2)
        np.tanh(dz2, out=dz2)
        dz2 += 1.0
        dz2 *= 0.5
        dz2 -= self.y
        dz2 /= n
        np.dot(a1, dz2, out=gW2)
        gW2 += a * W2 / n
        gb2[0] = dz2.sum()
        # reuse a1 as the hidden-layer delta once its gradient use is done
        dz1 = a1
        np.multiply(W2[:, None], dz2, out=dz1)
        dz1 *= active
        gW1[:] = (dz1 @ self.X).T
        gW1 += a * W1 / n
        dz1.sum(axis=1, out=gb1)
        return float(loss), self.g


def fit(X, y, hidden_units=10, max_iterations=1_000_000, seed=0, alpha=1e-4, learning_rate=0.01,
        plateau_tol=1e-8, plateau_window=50) -> FitResult:
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    d = X.shape[1]
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = init_params(d, hidden_units, rng).flat()
    objective = _FlatObjective(X, y, d, hidden_units, alpha)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    best = np.inf
    history = deque()
    converged = False
    it = 0
    loss = np.inf
    for it in range(1, int(max_iterations) + 1):
        loss, g = objective(theta)
        best = min(best, loss)
        history.append(best)
        if len(history) > plateau_window:
            old = history.popleft()
            if (old - best) <= plateau_tol * max(abs(old), 1e-300):
                converged = True
                break
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        step = learning_rate * np.sqrt(1 - b2 ** it) / (1 - b1 ** it)
        theta -= step * m / (np.sqrt(v) + eps * np.sqrt(1 - b2 ** it))
    return FitResult(MLPParams.unflat(theta, d, hidden_units), it, converged, float(loss))
