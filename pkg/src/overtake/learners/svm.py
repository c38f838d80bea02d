"""C-SVM trained by sequential minimal optimization, with sigmoid calibration.

The solver works on the dual

    min_a  0.5 a'Qa - e'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K(x_i, x_j)

picking the working pair by maximal violation for ``i`` and second-order gain
for ``j``. One iteration is one pair update. Kernel rows are computed on
demand and kept in a bounded cache.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

TAU = 1e-12


class KernelRows:
    def __init__(self, X: np.ndarray, kernel: str, gamma: float, cache_mb: float = 256.0):
        self.X = X
        self.kernel = kernel
        self.gamma = gamma
        self.sq = np.einsum("ij,ij->i", X, X)
        self.cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self.max_rows = max(2, int(cache_mb * 2 ** 20 / (8 * max(len(X), 1))))

    def diag(self) -> np.ndarray:
        return np.ones(len(self.X)) if self.kernel == "rbf" else self.sq.copy()

    def row(self, i: int) -> np.ndarray:
        r = self.cache.get(i)
        if r is not None:
            self.cache.move_to_end(i)
            return r
        r = kernel_matrix(self.X, self.X[i:i + 1], self.kernel, self.gamma, self.sq, self.sq[i:i + 1])[:, 0]
        self.cache[i] = r
        if len(self.cache) > self.max_rows:
            self.cache.popitem(last=False)
        return r


def kernel_matrix(A, B, kernel: str, gamma: float, sqA=None, sqB=None) -> np.ndarray:
    dot = A @ B.T
    if kernel == "linear":
        return dot
    if sqA is None:
        sqA = np.einsum("ij,ij->i", A, A)
    if sqB is None:
        sqB = np.einsum("ij,ij->i", B, B)
    d2 = np.maximum(sqA[:, None] + sqB[None, :] - 2.0 * dot, 0.0)
    return np.exp(-gamma * d2)


@dataclass
class SMOResult:
    alpha: np.ndarray
    rho: float
    iterations: int
    converged: bool


def smo(X: np.ndarray, y: np.ndarray, C: float = 1.0, kernel: str = "linear", gamma: float = 1.0,
        eps: float = 1e-3, max_iterations: int = 1_000_000, cache_mb: float = 256.0) -> SMOResult:
    """``y`` in {-1, +1}. Decision function is ``sum_i a_i y_i K(x_i, x) - rho``."""
    n = len(y)
    K = KernelRows(X, kernel, gamma, cache_mb)
    Kd = K.diag()
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient Q a - e
    pos = y > 0
    converged = False
    it = 0
    while it < max_iterations:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        yG = -y * G
        cand = np.where(up, yG, -np.inf)
        i = int(np.argmax(cand))
        m = cand[i]
        M = np.min(np.where(low, yG, np.inf))
        if m - M < eps:
            converged = True
            break
        Ki = K.row(i)
        b = m - yG
        ok = low & (b > 0)
        a = Kd[i] + Kd - 2.0 * Ki
        a = np.where(a > 0, a, TAU)
        gain = np.where(ok, -(b * b) / a, np.inf)
        j = int(np.argmin(gain))
        Kj = K.row(j)
        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        quad = Kd[i] + Kd[j] - 2.0 * Ki[j]
        if quad <= 0:
            quad = TAU
        if yi != yj:
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            s = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if s > C:
                if ai > C:
                    ai, aj = C, s - C
            elif aj < 0:
                aj, ai = 0.0, s
            if s > C:
                if aj > C:
                    aj, ai = C, s - C
            elif ai < 0:
                ai, aj = 0.0, s
        alpha[i], alpha[j] = ai, aj
        # Q_it = y_i y_t K_it
        G += y * (yi * (ai - ai_old) * Ki + yj * (aj - aj_old) * Kj)
        it += 1
    return SMOResult(alpha, _rho(alpha, y, G, C), it, converged)


def _rho(alpha, y, G, C) -> float:
    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yG[free].mean())
    # no free vectors: midpoint of the feasible interval for rho
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2.0)


def fit_sigmoid(f: np.ndarray, y01: np.ndarray, max_iter: int = 100) -> tuple[float, float]:
    """Platt parameters (A, B) for ``P(y=1|f) = 1 / (1 + exp(A f + B))``.

    Newton's method with backtracking on the regularized targets, as in
    Lin, Lin & Weng's note on Platt scaling. ``A`` is constrained to be
    non-positive so the map is nondecreasing in ``f``.
    """
    f = np.asarray(f, float)
    y01 = np.asarray(y01, float)
    n1 = y01.sum()
    n0 = len(y01) - n1
    t = np.where(y01 > 0, (n1 + 1.0) / (n1 + 2.0), 1.0 / (n0 + 2.0))

    def objective(A, B):
        z = f * A + B
        return np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))),
                               (t - 1) * z + np.log1p(np.exp(-np.abs(z)))))

    def newton(A, B, fix_a=False):
        fval = objective(A, B)
        for _ in range(max_iter):
            z = f * A + B
            p = 0.5 * (1.0 - np.tanh(0.5 * z))  # 1 / (1 + exp(z))
            q = 1 - p
            d2 = p * q
            d1 = t - p
            g1, g2 = np.dot(f, d1), d1.sum()
            if abs(g2) < 1e-5 and (fix_a or abs(g1) < 1e-5):
                break
            h11 = np.dot(f * f, d2) + 1e-12
            h22 = d2.sum() + 1e-12
            h21 = np.dot(f, d2)
            if fix_a:
                dA, dB = 0.0, -g2 / h22
            else:
                det = h11 * h22 - h21 * h21
                dA = -(h22 * g1 - h21 * g2) / det
                dB = -(-h21 * g1 + h11 * g2) / det
            gd = g1 * dA + g2 * dB
            step = 1.0
            while step >= 1e-10:
                nA, nB = A + step * dA, B + step * dB
                nf = objective(nA, nB)
                if nf < fval + 1e-4 * step * gd:
                    A, B, fval = nA, nB, nf
                    break
                step /= 2.0
            else:
                break
        return A, B

    A, B = newton(0.0, float(np.log((n0 + 1.0) / (n1 + 1.0))))
    if A > 0:
        A, B = newton(0.0, float(np.log((n0 + 1.0) / (n1 + 1.0))), fix_a=True)
    return float(A), float(B)


def sigmoid_predict(f: np.ndarray, A: float, B: float) -> np.ndarray:
    z = np.asarray(f, float) * A + B
    # 1 / (1 + exp(z)) without overflow
    return 0.5 * (1.0 - np.tanh(0.5 * z))


@dataclass
class SVMModel:
    kernel: str
    gamma: float
    support: np.ndarray  # support vectors
    coef: np.ndarray  # alpha_i * y_i
    rho: float
    w: np.ndarray | None = None  # primal weights, linear kernel only

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, float)
        if self.w is not None:
            return X @ self.w - self.rho
        out = np.empty(len(X))
        for s in range(0, len(X), 4096):
            out[s:s + 4096] = kernel_matrix(X[s:s + 4096], self.support, self.kernel, self.gamma) @ self.coef
        return out - self.rho

    def to_json(self) -> dict:
        return {"kernel": self.kernel, "gamma": self.gamma, "support": self.support.tolist(),
                "coef": self.coef.tolist(), "rho": self.rho,
                "w": None if self.w is None else self.w.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "SVMModel":
        d = len(doc["w"]) if doc.get("w") is not None else None
        support = np.array(doc["support"], float)
        if support.size == 0:
            support = support.reshape(0, d or 0)
        return cls(doc["kernel"], float(doc["gamma"]), support, np.array(doc["coef"], float),
                   float(doc["rho"]), None if doc.get("w") is None else np.array(doc["w"], float))


def fit(X, y01, kernel="linear", C=1.0, gamma=None, max_iterations=1_000_000, eps=1e-3):
    X = np.asarray(X, float)
    y = np.where(np.asarray(y01) > 0, 1.0, -1.0)
    if gamma is None:
        gamma = 1.0 / X.shape[1]
    res = smo(X, y, C=C, kernel=kernel, gamma=gamma, eps=eps, max_iterations=max_iterations)
    sv = res.alpha > 0
    coef = res.alpha[sv] * y[sv]
    w = X[sv].T @ coef if kernel == "linear" else None
    return SVMModel(kernel, float(gamma), X[sv], coef, res.rho, w), res
