"""Dense vectorized evaluation of the global objective and per-worker views.

The global objective is f = (1/n) sum_k f_k with f_k the plain mean over the
worker's samples, so with unequal partitions f intentionally differs from the
pooled sample mean.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .losses import (
    LOGISTIC_L2,
    LOGISTIC_NONCONVEX,
    QUADRATIC,
    DimensionMismatchError,
    LossSpec,
    regularizer_gradient,
    regularizer_value,
)


def _check_dim(x: np.ndarray, d: int) -> None:
    if x.shape != (d,):
        raise DimensionMismatchError(f"expected shape ({d},), got {x.shape}")


class WorkerOps:
    """Vectorized loss/gradient kernels over one worker's sample rows."""

    def __init__(self, spec: LossSpec, X: np.ndarray, b: np.ndarray):
        self.spec = spec
        self.X = X
        self.b = b
        self.size, self.dim = X.shape

    def _coeffs(self, x: np.ndarray) -> np.ndarray:
        # data-term gradient of sample i is coeff_i * X[i] (logistic kinds)
        t = self.X @ x
        return -self.b * expit(-self.b * t)

    def sample_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        if self.spec.kind == QUADRATIC:
            return x - self.X[i]
        t = self.X[i] @ x
        coeff = -self.b[i] * expit(-self.b[i] * t)
        return coeff * self.X[i] + regularizer_gradient(self.spec, x)

    def sample_grads(self, x: np.ndarray) -> np.ndarray:
        """Matrix of all per-sample gradients at x (one row per sample)."""
        if self.spec.kind == QUADRATIC:
            return x[None, :] - self.X
        coeffs = self._coeffs(x)
        return coeffs[:, None] * self.X + regularizer_gradient(self.spec, x)[None, :]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        _check_dim(x, self.dim)
        if self.spec.kind == QUADRATIC:
            return x - self.X.mean(axis=0)
        coeffs = self._coeffs(x)
        return self.X.T @ coeffs / self.size + regularizer_gradient(self.spec, x)

    def value(self, x: np.ndarray) -> float:
        _check_dim(x, self.dim)
        if self.spec.kind == QUADRATIC:
            diff = x[None, :] - self.X
            return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))
        t = self.b * (self.X @ x)
        data = np.logaddexp(0.0, -t)
        return float(np.mean(data)) + regularizer_value(self.spec, x)


class Objective:
    """The partition-weighted empirical risk f = (1/n) sum_k f_k."""

    def __init__(self, spec: LossSpec, dataset, partition=None):
        self.spec = spec
        self.dataset = dataset
        X, b = dataset.dense()
        self.X = X
        self.b = b
        self.dim = dataset.dim
        N = len(dataset)
        if partition is None:
            weights = np.full(N, 1.0 / N)
        else:
            if sum(partition.sizes) != N:
                raise DimensionMismatchError("partition does not match dataset size")
            weights = np.empty(N)
            n = partition.worker_count
            for part in partition.assignments:
                weights[list(part)] = 1.0 / (n * len(part))
        self.weights = weights
        self._X_hp = None

    def worker(self, indices) -> WorkerOps:
        idx = np.asarray(indices, dtype=np.intp)
        return WorkerOps(self.spec, self.X[idx], self.b[idx])

    def gradient(self, x: np.ndarray) -> np.ndarray:
        _check_dim(x, self.dim)
        if self.spec.kind == QUADRATIC:
            return x - self.X.T @ self.weights
        t = self.X @ x
        coeffs = -self.b * expit(-self.b * t)
        return self.X.T @ (self.weights * coeffs) + regularizer_gradient(self.spec, x)

    def value(self, x: np.ndarray) -> float:
        _check_dim(x, self.dim)
        if self.spec.kind == QUADRATIC:
            diff = x[None, :] - self.X
            return 0.5 * float(self.weights @ np.sum(diff * diff, axis=1))
        t = self.b * (self.X @ x)
        return float(self.weights @ np.logaddexp(0.0, -t)) + regularizer_value(
            self.spec, x
        )

    def value_hp(self, x: np.ndarray) -> np.longdouble:
        """Objective value in extended precision, for optimality-gap metrics."""
        _check_dim(x, self.dim)
        if self._X_hp is None:
            self._X_hp = self.X.astype(np.longdouble)
        x_hp = x.astype(np.longdouble)
        w_hp = self.weights.astype(np.longdouble)
        if self.spec.kind == QUADRATIC:
            diff = x_hp[None, :] - self._X_hp
            return np.longdouble(0.5) * (w_hp @ np.sum(diff * diff, axis=1))
        b_hp = self.b.astype(np.longdouble)
        t = b_hp * (self._X_hp @ x_hp)
        total = w_hp @ np.logaddexp(np.longdouble(0.0), -t)
        lam = np.longdouble(self.spec.lam)
        if self.spec.kind == LOGISTIC_L2:
            total += np.longdouble(0.5) * lam * (x_hp @ x_hp)
        elif self.spec.kind == LOGISTIC_NONCONVEX:
            xx = x_hp * x_hp
            total += lam * np.sum(xx / (np.longdouble(1.0) + xx))
        return total
