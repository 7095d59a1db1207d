"""Sample loss models: logistic regression (l2 / nonconvex regularizer) and quadratic.

The per-sample API here operates on sparse feature maps and is the reference
used by the test oracles. Dense vectorized twins live in `objective`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOGISTIC_L2 = "logistic_l2"
LOGISTIC_NONCONVEX = "logistic_nonconvex"
QUADRATIC = "quadratic"
LOSS_KINDS = (LOGISTIC_L2, LOGISTIC_NONCONVEX, QUADRATIC)

# max ||a_i||^2 must equal 1 this tightly for the L = 1/4 + lambda estimate
NORMALIZATION_TOL = 1e-9


class ModelError(ValueError):
    pass


class DimensionMismatchError(ModelError):
    pass


@dataclass(frozen=True)
class Sample:
    """One data point: sparse feature map plus a +/-1 label.

    For the quadratic loss the feature vector doubles as the per-sample
    target, i.e. loss(x) = 0.5 * ||x - target||^2.
    """

    features: dict
    label: float


@dataclass(frozen=True)
class LossSpec:
    kind: str
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ModelError(f"unknown loss kind: {self.kind!r}")
        if self.lam < 0:
            raise ModelError(f"lambda must be nonnegative, got {self.lam}")


@dataclass(frozen=True)
class SmoothnessInfo:
    L: float
    sigma: float

    def __post_init__(self):
        if self.L <= 0:
            raise ModelError(f"L must be positive, got {self.L}")
        if self.sigma < 0:
            raise ModelError(f"sigma must be nonnegative, got {self.sigma}")

    @property
    def kappa(self) -> float:
        if self.sigma <= 0:
            raise ModelError("condition number undefined for sigma = 0")
        return self.L / self.sigma


def _check_sample(x: np.ndarray, z: Sample) -> None:
    d = x.shape[0]
    for i in z.features:
        if i < 0 or i >= d:
            raise DimensionMismatchError(
                f"feature index {i} out of range for dimension {d}"
            )


def _margin(x: np.ndarray, z: Sample) -> float:
    # fixed iteration order by feature index for reproducible sums
    return math.fsum(x[i] * v for i, v in sorted(z.features.items()))


def _check_label(z: Sample) -> None:
    if z.label not in (-1.0, 1.0):
        raise ModelError(f"logistic loss requires labels in {{-1,+1}}, got {z.label}")


def _dense_target(x: np.ndarray, z: Sample) -> np.ndarray:
    target = np.zeros_like(x)
    for i, v in z.features.items():
        target[i] = v
    return target


def _log1pexp(t: float) -> float:
    """log(1 + exp(t)), stable for large |t|."""
    if t > 0:
        return t + math.log1p(math.exp(-t))
    return math.log1p(math.exp(t))


def _sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def regularizer_value(spec: LossSpec, x: np.ndarray) -> float:
    if spec.kind == LOGISTIC_L2:
        return 0.5 * spec.lam * float(x @ x)
    if spec.kind == LOGISTIC_NONCONVEX:
        xx = x * x
        return spec.lam * float(np.sum(xx / (1.0 + xx)))
    return 0.0


def regularizer_gradient(spec: LossSpec, x: np.ndarray) -> np.ndarray:
    if spec.kind == LOGISTIC_L2:
        return spec.lam * x
    if spec.kind == LOGISTIC_NONCONVEX:
        denom = 1.0 + x * x
        return spec.lam * (2.0 * x) / (denom * denom)
    return np.zeros_like(x)


def sample_loss(spec: LossSpec, x: np.ndarray, z: Sample) -> float:
    _check_sample(x, z)
    if spec.kind == QUADRATIC:
        diff = x - _dense_target(x, z)
        return 0.5 * float(diff @ diff)
    _check_label(z)
    t = z.label * _margin(x, z)
    return _log1pexp(-t) + regularizer_value(spec, x)


def sample_gradient(spec: LossSpec, x: np.ndarray, z: Sample) -> np.ndarray:
    _check_sample(x, z)
    if spec.kind == QUADRATIC:
        return x - _dense_target(x, z)
    _check_label(z)
    t = z.label * _margin(x, z)
    coeff = -z.label * _sigmoid(-t)
    g = regularizer_gradient(spec, x)
    for i, v in z.features.items():
        g[i] += coeff * v
    return g


def batch_gradient(spec: LossSpec, x: np.ndarray, samples) -> np.ndarray:
    samples = list(samples)
    if not samples:
        raise ModelError("batch_gradient requires a nonempty sample set")
    total = np.zeros_like(x)
    for z in samples:
        total += sample_gradient(spec, x, z)
    return total / len(samples)


def smoothness_constants(spec: LossSpec, dataset) -> SmoothnessInfo:
    """Smoothness / strong-convexity constants of the sample loss.

    Logistic kinds assume the dataset is normalized to max ||a_i||^2 = 1,
    which makes L = 1/4 + lambda (l2) or 1/4 + 2*lambda (nonconvex) valid.
    """
    if spec.kind == QUADRATIC:
        return SmoothnessInfo(L=1.0, sigma=1.0)
    max_sq = max(
        math.fsum(v * v for v in z.features.values()) for z in dataset.samples
    )
    if abs(max_sq - 1.0) > NORMALIZATION_TOL:
        raise ModelError(
            f"logistic smoothness formula requires max ||a_i||^2 = 1, got {max_sq}"
        )
    if spec.kind == LOGISTIC_L2:
        return SmoothnessInfo(L=0.25 + spec.lam, sigma=spec.lam)
    return SmoothnessInfo(L=0.25 + 2.0 * spec.lam, sigma=0.0)
