"""Distributed-smoothness estimation, reference optima, and identity oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .losses import LossSpec, ModelError, smoothness_constants
from .objective import Objective

RESTRICTED = "restricted"
FULL = "full"

BREGMAN_SLACK = 1.10  # probing under-estimates c; see estimate_c
_IDENTITY_TOL = 1e-12
_POLISH_CAP = 200_000


class OptimizationFailure(RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(message)
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class ReferenceSolution:
    x_star: np.ndarray
    f_star: np.longdouble
    grad_norm: float
    method: str


@dataclass(frozen=True)
class SmoothnessEstimate:
    c_values: tuple
    mode: str
    probes: int

    @property
    def c_max(self) -> float:
        return max(self.c_values)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst_residual: float
    tolerance: float


@dataclass(frozen=True)
class IdentityReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def reference_optimum(spec: LossSpec, dataset, partition, tol: float,
                      method: str = "fast", max_iter: int = _POLISH_CAP) -> ReferenceSolution:
    """Minimize f = (1/n) sum_k f_k to gradient norm <= tol.

    ``fast`` runs L-BFGS then a Nesterov polish; ``gd`` is plain gradient
    descent with step 1/L. Both are deterministic.
    """
    if tol <= 0:
        raise ModelError(f"tolerance must be positive, got {tol}")
    sm = smoothness_constants(spec, dataset)
    if sm.sigma <= 0:
        raise ModelError("reference_optimum requires a strongly convex spec")
    objective = Objective(spec, dataset, partition)
    x = np.zeros(dataset.dim)

    def grad_norm(point):
        return float(np.linalg.norm(objective.gradient(point)))

    if grad_norm(x) <= tol:
        return ReferenceSolution(x, objective.value_hp(x), grad_norm(x), method)

    if method == "fast":
        result = minimize(
            lambda p: (objective.value(p), objective.gradient(p)),
            x, jac=True, method="L-BFGS-B",
            options={"gtol": tol / 10, "ftol": 0.0, "maxiter": 50_000},
        )
        x = result.x
        # Nesterov polish: L-BFGS stops on its own criteria, which may sit
        # above the requested gradient norm
        eta = 1.0 / sm.L
        root_kappa = math.sqrt(sm.kappa)
        beta = (root_kappa - 1.0) / (root_kappa + 1.0)
        y = x.copy()
        x_prev = x.copy()
        for _ in range(max_iter):
            g = objective.gradient(y)
            if grad_norm(x) <= tol:
                break
            x_next = y - eta * g
            y = x_next + beta * (x_next - x)
            x_prev, x = x, x_next
    elif method == "gd":
        eta = 1.0 / sm.L
        for _ in range(max_iter):
            g = objective.gradient(x)
            if float(np.linalg.norm(g)) <= tol:
                break
            x = x - eta * g
    else:
        raise ModelError(f"unknown reference method: {method!r}")

    achieved = grad_norm(x)
    if achieved > tol:
        raise OptimizationFailure(
            f"iteration cap reached with gradient norm {achieved:.3e} > {tol:.3e}",
            grad_norm=achieved,
        )
    return ReferenceSolution(x, objective.value_hp(x), achieved, method)


def _probe_points(dim: int, center: np.ndarray, probes: int, seed: int):
    """Seeded probe sequence; a larger count extends (never reshuffles) it.

    Alternates trajectory-scale offsets around the center with unit gaussian
    points, so half the probes live at the scale the iterates visit.
    """
    rng = np.random.default_rng(seed)
    scale_base = float(np.linalg.norm(center)) + 1.0
    points = []
    for j in range(probes):
        direction = rng.standard_normal(dim)
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:
            continue
        if j % 2 == 0:
            scale = 10.0 ** rng.uniform(-3.0, 0.0) * scale_base
            points.append(center + (scale / norm) * direction)
        else:
            points.append(direction)
    return points


def _deviation_gradients(objective: Objective, partition, y: np.ndarray):
    """grad(f - f_k)(y) for every worker, via (1/n) sum_{j != k} - (1 - 1/n) f_k.

    Written this way the n = 1 deviation is exactly zero.
    """
    n = partition.worker_count
    worker_grads = [
        objective.worker(part).gradient(y) for part in partition.assignments
    ]
    total = np.sum(np.stack(worker_grads), axis=0)
    devs = []
    for k in range(n):
        others = (total - worker_grads[k]) / n
        devs.append(others - (1.0 - 1.0 / n) * worker_grads[k])
    return devs


def estimate_c(spec: LossSpec, dataset, partition, mode: str, x_ref=None,
               probes: int = 64, seed: int = 0, extra_points=None) -> SmoothnessEstimate:
    """Sampled supremum of ||grad(f-f_k)(y1) - grad(f-f_k)(y2)|| / ||y1 - y2||.

    A lower bound on the true c_k: probing can only under-estimate a supremum.
    ``restricted`` fixes y2 = x_ref; ``full`` maximizes over probe pairs.
    """
    if mode not in (RESTRICTED, FULL):
        raise ModelError(f"unknown estimation mode: {mode!r}")
    if mode == RESTRICTED and x_ref is None:
        raise ModelError("restricted mode requires a reference point")
    objective = Objective(spec, dataset, partition)
    center = x_ref if x_ref is not None else np.zeros(dataset.dim)
    points = _probe_points(dataset.dim, center, probes, seed)
    if extra_points:
        points = points + [np.asarray(p, dtype=float) for p in extra_points]
    n = partition.worker_count
    dev_at = {i: _deviation_gradients(objective, partition, y) for i, y in enumerate(points)}

    c_values = [0.0] * n
    evaluated_any = False
    if mode == RESTRICTED:
        dev_ref = _deviation_gradients(objective, partition, x_ref)
        for i, y in enumerate(points):
            dist = float(np.linalg.norm(x_ref - y))
            if dist == 0.0:
                continue
            evaluated_any = True
            for k in range(n):
                ratio = float(np.linalg.norm(dev_ref[k] - dev_at[i][k])) / dist
                c_values[k] = max(c_values[k], ratio)
    else:
        for i in range(len(points)):
            for j in range(i + 1, len(points)):
                dist = float(np.linalg.norm(points[i] - points[j]))
                if dist == 0.0:
                    continue
                evaluated_any = True
                for k in range(n):
                    ratio = float(np.linalg.norm(dev_at[i][k] - dev_at[j][k])) / dist
                    c_values[k] = max(c_values[k], ratio)
    if not evaluated_any:
        raise ModelError("all probe pairs were degenerate")
    return SmoothnessEstimate(c_values=tuple(c_values), mode=mode, probes=probes)


def verify_identities(spec: LossSpec, dataset, partition, seed: int = 0,
                      points: int = 20, trajectory_steps: int = 10,
                      pairs: int = 100) -> IdentityReport:
    """Numerical oracles for the estimator identities and the Bregman bound.

    Failures are report entries, not exceptions.
    """
    rng = np.random.default_rng(seed)
    objective = Objective(spec, dataset, partition)
    workers = [objective.worker(part) for part in partition.assignments]
    d = dataset.dim
    checks = []

    # (a) SVRG estimator mean: enumerating z recovers the local-global blend
    worst = 0.0
    for _ in range(points):
        anchor = rng.standard_normal(d)
        y = rng.standard_normal(d)
        g = objective.gradient(anchor)
        for wk in workers:
            lhs = wk.sample_grads(y).mean(axis=0) - wk.sample_grads(anchor).mean(axis=0) + g
            rhs = wk.gradient(y) - wk.gradient(anchor) + g
            worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    checks.append(CheckResult("svrg_estimator_mean", worst <= _IDENTITY_TOL, worst, _IDENTITY_TOL))

    # (b) SARAH conditional mean along a simulated trajectory
    sm = smoothness_constants(spec, dataset)
    eta = 1.0 / (2.0 * sm.L)
    worst = 0.0
    for wk in workers:
        anchor = rng.standard_normal(d)
        y = anchor.copy()
        v = objective.gradient(anchor)
        for _ in range(trajectory_steps):
            y_next = y - eta * v
            lhs = wk.sample_grads(y_next).mean(axis=0) - wk.sample_grads(y).mean(axis=0)
            rhs = wk.gradient(y_next) - wk.gradient(y)
            worst = max(worst, float(np.linalg.norm(lhs - rhs)))
            z = int(rng.integers(0, wk.size))
            v = wk.sample_grad(z, y_next) - wk.sample_grad(z, y) + v
            y = y_next
    checks.append(CheckResult("sarah_conditional_mean", worst <= _IDENTITY_TOL, worst, _IDENTITY_TOL))

    # (c) Bregman bound with the probed c plus slack (convex specs only)
    if sm.sigma > 0 or spec.kind == "quadratic":
        estimate = estimate_c(spec, dataset, partition, FULL, seed=seed + 1)
        worst = -math.inf
        ok = True
        for _ in range(pairs):
            x1 = rng.standard_normal(d)
            x2 = rng.standard_normal(d)
            diff_sq = float(np.sum((x1 - x2) ** 2))
            if diff_sq == 0.0:
                continue
            bregman = objective.value(x1) - objective.value(x2) - float(
                objective.gradient(x2) @ (x1 - x2)
            )
            for k, wk in enumerate(workers):
                delta = wk.sample_grads(x1) - wk.sample_grads(x2)
                lhs = float(np.mean(np.sum(delta * delta, axis=1)))
                rhs = 2.0 * sm.L * bregman + BREGMAN_SLACK * estimate.c_values[k] * sm.L * diff_sq
                residual = lhs - rhs
                worst = max(worst, residual)
                if residual > 1e-12:
                    ok = False
        checks.append(CheckResult("bregman_bound", ok, worst, 1e-12))

    return IdentityReport(checks=tuple(checks))
