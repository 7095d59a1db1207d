"""Jitted inner-loop cores for the local update kernels.

Compiled without fastmath, so arithmetic is strict IEEE in a fixed order:
given the same inputs the cores are bit-reproducible, sequentially or from
worker threads. Loss kinds are encoded as integers: 0 = logistic + l2,
1 = logistic + nonconvex regularizer, 2 = quadratic.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

KIND_LOGISTIC_L2 = 0
KIND_LOGISTIC_NONCONVEX = 1
KIND_QUADRATIC = 2

FINITE_CHECK_EVERY = 64


@njit(cache=True)
def _sigmoid_neg(t):
    """sigma(-t), stable for large |t|."""
    if t >= 0.0:
        e = math.exp(-t)
        return e / (1.0 + e)
    e = math.exp(t)
    return 1.0 / (1.0 + e)


@njit(cache=True)
def _data_coeff(X, b, z, y):
    """Data-term gradient coefficient of sample z at y (logistic kinds)."""
    t = 0.0
    for j in range(X.shape[1]):
        t += X[z, j] * y[j]
    return -b[z] * _sigmoid_neg(b[z] * t)

@njit(cache=True)
def _reg_grad(kind, lam, yj):
    if kind == KIND_LOGISTIC_L2:
        return lam * yj
    if kind == KIND_LOGISTIC_NONCONVEX:
        denom = 1.0 + yj * yj
        return lam * 2.0 * yj / (denom * denom)
    return 0.0


@njit(cache=True)
def _all_finite(y):
    for j in range(y.shape[0]):
        if not math.isfinite(y[j]):
            return False
    return True


@njit(cache=True)
def anchor_gradients(kind, lam, X, b, anchor):
    """Per-sample gradients at the anchor, one row per worker sample."""
    nk, dim = X.shape
    Ga = np.empty((nk, dim))
    if kind == KIND_QUADRATIC:
        for i in range(nk):
            for j in range(dim):
                Ga[i, j] = anchor[j] - X[i, j]
        return Ga
    for i in range(nk):
        coeff = _data_coeff(X, b, i, anchor)
        for j in range(dim):
            Ga[i, j] = coeff * X[i, j] + _reg_grad(kind, lam, anchor[j])
    return Ga


@njit(cache=True)
def svrg_inner(kind, lam, X, b, anchor, g, eta, mu, draws, out_index):
    """SVRG inner loop; returns (result, diverged_step) with step -1 when OK.

    ``out_index`` selects y^{out_index} as the output (1..m); pass m for the
    last iterate. ``mu`` > 0 adds the proximity penalty toward the anchor.
    """
    dim = X.shape[1]
    m = draws.shape[0]
    Ga = anchor_gradients(kind, lam, X, b, anchor)
    y = anchor.copy()
    out = np.empty(dim)
    have_out = False
    for s in range(m):
        z = draws[s]
        if kind == KIND_QUADRATIC:
            for j in range(dim):
                v = (y[j] - X[z, j]) - Ga[z, j] + g[j]
                if mu > 0.0:
                    v = v + mu * (y[j] - anchor[j])
                y[j] = y[j] - eta * v
        else:
            coeff = _data_coeff(X, b, z, y)
            for j in range(dim):
                v = (coeff * X[z, j] + _reg_grad(kind, lam, y[j])) - Ga[z, j] + g[j]
                if mu > 0.0:
                    v = v + mu * (y[j] - anchor[j])
                y[j] = y[j] - eta * v
        if (s + 1) % FINITE_CHECK_EVERY == 0 and not _all_finite(y):
            return y, s + 1
        if s + 1 == out_index:
            for j in range(dim):
                out[j] = y[j]
            have_out = True
    if not _all_finite(y):
        return y, m
    if have_out:
        return out, -1
    return y, -1


@njit(cache=True)
def sarah_inner(kind, lam, X, b, anchor, g, eta, draws, out_index):
    """SARAH inner loop with recursive estimates; out_index in 0..m-1 selects
    y^{out_index}, -1 selects the last iterate y^m."""
    dim = X.shape[1]
    m = draws.shape[0]
    y = anchor.copy()
    y_next = np.empty(dim)
    v = g.copy()
    out = np.empty(dim)
    have_out = False
    if out_index == 0:
        for j in range(dim):
            out[j] = y[j]
        have_out = True
    for s in range(m):
        for j in range(dim):
            y_next[j] = y[j] - eta * v[j]
        z = draws[s]
        if kind == KIND_QUADRATIC:
            for j in range(dim):
                v[j] = (y_next[j] - X[z, j]) - (y[j] - X[z, j]) + v[j]
        else:
            coeff_next = _data_coeff(X, b, z, y_next)
            coeff_prev = _data_coeff(X, b, z, y)
            for j in range(dim):
                v[j] = (
                    (coeff_next * X[z, j] + _reg_grad(kind, lam, y_next[j]))
                    - (coeff_prev * X[z, j] + _reg_grad(kind, lam, y[j]))
                    + v[j]
                )
        for j in range(dim):
            y[j] = y_next[j]
        if (s + 1) % FINITE_CHECK_EVERY == 0 and not _all_finite(y):
            return y, s + 1
        if s + 1 == out_index:
            for j in range(dim):
                out[j] = y[j]
            have_out = True
    if not _all_finite(y):
        return y, m
    if have_out:
        return out, -1
    return y, -1


@njit(cache=True)
def mig_inner(kind, lam, X, b, anchor, g, eta, theta, w, draws, x_start):
    """MiG inner loop; returns (weighted_output, x_momentum, diverged_step).

    The w-geometric output average is kept in running normalized form so
    w^m never overflows.
    """
    dim = X.shape[1]
    m = draws.shape[0]
    Ga = anchor_gradients(kind, lam, X, b, anchor)
    x = x_start.copy()
    y = np.empty(dim)
    avg = np.zeros(dim)
    one_minus_theta = 1.0 - theta
    weight_scale = 0.0
    for j in range(dim):
        y[j] = one_minus_theta * anchor[j] + theta * x[j]
    for s in range(m):
        z = draws[s]
        if kind == KIND_QUADRATIC:
            for j in range(dim):
                v = (y[j] - X[z, j]) - Ga[z, j] + g[j]
                x[j] = x[j] - eta * v
        else:
            coeff = _data_coeff(X, b, z, y)
            for j in range(dim):
                v = (coeff * X[z, j] + _reg_grad(kind, lam, y[j])) - Ga[z, j] + g[j]
                x[j] = x[j] - eta * v
        for j in range(dim):
            y[j] = one_minus_theta * anchor[j] + theta * x[j]
        weight_scale = weight_scale / w + 1.0
        for j in range(dim):
            avg[j] = avg[j] + (y[j] - avg[j]) / weight_scale
        if (s + 1) % FINITE_CHECK_EVERY == 0 and not _all_finite(x):
            return avg, x, s + 1
    if not _all_finite(x) or not _all_finite(avg):
        return avg, x, m
    return avg, x, -1
