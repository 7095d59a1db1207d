"""Worker-side local update kernels: SVRG (optionally regularized), SARAH, MiG.

All kernels are pure functions of their RoundInput; randomness comes solely
from the input's rng stream, so a single seed fully determines a round. The
draw protocol is part of the contract: first ``m`` sample indices via
``rng.integers(0, worker_size, size=m)``, then (for random-output options)
one more ``rng.integers`` call for the output index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _inner
from .losses import LOGISTIC_L2, LOGISTIC_NONCONVEX, QUADRATIC, ModelError
from .objective import WorkerOps

SVRG_OPTION_I = "optionI_last"
SVRG_OPTION_II = "optionII_uniform"
SARAH_UNIFORM = "uniform_random"
SARAH_LAST = "last_iterate"

# cadence of the non-finite (divergence) scan inside inner loops
_FINITE_CHECK_EVERY = _inner.FINITE_CHECK_EVERY

_KIND_CODES = {
    LOGISTIC_L2: _inner.KIND_LOGISTIC_L2,
    LOGISTIC_NONCONVEX: _inner.KIND_LOGISTIC_NONCONVEX,
    QUADRATIC: _inner.KIND_QUADRATIC,
}


class DivergenceError(RuntimeError):
    """Raised when an inner iterate turns non-finite.

    ``step`` is the inner step at which the blow-up was detected;
    ``round_index`` is attached by the orchestrator.
    """

    def __init__(self, step: int, round_index=None):
        super().__init__(f"non-finite iterate at inner step {step}")
        self.step = step
        self.round_index = round_index


@dataclass(frozen=True)
class SvrgConfig:
    eta: float
    m: int
    output: str = SVRG_OPTION_II
    mu: float = 0.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ModelError(f"step size must be positive, got {self.eta}")
        if self.m < 1:
            raise ModelError(f"inner iteration count must be >= 1, got {self.m}")
        if self.output not in (SVRG_OPTION_I, SVRG_OPTION_II):
            raise ModelError(f"unknown SVRG output option: {self.output!r}")
        if self.mu < 0:
            raise ModelError(f"mu must be nonnegative, got {self.mu}")


@dataclass(frozen=True)
class SarahConfig:
    eta: float
    m: int
    output: str = SARAH_UNIFORM

    def __post_init__(self):
        if self.eta <= 0:
            raise ModelError(f"step size must be positive, got {self.eta}")
        if self.m < 1:
            raise ModelError(f"inner iteration count must be >= 1, got {self.m}")
        if self.output not in (SARAH_UNIFORM, SARAH_LAST):
            raise ModelError(f"unknown SARAH output option: {self.output!r}")


@dataclass(frozen=True)
class MigConfig:
    eta: float
    m: int
    theta: float
    w: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ModelError(f"step size must be positive, got {self.eta}")
        if self.m < 1:
            raise ModelError(f"inner iteration count must be >= 1, got {self.m}")
        if not 0.0 < self.theta <= 1.0:
            raise ModelError(f"theta must lie in (0, 1], got {self.theta}")
        if self.w < 1.0:
            raise ModelError(f"w must be >= 1, got {self.w}")


@dataclass
class MigWorkerState:
    """Momentum iterate carried between rounds (x_k^{t,m})."""

    x_momentum: np.ndarray = None

    @property
    def initialized(self) -> bool:
        return self.x_momentum is not None


@dataclass
class GradEvalCounter:
    total: int = 0

    def add(self, count: int) -> None:
        self.total += count


@dataclass
class RoundInput:
    anchor: np.ndarray
    global_gradient: np.ndarray
    worker_samples: tuple
    rng: np.random.Generator
    counter: GradEvalCounter = field(default_factory=GradEvalCounter)
    ops: WorkerOps = None


def _worker_ops(spec, dataset, rin: RoundInput) -> WorkerOps:
    if rin.ops is not None:
        return rin.ops
    X, b = dataset.dense()
    idx = np.asarray(rin.worker_samples, dtype=np.intp)
    return WorkerOps(spec, X[idx], b[idx])


def _check_round_input(rin: RoundInput, dim: int) -> None:
    if rin.anchor.shape != (dim,) or rin.global_gradient.shape != (dim,):
        raise ModelError("anchor/global gradient dimension mismatch")
    if len(rin.worker_samples) == 0:
        raise ModelError("worker sample set must be nonempty")
    if not (np.isfinite(rin.anchor).all() and np.isfinite(rin.global_gradient).all()):
        raise DivergenceError(step=0)


def svrg_local_update(spec, dataset, rin: RoundInput, cfg: SvrgConfig) -> np.ndarray:
    """SVRG inner loop; cfg.mu > 0 adds the proximity penalty toward the anchor."""
    ops = _worker_ops(spec, dataset, rin)
    _check_round_input(rin, ops.dim)
    draws = rin.rng.integers(0, ops.size, size=cfg.m)
    out_index = cfg.m
    if cfg.output == SVRG_OPTION_II:
        out_index = int(rin.rng.integers(1, cfg.m + 1))
    result, step = _inner.svrg_inner(
        _KIND_CODES[spec.kind], spec.lam, ops.X, ops.b,
        np.ascontiguousarray(rin.anchor), np.ascontiguousarray(rin.global_gradient),
        cfg.eta, cfg.mu, draws, out_index,
    )
    if step >= 0:
        raise DivergenceError(step=step)
    rin.counter.add(2 * cfg.m)
    return result


def sarah_local_update(spec, dataset, rin: RoundInput, cfg: SarahConfig) -> np.ndarray:
    """SARAH inner loop with recursive gradient estimates.

    The uniform output option draws from {y^0, ..., y^{m-1}}, the support used
    by the convergence analysis.
    """
    ops = _worker_ops(spec, dataset, rin)
    _check_round_input(rin, ops.dim)
    draws = rin.rng.integers(0, ops.size, size=cfg.m)
    out_index = -1  # last iterate
    if cfg.output == SARAH_UNIFORM:
        out_index = int(rin.rng.integers(0, cfg.m))
    result, step = _inner.sarah_inner(
        _KIND_CODES[spec.kind], spec.lam, ops.X, ops.b,
        np.ascontiguousarray(rin.anchor), np.ascontiguousarray(rin.global_gradient),
        cfg.eta, draws, out_index,
    )
    if step >= 0:
        raise DivergenceError(step=step)
    rin.counter.add(2 * cfg.m)
    return result


def geometric_weights(w: float, m: int) -> np.ndarray:
    """Normalized weights (w^0, ..., w^{m-1}) / sum; reference for tests."""
    exponents = np.arange(m, dtype=float)
    raw = np.power(w, exponents - (m - 1))  # scaled by w^{-(m-1)} against overflow
    return raw / raw.sum()


def mig_local_update(spec, dataset, rin: RoundInput, cfg: MigConfig, state: MigWorkerState):
    """MiG inner loop with coupled iterates and w-geometric averaged output.

    Returns (output, new_state); the new state carries x^m for the next
    round's warm start.
    """
    ops = _worker_ops(spec, dataset, rin)
    _check_round_input(rin, ops.dim)
    anchor = np.ascontiguousarray(rin.anchor)
    if state.initialized:
        if state.x_momentum.shape != anchor.shape:
            raise ModelError("MiG state dimension mismatch")
        x_start = np.ascontiguousarray(state.x_momentum)
    else:
        x_start = anchor
    draws = rin.rng.integers(0, ops.size, size=cfg.m)
    avg, x, step = _inner.mig_inner(
        _KIND_CODES[spec.kind], spec.lam, ops.X, ops.b,
        anchor, np.ascontiguousarray(rin.global_gradient),
        cfg.eta, cfg.theta, cfg.w, draws, x_start,
    )
    if step >= 0:
        raise DivergenceError(step=step)
    rin.counter.add(2 * cfg.m)
    return avg, MigWorkerState(x_momentum=x)


def full_local_gradient(spec, dataset, worker_samples, x: np.ndarray, counter=None):
    """Batch gradient over one worker's index set; counts |M_k| evaluations."""
    X, b = dataset.dense()
    idx = np.asarray(worker_samples, dtype=np.intp)
    if len(idx) == 0:
        raise ModelError("worker sample set must be nonempty")
    ops = WorkerOps(spec, X[idx], b[idx])
    if counter is not None:
        counter.add(len(idx))
    return ops.gradient(x)
