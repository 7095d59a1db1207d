"""Parameter-server round loop: dispatch local updates, aggregate, account.

Per-round randomness is derived from (master_seed, round, participant) only,
so worker kernels can run sequentially or concurrently with bit-identical
results.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import LossSpec, ModelError, SmoothnessInfo
from .objective import Objective
from .solvers import (
    SARAH_LAST,
    SARAH_UNIFORM,
    DivergenceError,
    GradEvalCounter,
    MigConfig,
    MigWorkerState,
    RoundInput,
    SarahConfig,
    SvrgConfig,
    mig_local_update,
    sarah_local_update,
    svrg_local_update,
)

AGG_SELECT = "uniform_random_select"
AGG_AVERAGE = "average"

D_SVRG = "d_svrg"
D_SARAH = "d_sarah"
D_MIG = "d_mig"
D_RSVRG = "d_rsvrg"
D_GD = "d_gd"
D_AGD = "d_agd"
ALGORITHMS = (D_SVRG, D_SARAH, D_MIG, D_RSVRG, D_GD, D_AGD)
STOCHASTIC_ALGORITHMS = (D_SVRG, D_SARAH, D_MIG, D_RSVRG)

_PS_PARTICIPANT = 0x7073  # stream tag for the parameter server


def derive_stream(master_seed: int, round_index: int, participant: int):
    """Deterministic per-(seed, round, participant) random stream."""
    seq = np.random.SeedSequence(entropy=(master_seed, round_index, participant))
    return np.random.Generator(np.random.PCG64(seq))


def ps_stream(master_seed: int, round_index: int):
    return derive_stream(master_seed, round_index, _PS_PARTICIPANT)


@dataclass(frozen=True)
class GdConfig:
    eta: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ModelError(f"step size must be positive, got {self.eta}")


@dataclass(frozen=True)
class AgdConfig:
    eta: float
    momentum: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ModelError(f"step size must be positive, got {self.eta}")
        if not 0.0 <= self.momentum < 1.0:
            raise ModelError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass
class RunConfig:
    algorithm: str
    solver: object
    rounds: int
    aggregation: str = AGG_SELECT
    master_seed: int = 0
    x0: np.ndarray = None
    mu_by_worker: dict = field(default_factory=dict)
    keep_iterates: bool = False
    parallel: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ModelError(f"unknown algorithm: {self.algorithm!r}")
        if self.rounds < 0:
            raise ModelError(f"round count must be >= 0, got {self.rounds}")
        if self.aggregation not in (AGG_SELECT, AGG_AVERAGE):
            raise ModelError(f"unknown aggregation rule: {self.aggregation!r}")


@dataclass
class TraceRow:
    t: int
    f_value: np.longdouble
    grad_norm_sq: float
    comm_rounds: int
    grad_evals: tuple
    diverged: bool = False
    x: np.ndarray = None

    @property
    def grad_evals_max(self) -> int:
        return max(self.grad_evals)


@dataclass
class Trace:
    rows: list
    diverged: bool = False
    diverged_round: int = None


def aggregate(rule: str, outputs, stream) -> np.ndarray:
    outputs = list(outputs)
    if not outputs:
        raise ModelError("aggregate requires at least one worker output")
    dim = outputs[0].shape
    if any(o.shape != dim for o in outputs):
        raise ModelError("worker outputs have mismatched dimensions")
    if rule == AGG_SELECT:
        pick = int(stream.integers(0, len(outputs)))
        return outputs[pick]
    if rule == AGG_AVERAGE:
        return np.mean(np.stack(outputs), axis=0)
    raise ModelError(f"unknown aggregation rule: {rule!r}")


def global_gradient(spec: LossSpec, dataset, partition, x: np.ndarray) -> np.ndarray:
    """Uniform average of per-worker batch gradients, (1/n) sum_k grad f_k."""
    objective = Objective(spec, dataset)
    grads = [objective.worker(part).gradient(x) for part in partition.assignments]
    return np.mean(np.stack(grads), axis=0)


def default_parameters(algorithm: str, smoothness: SmoothnessInfo, N: int, n: int, mu: float = 0.0):
    """Per-algorithm default solver parameters (eta = 1/2L etc., m = 2N/n)."""
    L = smoothness.L
    sigma = smoothness.sigma
    m = max(1, round(2 * N / n))
    if algorithm in (D_SVRG, D_RSVRG):
        return SvrgConfig(eta=1.0 / (2.0 * L), m=m, mu=mu if algorithm == D_RSVRG else 0.0)
    if algorithm == D_SARAH:
        output = SARAH_UNIFORM if sigma > 0 else SARAH_LAST
        return SarahConfig(eta=1.0 / (2.0 * L), m=m, output=output)
    if algorithm == D_MIG:
        if sigma <= 0:
            raise ModelError("D-MiG defaults require sigma > 0")
        theta = 0.5
        eta = 1.0 / (3.0 * theta * L)
        return MigConfig(eta=eta, m=m, theta=theta, w=1.0 + eta * sigma)
    if algorithm == D_GD:
        return GdConfig(eta=1.0 / L)
    if algorithm == D_AGD:
        if sigma <= 0:
            raise ModelError("D-AGD defaults require sigma > 0")
        root_kappa = math.sqrt(smoothness.kappa)
        return AgdConfig(eta=1.0 / L, momentum=(root_kappa - 1.0) / (root_kappa + 1.0))
    raise ModelError(f"unknown algorithm: {algorithm!r}")


def _metric_row(objective, x, g, t, comm, counters, diverged=False, keep=False):
    return TraceRow(
        t=t,
        f_value=objective.value_hp(x),
        grad_norm_sq=float(g @ g),
        comm_rounds=comm,
        grad_evals=tuple(c.total for c in counters),
        diverged=diverged,
        x=x.copy() if keep else None,
    )


def _run_local_updates(spec, dataset, workers, parts, x, g, counters, cfg, t, mig_states):
    """Execute one round of LocalUpdate on every worker; returns outputs list."""

    def one(k):
        rin = RoundInput(
            anchor=x,
            global_gradient=g,
            worker_samples=parts[k],
            rng=derive_stream(cfg.master_seed, t, k),
            counter=counters[k],
            ops=workers[k],
        )
        if cfg.algorithm in (D_SVRG, D_RSVRG):
            solver = cfg.solver
            mu_k = cfg.mu_by_worker.get(k, solver.mu)
            if mu_k != solver.mu:
                solver = replace(solver, mu=mu_k)
            return svrg_local_update(spec, dataset, rin, solver)
        if cfg.algorithm == D_SARAH:
            return sarah_local_update(spec, dataset, rin, cfg.solver)
        out, mig_states[k] = mig_local_update(spec, dataset, rin, cfg.solver, mig_states[k])
        return out

    if cfg.parallel:
        with ThreadPoolExecutor(max_workers=len(workers)) as pool:
            return list(pool.map(one, range(len(workers))))
    return [one(k) for k in range(len(workers))]


def run(spec: LossSpec, dataset, partition, cfg: RunConfig) -> Trace:
    """Execute the full parameter-server loop and return the metric trace."""
    if sum(partition.sizes) != len(dataset):
        raise ModelError("partition does not match dataset")
    objective = Objective(spec, dataset, partition)
    parts = partition.assignments
    n = partition.worker_count
    workers = [objective.worker(part) for part in parts]
    counters = [GradEvalCounter() for _ in range(n)]
    x = np.zeros(dataset.dim) if cfg.x0 is None else np.array(cfg.x0, dtype=float)

    if cfg.algorithm in (D_GD, D_AGD):
        return _run_deterministic(objective, workers, x, cfg, counters)

    # initialization: one gradient-exchange communication round
    local_grads = [workers[k].gradient(x) for k in range(n)]
    for k in range(n):
        counters[k].add(len(parts[k]))
    g = np.mean(np.stack(local_grads), axis=0)
    comm = 1
    rows = [_metric_row(objective, x, g, 0, comm, counters, keep=cfg.keep_iterates)]
    trace = Trace(rows=rows)
    mig_states = [MigWorkerState() for _ in range(n)]

    for t in range(cfg.rounds):
        try:
            outputs = _run_local_updates(
                spec, dataset, workers, parts, x, g, counters, cfg, t, mig_states
            )
        except DivergenceError as err:
            err.round_index = t
            comm += 2
            trace.diverged = True
            trace.diverged_round = t
            rows.append(
                _metric_row(objective, x, g, t + 1, comm, counters, diverged=True,
                            keep=cfg.keep_iterates)
            )
            return trace
        x = aggregate(cfg.aggregation, outputs, ps_stream(cfg.master_seed, t))
        local_grads = [workers[k].gradient(x) for k in range(n)]
        for k in range(n):
            counters[k].add(len(parts[k]))
        g = np.mean(np.stack(local_grads), axis=0)
        comm += 2
        rows.append(_metric_row(objective, x, g, t + 1, comm, counters, keep=cfg.keep_iterates))
    return trace


def _run_deterministic(objective, workers, x, cfg: RunConfig, counters) -> Trace:
    """D-GD / D-AGD at the PS; one gradient exchange per round."""
    n = len(workers)

    def exchange(point):
        grads = [workers[k].gradient(point) for k in range(n)]
        for k in range(n):
            counters[k].add(workers[k].size)
        return np.mean(np.stack(grads), axis=0)

    g = exchange(x)  # initialization gradient; not counted per the round ledger
    comm = 0
    rows = [_metric_row(objective, x, g, 0, comm, counters, keep=cfg.keep_iterates)]
    trace = Trace(rows=rows)
    if cfg.algorithm == D_GD:
        eta = cfg.solver.eta
        for t in range(cfg.rounds):
            x = x - eta * g
            g = exchange(x)
            comm += 1
            rows.append(_metric_row(objective, x, g, t + 1, comm, counters,
                                    keep=cfg.keep_iterates))
        return trace
    eta, beta = cfg.solver.eta, cfg.solver.momentum
    y = x.copy()
    g_y = g
    for t in range(cfg.rounds):
        x_next = y - eta * g_y
        y = x_next + beta * (x_next - x)
        x = x_next
        g_y = exchange(y)
        comm += 1
        g_metric = objective.gradient(x)  # metric only, not a protocol exchange
        rows.append(_metric_row(objective, x, g_metric, t + 1, comm, counters,
                                keep=cfg.keep_iterates))
    return trace
