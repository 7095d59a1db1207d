"""Experiment presets, metric rows, and CSV emission."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace as dc_replace

from .data import (
    Dataset,
    normalize_features,
    parse_libsvm,
    partition_equal,
    partition_fractions,
    synthesize,
)
from .diagnostics import reference_optimum
from .losses import (
    LOGISTIC_L2,
    LOGISTIC_NONCONVEX,
    LossSpec,
    ModelError,
    smoothness_constants,
)
from .orchestrator import (
    AGG_AVERAGE,
    AGG_SELECT,
    D_AGD,
    D_GD,
    D_MIG,
    D_RSVRG,
    RunConfig,
    default_parameters,
    run,
)

CSV_HEADER = (
    "experiment", "algorithm", "seed", "round", "comm_rounds",
    "grad_evals", "gap", "grad_norm_sq", "diverged",
)

PRESET_NAMES = ("kappa_sweep", "worker_sweep", "unbalanced", "nonconvex")
DEFAULT_N = 4096
DEFAULT_DIM = 50
DEFAULT_DATA_SEED = 2024
REFERENCE_GRAD_TOL = 1e-11


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticRecipe:
    kind: str
    N: int
    d: int
    seed: int


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    data: object  # SyntheticRecipe or libsvm file path
    loss_kind: str
    lambdas: tuple
    workers: tuple
    algorithms: tuple
    rounds: int
    partition: str = "equal"
    fractions: tuple = None
    baseline_rounds: int = None
    replicates: int = 1
    master_seed: int = 0
    partition_seed: int = 0
    mu_smallest: float = None
    m_override: int = None
    aggregation: str = None  # None = per-algorithm default
    metrics: tuple = ("gap", "grad_norm_sq")
    reference_tol: float = REFERENCE_GRAD_TOL


@dataclass(frozen=True)
class MetricRow:
    experiment: str
    algorithm: str
    seed: int
    round: int
    comm_rounds: int
    grad_evals: int
    gap: float  # None for runs without a reference optimum
    grad_norm_sq: float
    diverged: bool


def default_aggregation(algorithm: str) -> str:
    # D-MiG averages local updates at the PS for better empirical behavior
    return AGG_AVERAGE if algorithm == D_MIG else AGG_SELECT


def load_dataset(data) -> Dataset:
    if isinstance(data, SyntheticRecipe):
        return synthesize(data.kind, data.N, data.d, data.seed)
    with open(data, "r", encoding="utf-8") as handle:
        return normalize_features(parse_libsvm(handle))


def rows_from_trace(experiment: str, algorithm: str, seed: int, trace, f_star=None):
    rows = []
    for row in trace.rows:
        gap = None if f_star is None else float(row.f_value - f_star)
        rows.append(
            MetricRow(
                experiment=experiment,
                algorithm=algorithm,
                seed=seed,
                round=row.t,
                comm_rounds=row.comm_rounds,
                grad_evals=row.grad_evals_max,
                gap=gap,
                grad_norm_sq=row.grad_norm_sq,
                diverged=row.diverged,
            )
        )
    return rows


def build_solver(algorithm: str, smoothness, N: int, n: int, m_override=None):
    solver = default_parameters(algorithm, smoothness, N, n)
    if m_override is not None and algorithm not in (D_GD, D_AGD):
        solver = dc_replace(solver, m=m_override)
    return solver


def run_experiment(config: ExperimentConfig, parallel: bool = False):
    """Run every (lambda, workers, algorithm, replicate) cell; returns MetricRows."""
    dataset = load_dataset(config.data)
    N = len(dataset)
    want_gap = "gap" in config.metrics
    rows = []
    for lam in config.lambdas:
        spec = LossSpec(config.loss_kind, lam)
        sm = smoothness_constants(spec, dataset)
        for n in config.workers:
            if config.partition == "equal":
                partition = partition_equal(dataset, n, config.partition_seed)
            elif config.partition == "fractions":
                if config.fractions is None or len(config.fractions) != n:
                    raise HarnessError("fractions must match the worker count")
                partition = partition_fractions(dataset, config.fractions, config.partition_seed)
            else:
                raise HarnessError(f"unknown partition mode: {config.partition!r}")
            f_star = None
            if want_gap and sm.sigma > 0:
                f_star = reference_optimum(spec, dataset, partition, config.reference_tol).f_star
            experiment = f"{config.name}[lam={lam:.6g},n={n}]"
            smallest = min(range(n), key=lambda k: partition.sizes[k])
            for algorithm in config.algorithms:
                solver = build_solver(algorithm, sm, N, n, config.m_override)
                mu_by_worker = {}
                if algorithm == D_RSVRG:
                    if config.mu_smallest is None:
                        raise HarnessError("d_rsvrg requires mu_smallest")
                    mu_by_worker = {smallest: config.mu_smallest}
                rounds = config.rounds
                if algorithm in (D_GD, D_AGD) and config.baseline_rounds is not None:
                    rounds = config.baseline_rounds
                for replicate in range(config.replicates):
                    seed = config.master_seed + replicate
                    cfg = RunConfig(
                        algorithm=algorithm,
                        solver=solver,
                        rounds=rounds,
                        aggregation=config.aggregation or default_aggregation(algorithm),
                        master_seed=seed,
                        mu_by_worker=mu_by_worker,
                        parallel=parallel,
                    )
                    trace = run(spec, dataset, partition, cfg)
                    rows.extend(rows_from_trace(experiment, algorithm, seed, trace, f_star))
    rows.sort(key=lambda r: (r.experiment, r.algorithm, r.seed, r.round))
    return rows


def preset(name: str, data=None, seed: int = 0) -> ExperimentConfig:
    """Named experiment configurations mirroring the benchmark scenarios."""
    if name == "kappa_sweep":
        recipe = data or SyntheticRecipe(LOGISTIC_L2, DEFAULT_N, DEFAULT_DIM, DEFAULT_DATA_SEED)
        N = recipe.N if isinstance(recipe, SyntheticRecipe) else DEFAULT_N
        return ExperimentConfig(
            name=name, data=recipe, loss_kind=LOGISTIC_L2,
            lambdas=(N ** -0.5, N ** -0.75, N ** -1.0),
            workers=(4,), algorithms=("d_svrg", "d_sarah", "d_mig", "d_agd"),
            rounds=40, baseline_rounds=400, replicates=3, master_seed=seed,
        )
    if name == "worker_sweep":
        recipe = data or SyntheticRecipe(LOGISTIC_L2, DEFAULT_N, DEFAULT_DIM, DEFAULT_DATA_SEED)
        N = recipe.N if isinstance(recipe, SyntheticRecipe) else DEFAULT_N
        return ExperimentConfig(
            name=name, data=recipe, loss_kind=LOGISTIC_L2,
            lambdas=(N ** -1.0,),
            workers=(4, 8, 16), algorithms=("d_svrg", "d_sarah", "d_mig", "d_agd"),
            rounds=40, baseline_rounds=400, replicates=3, master_seed=seed,
        )
    if name == "unbalanced":
        # low dimension on purpose: the 10-sample worker is then flat in many
        # directions where the global curvature is well above lambda, which is
        # what makes the unregularized update destabilizing at desk scale
        N = 10_000
        recipe = data or SyntheticRecipe(LOGISTIC_L2, N, 20, 7)
        if isinstance(recipe, SyntheticRecipe):
            N = recipe.N
        # mu = 0.1 / sqrt(0.1% of N), applied only to the smallest worker;
        # m defaults to 2N on all workers (use m_override for other budgets)
        return ExperimentConfig(
            name=name, data=recipe, loss_kind=LOGISTIC_L2,
            lambdas=(N ** -1.0,), workers=(4,),
            partition="fractions", fractions=(0.5, 0.3, 0.199, 0.001),
            algorithms=("d_svrg", "d_rsvrg"),
            mu_smallest=0.1 / math.sqrt(0.001 * N),
            m_override=2 * N,
            aggregation=AGG_AVERAGE,
            rounds=30, replicates=1, master_seed=seed,
        )
    if name == "nonconvex":
        recipe = data or SyntheticRecipe(
            LOGISTIC_NONCONVEX, DEFAULT_N, DEFAULT_DIM, DEFAULT_DATA_SEED
        )
        return ExperimentConfig(
            name=name, data=recipe, loss_kind=LOGISTIC_NONCONVEX,
            lambdas=(0.1,), workers=(4,),
            algorithms=("d_sarah", "d_gd"),
            rounds=10, baseline_rounds=20, replicates=3, master_seed=seed,
            metrics=("grad_norm_sq",),
        )
    raise HarnessError(f"unknown preset: {name!r}")


def _format_float(value) -> str:
    return repr(float(value))


def emit_csv(rows, destination) -> None:
    """Write metric rows; full round-trip float precision, LF line endings."""
    if hasattr(destination, "write"):
        _write_csv(rows, destination)
        return
    try:
        with open(destination, "w", encoding="utf-8", newline="") as handle:
            _write_csv(rows, handle)
    except OSError as exc:
        raise HarnessError(f"cannot write CSV to {destination}: {exc}") from exc


def _write_csv(rows, handle) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([
            row.experiment,
            row.algorithm,
            row.seed,
            row.round,
            row.comm_rounds,
            row.grad_evals,
            "" if row.gap is None else _format_float(row.gap),
            _format_float(row.grad_norm_sq),
            int(row.diverged),
        ])


def parse_csv(source):
    """Inverse of emit_csv; accepts a path, file object, or CSV text."""
    if hasattr(source, "read"):
        handle = source
    elif isinstance(source, str) and "\n" in source:
        handle = io.StringIO(source)
    else:
        handle = open(source, "r", encoding="utf-8", newline="")
    try:
        reader = csv.reader(handle)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise HarnessError(f"unexpected CSV header: {header}")
        rows = []
        for record in reader:
            rows.append(
                MetricRow(
                    experiment=record[0],
                    algorithm=record[1],
                    seed=int(record[2]),
                    round=int(record[3]),
                    comm_rounds=int(record[4]),
                    grad_evals=int(record[5]),
                    gap=None if record[6] == "" else float(record[6]),
                    grad_norm_sq=float(record[7]),
                    diverged=bool(int(record[8])),
                )
            )
        return rows
    finally:
        if handle is not source:
            handle.close()
