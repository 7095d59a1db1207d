"""Command-line front end: run, preset, diagnose, inspect."""
from __future__ import annotations

import argparse
import sys
import csv
from dataclasses import replace as dc_replace

from .data import DataError, normalize_features, parse_libsvm, partition_equal, synthesize
from .diagnostics import FULL, estimate_c, reference_optimum, verify_identities
from .harness import (
    PRESET_NAMES,
    HarnessError,
    REFERENCE_GRAD_TOL,
    emit_csv,
    preset,
    rows_from_trace,
    run_experiment,
)
from .losses import (
    LOGISTIC_L2,
    LOGISTIC_NONCONVEX,
    QUADRATIC,
    LossSpec,
    ModelError,
    smoothness_constants,
)
from .orchestrator import (
    AGG_AVERAGE,
    AGG_SELECT,
    ALGORITHMS,
    D_AGD,
    D_GD,
    D_RSVRG,
    RunConfig,
    default_parameters,
    run,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

_LOSS_NAMES = {
    "logistic_l2": LOGISTIC_L2,
    "logistic_ncvx": LOGISTIC_NONCONVEX,
    "quadratic": QUADRATIC,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # spec'd exit code for usage errors is 1, not argparse's 2
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dvropt", description="Distributed variance-reduced optimization testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment and write a CSV trace")
    p_run.add_argument("--data", required=True,
                       help="libsvm file path or synthetic:N,d")
    p_run.add_argument("--loss", default="logistic_l2", choices=sorted(_LOSS_NAMES))
    p_run.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="regularization weight (default 1/N)")
    p_run.add_argument("--algo", required=True, choices=ALGORITHMS)
    p_run.add_argument("--workers", type=int, required=True)
    p_run.add_argument("--rounds", type=int, required=True)
    p_run.add_argument("--eta", type=float, default=None, help="step size (default per algorithm)")
    p_run.add_argument("--m", type=int, default=None, help="inner iterations (default 2N/n)")
    p_run.add_argument("--theta", type=float, default=None, help="MiG coupling (default 0.5)")
    p_run.add_argument("--w", type=float, default=None, help="MiG weight (default 1+eta*sigma)")
    p_run.add_argument("--mu", default=None,
                       help="per-worker regularization, e.g. 3:0.1 or *:0.1 (comma separated)")
    p_run.add_argument("--aggregate", choices=("select", "average"), default=None,
                       help="PS rule (default: average for d_mig, select otherwise)")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", required=True)

    p_preset = sub.add_parser("preset", help="run a named experiment preset")
    p_preset.add_argument("--name", required=True, choices=PRESET_NAMES)
    p_preset.add_argument("--data", default=None, help="optional libsvm file path")
    p_preset.add_argument("--seed", type=int, default=0)
    p_preset.add_argument("--out", required=True)

    p_diag = sub.add_parser("diagnose", help="estimate distributed smoothness and run identity checks")
    p_diag.add_argument("--data", required=True)
    p_diag.add_argument("--workers", type=int, required=True)
    p_diag.add_argument("--probes", type=int, default=64)
    p_diag.add_argument("--loss", default="logistic_l2", choices=sorted(_LOSS_NAMES))
    p_diag.add_argument("--lambda", dest="lam", type=float, default=None)
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.add_argument("--out", required=True)

    p_inspect = sub.add_parser("inspect", help="print dataset summary")
    p_inspect.add_argument("--data", required=True)
    return parser


def _load_data(text: str, loss_kind: str, seed: int):
    if text.startswith("synthetic:"):
        try:
            n_text, d_text = text[len("synthetic:"):].split(",")
            N, d = int(n_text), int(d_text)
        except ValueError:
            raise _UsageError(f"bad synthetic dataset spec: {text!r}")
        return synthesize(loss_kind, N, d, seed)
    with open(text, "r", encoding="utf-8") as handle:
        dataset = parse_libsvm(handle)
    if loss_kind != QUADRATIC:
        dataset = normalize_features(dataset)
    return dataset


def _parse_mu(text: str, n: int) -> dict:
    mu = {}
    for chunk in text.split(","):
        try:
            key, value = chunk.split(":")
            val = float(value)
        except ValueError:
            raise _UsageError(f"bad --mu entry: {chunk!r}")
        if key == "*":
            for k in range(n):
                mu[k] = val
        else:
            try:
                worker = int(key)
            except ValueError:
                raise _UsageError(f"bad --mu worker id: {key!r}")
            if not 0 <= worker < n:
                raise _UsageError(f"--mu worker {worker} out of range for {n} workers")
            mu[worker] = val
    return mu


def _cmd_run(args) -> int:
    loss_kind = _LOSS_NAMES[args.loss]
    dataset = _load_data(args.data, loss_kind, args.seed)
    lam = args.lam if args.lam is not None else 1.0 / len(dataset)
    spec = LossSpec(loss_kind, lam)
    if args.rounds == 0:
        emit_csv([], args.out)
        return EXIT_OK
    sm = smoothness_constants(spec, dataset)
    partition = partition_equal(dataset, args.workers, args.seed)
    solver = default_parameters(args.algo, sm, len(dataset), args.workers)
    overrides = {}
    if args.eta is not None:
        overrides["eta"] = args.eta
    if args.m is not None and args.algo not in (D_GD, D_AGD):
        overrides["m"] = args.m
    if args.theta is not None:
        overrides["theta"] = args.theta
    if args.w is not None:
        overrides["w"] = args.w
    try:
        solver = dc_replace(solver, **overrides)
    except TypeError:
        raise _UsageError(f"option not valid for algorithm {args.algo}")
    mu_by_worker = _parse_mu(args.mu, args.workers) if args.mu else {}
    if args.algo == D_RSVRG and not mu_by_worker:
        raise _UsageError("d_rsvrg requires --mu")
    if args.aggregate is None:
        aggregation = AGG_AVERAGE if args.algo == "d_mig" else AGG_SELECT
    else:
        aggregation = AGG_AVERAGE if args.aggregate == "average" else AGG_SELECT
    cfg = RunConfig(
        algorithm=args.algo,
        solver=solver,
        rounds=args.rounds,
        aggregation=aggregation,
        master_seed=args.seed,
        mu_by_worker=mu_by_worker,
    )
    f_star = None
    if sm.sigma > 0:
        f_star = reference_optimum(spec, dataset, partition, REFERENCE_GRAD_TOL).f_star
    trace = run(spec, dataset, partition, cfg)
    experiment = f"run[{args.algo},lam={lam:.6g},n={args.workers}]"
    emit_csv(rows_from_trace(experiment, args.algo, args.seed, trace, f_star), args.out)
    return EXIT_DIVERGED if trace.diverged else EXIT_OK


def _cmd_preset(args) -> int:
    config = preset(args.name, data=args.data, seed=args.seed)
    rows = run_experiment(config)
    emit_csv(rows, args.out)
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    loss_kind = _LOSS_NAMES[args.loss]
    dataset = _load_data(args.data, loss_kind, args.seed)
    lam = args.lam if args.lam is not None else 1.0 / len(dataset)
    spec = LossSpec(loss_kind, lam)
    partition = partition_equal(dataset, args.workers, args.seed)
    sm = smoothness_constants(spec, dataset)
    x_ref = None
    if sm.sigma > 0:
        x_ref = reference_optimum(spec, dataset, partition, 1e-9).x_star
    mode = "restricted" if x_ref is not None else FULL
    estimate = estimate_c(spec, dataset, partition, mode, x_ref=x_ref,
                          probes=args.probes, seed=args.seed)
    report = verify_identities(spec, dataset, partition, seed=args.seed)
    with open(args.out, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("record", "name", "value", "passed"))
        for k, c_k in enumerate(estimate.c_values):
            # sampled supremum: a lower bound on the true c_k
            writer.writerow((f"c_estimate_{estimate.mode}", f"worker_{k}", repr(c_k), ""))
        for check in report.checks:
            writer.writerow(("identity", check.name, repr(check.worst_residual),
                             int(check.passed)))
    return EXIT_OK


def _cmd_inspect(args) -> int:
    with open(args.data, "r", encoding="utf-8") as handle:
        dataset = parse_libsvm(handle)
    positives = sum(1 for z in dataset.samples if z.label == 1.0)
    negatives = len(dataset) - positives
    print(f"samples: {len(dataset)}")
    print(f"dimension: {dataset.dim}")
    print(f"labels: +1 x {positives}, -1 x {negatives}")
    print(f"max row norm^2: {dataset.max_row_norm_sq():.12g}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    commands = {
        "run": _cmd_run,
        "preset": _cmd_preset,
        "diagnose": _cmd_diagnose,
        "inspect": _cmd_inspect,
    }
    try:
        return commands[args.command](args)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (ModelError, HarnessError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
