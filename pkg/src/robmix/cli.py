"""Command-line interface: ``simulate``, ``fit`` and ``benchmark``.

Exit codes: 0 success, 2 usage error, 3 fit failure, 4 I/O or file-format
error.  Every command writes a ``<out>.manifest.json`` sidecar recording the
invocation, so runs can be reproduced; all other outputs depend only on the
flags (fixed seed => byte-identical files).

The default seed is 0, overridable with the ``ROBMIX_SEED`` environment
variable or the ``--seed`` flag.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from importlib.metadata import PackageNotFoundError, version

from . import dataio
from .evaluate import BenchmarkFailureError, run_benchmark
from .mixture import FitConfig, FitFailureError, Solver, fit
from .simulate import (
    BALANCED_PRIORS,
    UNBALANCED_PRIORS,
    ScenarioSpec,
    generate,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FIT_FAILURE = 3
EXIT_IO = 4


def _tool_version() -> str:
    try:
        return version("robmix")
    except PackageNotFoundError:
        return "unknown"


def _default_seed() -> int:
    raw = os.environ.get("ROBMIX_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise SystemExit(f"ROBMIX_SEED must be an integer: {exc}")


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {n}")
    return n


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", type=int, choices=(1, 2), required=True,
                   help="generating model: 1 (K=2, P=2) or 2 (K=3, P=1)")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3, 4, 5), required=True,
                   help="noise scenario (1 normal, 2 t1, 3 t3, 4/5 mean shifts)")
    p.add_argument("--n", type=_positive_int, required=True, help="sample size")
    p.add_argument("--priors", choices=("balanced", "unbalanced"),
                   default="balanced", help="component prior preset")


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", choices=[s.value for s in Solver], default="cat")
    p.add_argument("--starts", type=_positive_int, default=20,
                   help="number of random starts")
    p.add_argument("--max-iter", type=_positive_int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--cutoff", type=float, default=2.5,
                   help="standardized-residual outlier cutoff")
    p.add_argument("--init-size", type=_positive_int, default=None,
                   help="initialization subsample size (default max(P+2, 10))")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robmix",
        description="Robust mixture-of-regressions fitting and benchmarking.",
    )
    parser.add_argument("--version", action="version", version=_tool_version())
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="write a synthetic dataset CSV + truth sidecar")
    _add_scenario_flags(ps)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--out", required=True,
                    help="output prefix; writes <out>.csv and <out>.truth.json")

    pf = sub.add_parser("fit", help="fit a mixture to a dataset CSV")
    pf.add_argument("--input", required=True, help="dataset CSV (header y,x1,...,xP)")
    pf.add_argument("--k", type=_positive_int, required=True,
                    help="number of components")
    _add_fit_flags(pf)
    pf.add_argument("--seed", type=int, default=None)
    pf.add_argument("--out", required=True,
                    help="output prefix; writes <out>.model.json, "
                         "<out>.assignments.csv, <out>.trace.csv")

    pb = sub.add_parser("benchmark", help="Monte Carlo bias/MSE table for one scenario")
    _add_scenario_flags(pb)
    _add_fit_flags(pb)
    pb.add_argument("--reps", type=_positive_int, required=True)
    pb.add_argument("--threads", type=_positive_int, default=None,
                    help="worker processes (default: all cores)")
    pb.add_argument("--seed", type=int, default=None)
    pb.add_argument("--out", required=True,
                    help="output prefix; writes <out>.report.csv and <out>.report.json")
    return parser


def _scenario_from_args(args) -> ScenarioSpec:
    priors = (BALANCED_PRIORS if args.priors == "balanced"
              else UNBALANCED_PRIORS)[args.model]
    return ScenarioSpec(model=args.model, scenario=args.scenario, n=args.n,
                        priors=priors, seed=args.seed)


def _config_from_args(args, k: int) -> FitConfig:
    return FitConfig(
        k=k,
        solver=Solver(args.solver),
        n_starts=args.starts,
        max_iter=args.max_iter,
        tol=args.tol,
        init_sample_size=args.init_size,
        outlier_cutoff=args.cutoff,
        seed=args.seed,
    )


def _write_manifest(prefix: str, command: str, args_ns, inputs, outputs,
                    config: dict, started: float) -> None:
    path = f"{prefix}.manifest.json"
    dataio.write_json(path, {
        "schema": dataio.SCHEMA_MANIFEST,
        "command": command,
        "argv": sys.argv[1:],
        "inputs": list(inputs),
        "outputs": list(outputs),
        "config": config,
        "version": _tool_version(),
        "wall_time_s": time.monotonic() - started,
    })


def _cmd_simulate(args) -> int:
    started = time.monotonic()
    spec = _scenario_from_args(args)
    sim = generate(spec)
    csv_path = f"{args.out}.csv"
    truth_path = f"{args.out}.truth.json"
    dataio.write_dataset_csv(csv_path, sim.data)
    dataio.write_truth_json(truth_path, sim, spec)
    _write_manifest(args.out, "simulate", args, [], [csv_path, truth_path],
                    {"model": spec.model, "scenario": spec.scenario, "n": spec.n,
                     "priors": list(spec.priors), "seed": spec.seed}, started)
    print(f"wrote {csv_path} ({sim.data.n} rows) and {truth_path}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    started = time.monotonic()
    data = dataio.read_dataset_csv(args.input)
    cfg = _config_from_args(args, args.k)
    result = fit(data, cfg)
    model_path = f"{args.out}.model.json"
    assign_path = f"{args.out}.assignments.csv"
    trace_path = f"{args.out}.trace.csv"
    dataio.write_fit_json(model_path, result, cfg)
    dataio.write_assignments_csv(assign_path, result)
    dataio.write_trace_csv(trace_path, result)
    _write_manifest(args.out, "fit", args, [args.input],
                    [model_path, assign_path, trace_path],
                    {"solver": cfg.solver.value, "k": cfg.k, "n_starts": cfg.n_starts,
                     "max_iter": cfg.max_iter, "tol": cfg.tol,
                     "outlier_cutoff": cfg.outlier_cutoff, "seed": cfg.seed}, started)
    print(f"solver={cfg.solver.value} converged={result.converged} "
          f"iterations={result.iterations} outliers={len(result.outliers)}")
    return EXIT_OK


def _cmd_benchmark(args) -> int:
    started = time.monotonic()
    spec = _scenario_from_args(args)
    cfg = _config_from_args(args, spec.k)
    report = run_benchmark(spec, cfg, args.reps, threads=args.threads)
    csv_path = f"{args.out}.report.csv"
    json_path = f"{args.out}.report.json"
    dataio.write_report_csv(csv_path, report)
    dataio.write_json(json_path, dataio.report_to_dict(report, spec, cfg, args.reps))
    _write_manifest(args.out, "benchmark", args, [], [csv_path, json_path],
                    {"model": spec.model, "scenario": spec.scenario, "n": spec.n,
                     "priors": list(spec.priors), "solver": cfg.solver.value,
                     "reps": args.reps, "seed": args.seed}, started)
    print(f"wrote {csv_path} ({len(report.names)} parameter rows, "
          f"{report.n_failed} failed reps)")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None:
        args.seed = _default_seed()
    handler = {"simulate": _cmd_simulate, "fit": _cmd_fit,
               "benchmark": _cmd_benchmark}[args.command]
    try:
        return handler(args)
    except (FitFailureError, BenchmarkFailureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT_FAILURE
    except dataio.DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        parser.exit(EXIT_USAGE, f"error: {exc}\n")
        return EXIT_USAGE  # unreachable; parser.exit raises


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
