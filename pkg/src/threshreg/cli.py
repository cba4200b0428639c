"""Command-line entry point: ``threshreg {fit,path,simulate,tune,spark,oracle-check}``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (Dataset, Setting, generate_ar1_design, load_csv, default_truth, rescale_columns,
                   simulate_response, stream_rng)
from .diagnostics import (eta_infinity, gamma_n_gaussian, gamma_star_gaussian, robust_spark_exact,
                          robust_spark_search, tau_threshold_check)
from .evaluation import TuningGrid, lambda_grid, select_tuning, tau_schedule
from .exceptions import DataError, DomainError, SolverError, ThreshregError
from .experiment import ConfigError, emit_tables, load_config, markdown_table, run_experiment
from .glm import Family
from .penalty import Penalty, PenaltyKind, RegObjective
from .reference import oracle_agreement
from .solver import FitConfig, fit_ica, fit_path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_data_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("data (either a CSV file or a simulated design)")
    g.add_argument("--data", help="CSV file with a header row")
    g.add_argument("--response", help="name of the response column in --data")
    g.add_argument("--family", help="gaussian, bernoulli or poisson (for --data)")
    g.add_argument("--setting", choices=[s.value for s in Setting],
                   help="simulate the named design instead of reading --data")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--p", type=int, default=200)
    g.add_argument("--r", type=float, default=0.25)
    g.add_argument("--seed", type=int, default=0)


def _add_penalty_args(p):
    p.add_argument("--penalty", default="scad", help="l1, scad, mcp, sica or hard")
    p.add_argument("--a", type=float, default=None, help="penalty shape parameter")
    p.add_argument("--mode", choices=["exact", "drop"], default="exact")
    p.add_argument("--spark-cap", type=int, default=None)
    p.add_argument("--max-cycles", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-7)


def _load_data(args):
    """Return (training Dataset, truth or None)."""
    if args.data and args.setting:
        raise UsageError("give either --data or --setting, not both")
    if args.data:
        if not args.response or not args.family:
            raise UsageError("--data needs --response and --family")
        return load_csv(args.data, args.response, args.family), None
    if not args.setting:
        raise UsageError("one of --data or --setting is required")
    setting = Setting(args.setting)
    truth = default_truth(setting, args.p)
    rng = stream_rng(args.seed, 0, 0)
    X, scales = rescale_columns(generate_ar1_design(args.n, args.p, args.r, rng))
    y = simulate_response(setting.family, X, truth, rng)
    return Dataset(X, y, setting.family, scales, True), truth


def _penalty(args) -> Penalty:
    try:
        pen = Penalty.parse(args.penalty, args.a)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if pen.kind is PenaltyKind.L0:
        raise UsageError("the l0 penalty is only available through oracle-check")
    return pen


def _fit_cfg(args) -> FitConfig:
    return FitConfig(max_cycles=args.max_cycles, tol=args.tol, mode=args.mode,
                     spark_cap=args.spark_cap)


def _tau(args, data) -> float:
    if args.tau is not None and args.c6 is not None:
        raise UsageError("give --tau or --c6, not both")
    if args.tau is not None:
        return args.tau
    if args.c6 is not None:
        return tau_schedule(args.c6, data.n, data.p)
    return 0.0


def _fmt_beta(beta, names=None):
    nz = np.flatnonzero(beta)
    if nz.size == 0:
        return "  (all coefficients are zero)"
    lab = (lambda j: names[j]) if names else (lambda j: f"x{j}")
    return "\n".join(f"  {lab(j):>12s}  {beta[j]: .6g}" for j in nz)


def cmd_fit(args) -> int:
    data, truth = _load_data(args)
    pen = _penalty(args)
    tau = _tau(args, data)
    obj = RegObjective(data.family, pen, args.lam, tau)
    res = fit_ica(data, obj, _fit_cfg(args))
    eta = eta_infinity(data.family, data.X, data.y, res.beta)
    if args.json:
        print(json.dumps({"penalty": str(pen), "lambda": args.lam, "tau": tau,
                          "objective": res.objective, "cycles": res.cycles_used,
                          "converged": res.converged, "eta_inf": eta,
                          "support": list(res.support),
                          "coef": {str(j): float(res.beta[j]) for j in res.support}}, indent=2))
        return EXIT_OK
    print(f"penalty {pen}  lambda {args.lam:.6g}  tau {tau:.6g}  mode {res.mode}")
    print(f"objective {res.objective:.10g}  cycles {res.cycles_used}  converged {res.converged}")
    print(f"eta_inf {eta:.6g}  nonzeros {res.nnz}")
    print(_fmt_beta(res.beta, data.feature_names))
    if truth is not None and res.nnz:
        flag = tau_threshold_check(eta, args.lam, tau, float(np.min(np.abs(truth.beta0[list(truth.support)]))),
                                   truth.s)
        print(f"threshold check (heuristic): {'pass' if flag else 'fail'}")
    return EXIT_OK


def cmd_path(args) -> int:
    data, _ = _load_data(args)
    pen = _penalty(args)
    tau = _tau(args, data)
    grid = lambda_grid(data, args.n_lambda, args.ratio)
    fits = fit_path(data, data.family, pen, grid, tau, _fit_cfg(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "path.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "lambda", "tau", "index", "coef"])
        for f in fits:
            for j in f.support:
                w.writerow([str(pen), repr(f.lam), repr(f.tau), j, repr(float(f.beta[j]))])
    print(f"wrote {len(fits)} fits to {path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if not args.config:
        raise UsageError("simulate needs --config")
    spec = load_config(args.config)
    if args.seed is not None:
        spec = replace(spec, master_seed=args.seed)
    if args.out:
        spec = replace(spec, output_dir=args.out)
    if args.replications is not None:
        spec = replace(spec, replications=args.replications)
    store = run_experiment(spec, workers=args.workers, resume=not args.fresh)
    formats = args.format or ["csv", "json", "markdown"]
    files = emit_tables(store, formats)
    print(markdown_table(store))
    print("\nwrote " + ", ".join(str(f) for f in files + [Path(spec.output_dir) / "replicates.csv"]))
    return EXIT_OK


def cmd_tune(args) -> int:
    data, _ = _load_data(args)
    pen = _penalty(args)
    c6 = tuple(args.c6_values) if args.c6_values else TuningGrid().c6_values
    grid = TuningGrid(c6_values=c6, method="kfold", k=args.k, n_lambda=args.n_lambda,
                      lambda_ratio=args.ratio)
    lam, c6w, fit = select_tuning(data, None, pen, grid, _fit_cfg(args),
                                  rng=stream_rng(args.seed, 0, 3))
    print(f"penalty {pen}  selected lambda {lam:.6g}  c6 {c6w:g}  tau {fit.tau:.6g}")
    print(f"objective {fit.objective:.10g}  nonzeros {fit.nnz}  converged {fit.converged}")
    print(_fmt_beta(fit.beta, data.feature_names))
    return EXIT_OK


def cmd_spark(args) -> int:
    data, truth = _load_data(args)
    if args.exact:
        est = robust_spark_exact(data.X, args.c)
    else:
        est = robust_spark_search(data.X, args.c, args.budget, stream_rng(args.seed, 0, 4))
    print(f"robust spark (c={args.c:g}): {est.value}  [{est.kind}]")
    if est.witness:
        print(f"witness columns: {list(est.witness)}")
    if truth is not None and data.family is Family.GAUSSIAN:
        S = list(truth.support)
        print(f"gamma_star {gamma_star_gaussian(data.X, S):.6g}")
        print(f"gamma_n    {gamma_n_gaussian(data.X, S, truth.s):.6g}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    pens = [s.strip() for s in args.penalties.split(",") if s.strip()]
    for name in pens:
        rep = oracle_agreement(Penalty.parse(name), args.instances, args.seed)
        print(f"{name:>5s}: ICA matches the global minimum in {rep.agree}/{rep.instances} instances "
              f"(rate {rep.rate:.2f}); below-oracle violations {rep.below}; "
              f"largest gap {rep.max_gap:.3g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="threshreg", description="Thresholded concave-penalized GLM fitting and simulation.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", help="fit one model and print coefficients and eta_inf")
    _add_data_args(p)
    _add_penalty_args(p)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--c6", type=float, help="set tau from the c6 schedule")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("path", help="fit a warm-started lambda path and write path.csv")
    _add_data_args(p)
    _add_penalty_args(p)
    p.add_argument("--tau", type=float)
    p.add_argument("--c6", type=float)
    p.add_argument("--n-lambda", type=int, default=50)
    p.add_argument("--ratio", type=float, default=1e-3)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("simulate", help="run a simulation experiment from a JSON config")
    p.add_argument("--config", required=True, help="JSON file, or the name of a bundled config")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--workers", type=int, help="parallel replicates (default $THRESHREG_WORKERS or 1)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--format", action="append", choices=["csv", "json", "markdown"])
    p.add_argument("--replications", type=int, help="override the replicate count")
    p.add_argument("--fresh", action="store_true", help="discard existing replicate records")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", help="k-fold grid search over (lambda, c6)")
    _add_data_args(p)
    _add_penalty_args(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--c6-values", type=float, nargs="+")
    p.add_argument("--n-lambda", type=int, default=50)
    p.add_argument("--ratio", type=float, default=1e-3)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("spark", help="robust spark and design constants")
    _add_data_args(p)
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--budget", type=int, default=5000)
    p.add_argument("--exact", action="store_true", help="exhaustive enumeration (p <= 20)")
    p.set_defaults(func=cmd_spark)

    p = sub.add_parser("oracle-check", help="compare ICA with brute-force enumeration on tiny problems")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--penalties", default="scad,l1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"threshreg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, DomainError) as exc:
        print(f"threshreg: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DataError, ThreshregError, ValueError, OSError) as exc:
        print(f"threshreg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
