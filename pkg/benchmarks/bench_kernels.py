"""Time the compiled and pure-Python coordinate-descent kernels on the same fits.

    python3 benchmarks/bench_kernels.py [--repeats 3] [--quick]

Each row runs one cold-start fit at lambda = 0.1 lambda_max with both
kernels and reports the median wall time, the speedup and the objective gap.
"""
import argparse
import statistics
import time

import numpy as np

from threshreg import _backend
from threshreg.data import Dataset, generate_ar1_design, default_truth, rescale_columns, simulate_response
from threshreg.evaluation import lambda_max, tau_schedule
from threshreg.penalty import Penalty, RegObjective
from threshreg.solver import FitConfig, fit_ica

CASES = [
    ("linear", 100, 200, "scad"),
    ("linear", 100, 1000, "scad"),
    ("linear", 400, 1000, "l1"),
    ("logistic", 200, 100, "scad"),
    ("logistic", 200, 1000, "sica"),
    ("poisson", 200, 100, "sica"),
]


def make(setting, n, p, seed=0):
    rng = np.random.default_rng(seed)
    truth = default_truth(setting, p)
    X, sc = rescale_columns(generate_ar1_design(n, p, 0.25, rng))
    fam = {"linear": "gaussian", "logistic": "bernoulli", "poisson": "poisson"}[setting]
    return Dataset(X, simulate_response(fam, X, truth, rng), fam, sc)


def time_fit(data, obj, backend, repeats):
    times, res = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        res = fit_ica(data, obj, FitConfig(backend=backend))
        times.append(time.perf_counter() - t0)
    return statistics.median(times), res


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="only the first two cases")
    args = ap.parse_args()
    if "cython" not in _backend.KERNELS:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
    cases = CASES[:2] if args.quick else CASES
    print(f"{'setting':<9} {'n':>4} {'p':>5} {'penalty':<7} {'nnz':>4} {'python s':>9} {'cython s':>9} "
          f"{'speedup':>8} {'obj gap':>9}")
    for setting, n, p, pen in cases:
        data = make(setting, n, p)
        lam = 0.1 * lambda_max(data)
        obj = RegObjective(data.family, Penalty.parse(pen), lam, tau_schedule(0.5, n, p))
        tp, rp = time_fit(data, obj, "python", max(1, args.repeats // 2))
        tc, rc = time_fit(data, obj, "cython", args.repeats)
        print(f"{setting:<9} {n:>4} {p:>5} {pen:<7} {rc.nnz:>4} {tp:>9.4f} {tc:>9.4f} {tp / tc:>7.1f}x "
              f"{abs(rp.objective - rc.objective):>9.1e}")


if __name__ == "__main__":
    main()
