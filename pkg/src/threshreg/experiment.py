"""Configuration-driven simulation runner with incremental, resumable result storage."""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .data import (Dataset, Setting, TruthSpec, generate_ar1_design, load_csv, default_truth,
                   rescale_columns, simulate_response, stream_rng)
from .diagnostics import robust_spark_search
from .evaluation import (TuningGrid, compute_metrics, prediction_error, select_tuning,
                         tau_schedule, trimmed_mean)
from .exceptions import DataError, ThreshregError
from .glm import Family
from .penalty import Penalty
from .reference import oracle_mle
from .solver import FitConfig, fit_path

TEST_CHUNK = 2000
TRIM_FRACTION = 0.05

# per-replicate record columns, in file order
RECORD_FIELDS = ["replicate", "method", "status", "lam", "c6", "tau", "model_size", "pe", "l2",
                 "l1", "linf", "fp", "fn", "fs", "sign_consistent", "consistent", "kl_per_n",
                 "sigma_hat", "cycles", "converged", "seconds"]
MEASURES = ["pe", "l2", "l1", "linf", "fp", "fn", "fs", "sigma_hat", "kl_per_n", "model_size",
            "consistent", "sign_consistent"]
_INT_FIELDS = {"replicate", "model_size", "fp", "fn", "fs", "cycles"}
_BOOL_FIELDS = {"sign_consistent", "consistent", "converged"}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class MethodSpec:
    """A penalty plus whether the threshold tau is applied.

    ``thresholded=False`` fits with tau = 0 (the plain concave-penalty estimator).
    """

    name: str
    penalty: Penalty
    thresholded: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        try:
            pen = Penalty.parse(d["penalty"], d.get("a"))
        except KeyError:
            raise ConfigError("each method needs a 'penalty'") from None
        thr = bool(d.get("thresholded", True))
        name = d.get("name") or (f"{pen.kind.value.upper()}_t" if thr else pen.kind.value.upper())
        return cls(str(name), pen, thr)

    def as_dict(self) -> dict:
        return {"name": self.name, "penalty": self.penalty.kind.value, "a": self.penalty.a,
                "thresholded": self.thresholded}


@dataclass(frozen=True)
class ExperimentSpec:
    setting: str
    n: int
    p: int
    r: float = 0.25
    replications: int = 50
    methods: tuple = ()
    tuning: TuningGrid = field(default_factory=TuningGrid)
    master_seed: int = 0
    test_size: int = 10000
    output_dir: str = "runs/experiment"
    include_oracle: bool = True
    fit: FitConfig = field(default_factory=FitConfig)
    spark_c: float | None = None
    spark_budget: int = 2000
    csv_path: str | None = None
    response: str | None = None
    csv_family: str | None = None
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.setting not in ("linear", "logistic", "poisson", "csv"):
            raise ConfigError(f"unknown setting {self.setting!r}")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not self.methods:
            raise ConfigError("at least one method is required")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names) or "Oracle" in names:
            raise ConfigError("method names must be unique and differ from 'Oracle'")
        if self.setting == "csv":
            if not self.csv_path or not self.response or not self.csv_family:
                raise ConfigError("the csv setting needs csv_path, response and family")
            if self.tuning.method != "kfold":
                raise ConfigError("the csv setting tunes by k-fold cross-validation")
            if not 0 < self.test_fraction < 1:
                raise ConfigError("test_fraction must lie in (0, 1)")
        else:
            if self.n < 2 or self.p < 2:
                raise ConfigError("n and p must be at least 2")
            if not 0 <= self.r < 1:
                raise ConfigError("r must lie in [0, 1)")
            if self.test_size < 1:
                raise ConfigError("test_size must be positive")

    @property
    def family(self) -> Family:
        if self.setting == "csv":
            return Family.parse(self.csv_family)
        return Setting(self.setting).family

    @property
    def method_names(self) -> list[str]:
        names = [m.name for m in self.methods]
        if self.include_oracle and self.setting != "csv":
            names.append("Oracle")
        return names

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        d.pop("comment", None)
        d.pop("_comment", None)
        try:
            methods = tuple(MethodSpec.from_dict(m) for m in d.pop("methods", []))
            tuning = TuningGrid(**d.pop("tuning", {}))
            fit = FitConfig(**d.pop("fit", {}))
            if "csv" in d:
                c = d.pop("csv")
                d.update(csv_path=c.get("path"), response=c.get("response"),
                         csv_family=c.get("family"), test_fraction=c.get("test_fraction", 0.2))
                d.setdefault("n", 0)
                d.setdefault("p", 0)
            return cls(methods=methods, tuning=tuning, fit=fit, **d)
        except TypeError as exc:
            raise ConfigError(f"bad configuration: {exc}") from None
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def as_dict(self) -> dict:
        t = self.tuning
        return {"setting": self.setting, "n": self.n, "p": self.p, "r": self.r,
                "replications": self.replications,
                "methods": [m.as_dict() for m in self.methods],
                "tuning": {"c6_values": list(t.c6_values),
                           "lambda_values": None if t.lambda_values is None else list(t.lambda_values),
                           "method": t.method, "k": t.k, "n_lambda": t.n_lambda,
                           "lambda_ratio": t.lambda_ratio},
                "master_seed": self.master_seed, "test_size": self.test_size,
                "include_oracle": self.include_oracle,
                "fit": {"mode": self.fit.mode, "max_cycles": self.fit.max_cycles,
                        "tol": self.fit.tol, "spark_cap": self.fit.spark_cap},
                "spark_c": self.spark_c}


CONFIG_DIR = Path(__file__).with_name("configs")


def bundled_configs() -> list[str]:
    """Names of the configs shipped with the package."""
    return sorted(f.stem for f in CONFIG_DIR.glob("*.json"))


def load_config(path) -> ExperimentSpec:
    """Read a JSON config from ``path``, or a bundled config by bare name."""
    if not os.path.exists(path) and (CONFIG_DIR / f"{path}.json").is_file():
        path = CONFIG_DIR / f"{path}.json"
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentSpec.from_dict(d)


# ---------------------------------------------------------------------------
# one replicate


def _simulated_split(spec: ExperimentSpec, rep: int):
    family = spec.family
    truth = default_truth(Setting(spec.setting), spec.p)
    rng = stream_rng(spec.master_seed, rep, 0)
    Xraw = generate_ar1_design(spec.n, spec.p, spec.r, rng)
    X, scales = rescale_columns(Xraw)
    train = Dataset(X, simulate_response(family, X, truth, rng), family, scales, True)
    rng = stream_rng(spec.master_seed, rep, 1)
    Xv = generate_ar1_design(spec.n, spec.p, spec.r, rng) * scales
    valid = Dataset(Xv, simulate_response(family, Xv, truth, rng), family, scales, False)
    return train, valid, truth


def _test_chunks(spec: ExperimentSpec, rep: int, scales, truth: TruthSpec):
    rng = stream_rng(spec.master_seed, rep, 2)
    left = spec.test_size
    while left > 0:
        m = min(TEST_CHUNK, left)
        X = generate_ar1_design(m, spec.p, spec.r, rng) * scales
        yield X, simulate_response(spec.family, X, truth, rng)
        left -= m


def _empty_record(rep, name, status):
    rec = {k: math.nan for k in RECORD_FIELDS}
    rec.update(replicate=rep, method=name, status=status)
    for k in _INT_FIELDS | _BOOL_FIELDS:
        if k != "replicate":
            rec[k] = ""
    return rec


def _spark_cap(spec: ExperimentSpec, train: Dataset, rep: int):
    if spec.spark_c is None:
        return None
    est = robust_spark_search(train.X, spec.spark_c, spec.spark_budget,
                              stream_rng(spec.master_seed, rep, 4))
    return int(max(2, min(train.n + 1, est.value)))


def run_replicate(spec: ExperimentSpec, rep: int) -> list[dict]:
    """All method records for replicate ``rep`` (deterministic given the spec)."""
    with threadpool_limits(1):
        if spec.setting == "csv":
            return _run_csv_replicate(spec, rep)
        return _run_sim_replicate(spec, rep)


def _tune(spec, m: MethodSpec, train, valid, rep, cap):
    rng = stream_rng(spec.master_seed, rep, 3)
    return select_tuning(train, valid, m.penalty, spec.tuning, spec.fit, rng=rng,
                         spark_cap=cap, thresholded=m.thresholded)


def _run_sim_replicate(spec: ExperimentSpec, rep: int) -> list[dict]:
    train, valid, truth = _simulated_split(spec, rep)
    cap = _spark_cap(spec, train, rep)
    fits = {}
    records = {}
    for m in spec.methods:
        t0 = time.perf_counter()
        try:
            lam, c6, fit = _tune(spec, m, train, valid, rep, cap)
            fits[m.name] = (lam, c6, fit, time.perf_counter() - t0)
        except (ThreshregError, ArithmeticError, ValueError) as exc:
            records[m.name] = _empty_record(rep, m.name, f"failed: {exc}")
    if spec.include_oracle:
        t0 = time.perf_counter()
        try:
            beta = oracle_mle(train, spec.family, truth.support)
            fits["Oracle"] = (math.nan, math.nan, beta, time.perf_counter() - t0)
        except (ThreshregError, ArithmeticError, ValueError) as exc:
            records["Oracle"] = _empty_record(rep, "Oracle", f"failed: {exc}")
    sq = {name: 0.0 for name in fits}
    bad = set()
    for X, y in _test_chunks(spec, rep, train.column_scales, truth):
        for name, (_, _, fit, _) in fits.items():
            if name in bad:
                continue
            beta = fit if isinstance(fit, np.ndarray) else fit.beta
            try:
                sq[name] += prediction_error(spec.family, beta, X, y) * X.shape[0]
            except ArithmeticError:
                bad.add(name)
    for name, (lam, c6, fit, secs) in fits.items():
        if name in bad:
            records[name] = _empty_record(rep, name, "failed: test-set mean overflow")
            continue
        beta = fit if isinstance(fit, np.ndarray) else fit.beta
        met = compute_metrics(train, beta, truth.beta0, sq[name] / spec.test_size)
        oracle = isinstance(fit, np.ndarray)
        records[name] = {
            "replicate": rep, "method": name, "status": "ok", "lam": lam, "c6": c6,
            "tau": math.nan if oracle else fit.tau, "model_size": int(np.count_nonzero(beta)),
            "pe": met.pe, "l2": met.l2, "l1": met.l1, "linf": met.linf, "fp": met.fp,
            "fn": met.fn, "fs": met.fs, "sign_consistent": met.sign_consistent,
            "consistent": met.consistent, "kl_per_n": met.kl_per_n,
            "sigma_hat": math.nan if met.sigma_hat is None else met.sigma_hat,
            "cycles": 0 if oracle else fit.cycles_used,
            "converged": True if oracle else fit.converged, "seconds": secs}
    return [records[name] for name in spec.method_names]


def _run_csv_replicate(spec: ExperimentSpec, rep: int) -> list[dict]:
    raw = load_csv(spec.csv_path, spec.response, spec.csv_family, rescale=False)
    rng = stream_rng(spec.master_seed, rep, 0)
    perm = rng.permutation(raw.n)
    n_test = max(1, int(round(spec.test_fraction * raw.n)))
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    train = Dataset.from_arrays(raw.X[train_idx], raw.y[train_idx], raw.family)
    Xt = raw.X[test_idx] * train.column_scales
    yt = raw.y[test_idx]
    cap = _spark_cap(spec, train, rep)
    out = []
    for m in spec.methods:
        t0 = time.perf_counter()
        try:
            lam, c6, fit = _tune(spec, m, train, None, rep, cap)
            pe = prediction_error(raw.family, fit.beta, Xt, yt)
        except (ThreshregError, ArithmeticError, ValueError) as exc:
            out.append(_empty_record(rep, m.name, f"failed: {exc}"))
            continue
        rec = _empty_record(rep, m.name, "ok")
        rec.update(lam=lam, c6=c6, tau=fit.tau, model_size=fit.nnz, pe=pe,
                   cycles=fit.cycles_used, converged=fit.converged,
                   seconds=time.perf_counter() - t0)
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# storage


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def _parse(key, v):
    if key in ("method", "status"):
        return v
    if v == "":
        return "" if (key in _INT_FIELDS or key in _BOOL_FIELDS) else math.nan
    if key in _BOOL_FIELDS:
        return v == "1"
    if key in _INT_FIELDS:
        return int(v)
    return float(v)


@dataclass
class ResultStore:
    """Per-replicate records plus the deterministic aggregate table."""

    spec: ExperimentSpec
    records: list = field(default_factory=list)
    path_rows: list = field(default_factory=list)

    @property
    def statistic(self) -> str:
        return "trimmed_mean" if self.spec.setting == "poisson" else "mean"

    def by_method(self) -> dict:
        out = {name: [] for name in self.spec.method_names}
        for rec in sorted(self.records, key=lambda r: (r["replicate"], r["method"])):
            out.setdefault(rec["method"], []).append(rec)
        return out

    def aggregate(self) -> list[dict]:
        """Rows ``(method, measure, value, se, n)`` folded over sorted replicate ids.

        ``value`` is the mean, or the 5% trimmed mean for the Poisson setting;
        ``se`` is the sample sd over sqrt(R) (0 when R = 1).
        """
        rows = []
        for method, recs in self.by_method().items():
            ok = [r for r in recs if r["status"] == "ok"]
            rows.append({"method": method, "measure": "replicates_ok", "value": float(len(ok)),
                         "se": 0.0, "n": len(recs)})
            for meas in MEASURES:
                vals = np.array([float(r[meas]) for r in ok if r[meas] != ""
                                 and not (isinstance(r[meas], float) and math.isnan(r[meas]))])
                if vals.size == 0:
                    continue
                if self.statistic == "trimmed_mean" and meas not in ("consistent", "sign_consistent"):
                    value = trimmed_mean(vals, TRIM_FRACTION)
                else:
                    value = float(np.mean(vals))
                se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
                name = {"consistent": "consistency_probability",
                        "sign_consistent": "sign_consistency_probability"}.get(meas, meas)
                rows.append({"method": method, "measure": name, "value": value, "se": se,
                             "n": int(vals.size)})
        return rows

    def table(self) -> dict:
        """Nested ``{method: {measure: (value, se)}}`` view of :meth:`aggregate`."""
        out: dict = {}
        for row in self.aggregate():
            out.setdefault(row["method"], {})[row["measure"]] = (row["value"], row["se"])
        return out


def read_replicates(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_FIELDS:
            raise DataError(f"{path} does not have the expected replicate columns")
        return [{k: _parse(k, v) for k, v in row.items()} for row in reader]


def _append(path: Path, records: list[dict]):
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RECORD_FIELDS)
        for rec in records:
            w.writerow([_fmt(rec[k]) for k in RECORD_FIELDS])
        fh.flush()
        os.fsync(fh.fileno())


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("THRESHREG_WORKERS", "1")))
    except ValueError:
        return 1


def run_experiment(spec: ExperimentSpec, workers: int | None = None, resume: bool = True,
                   output_dir=None, with_path: bool = True) -> ResultStore:
    """Run every replicate, appending records to ``replicates.csv`` as they finish.

    Replicates already present in an existing ``replicates.csv`` (all methods
    recorded) are skipped when ``resume`` is true. Records are round-tripped
    through their text form so that resumed and fresh runs aggregate identically.
    """
    out = Path(output_dir or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep_path = out / "replicates.csv"
    (out / "config.json").write_text(json.dumps(spec.as_dict(), indent=2) + "\n", encoding="utf-8")
    names = set(spec.method_names)
    done_records = []
    if resume:
        existing = read_replicates(rep_path)
        per = {}
        for rec in existing:
            per.setdefault(rec["replicate"], []).append(rec)
        complete = {r for r, recs in per.items() if {x["method"] for x in recs} >= names}
        done_records = [rec for rec in existing if rec["replicate"] in complete]
        if len(done_records) != len(existing):
            _rewrite(rep_path, done_records)
    else:
        _rewrite(rep_path, [])
    done = {rec["replicate"] for rec in done_records}
    todo = [r for r in range(spec.replications) if r not in done]
    workers = default_workers() if workers is None else max(1, int(workers))
    fresh = []
    if workers == 1 or len(todo) <= 1:
        for rep in todo:
            recs = run_replicate(spec, rep)
            _append(rep_path, recs)
            fresh += recs
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(run_replicate, spec, rep) for rep in todo]
            for fut in as_completed(futs):
                recs = fut.result()
                _append(rep_path, recs)
                fresh += recs
    fresh = [{k: _parse(k, _fmt(v)) if k not in ("method", "status") else v
              for k, v in rec.items()} for rec in fresh]
    records = [r for r in done_records + fresh if r["replicate"] < spec.replications]
    store = ResultStore(spec, records)
    if with_path and spec.setting != "csv":
        store.path_rows = example_paths(spec, store)
    return store


def _rewrite(path: Path, records):
    if path.exists():
        path.unlink()
    if records:
        _append(path, records)


def example_paths(spec: ExperimentSpec, store: ResultStore) -> list[dict]:
    """Coefficient paths on replicate 0's training data at each method's selected c6."""
    train, _, _ = _simulated_split(spec, 0)
    chosen = {r["method"]: r for r in store.records if r["replicate"] == 0}
    rows = []
    with threadpool_limits(1):
        lams = spec.tuning.lambdas(train)
        for m in spec.methods:
            rec = chosen.get(m.name)
            if rec is None or rec["status"] != "ok":
                continue
            tau = tau_schedule(rec["c6"], train.n, train.p) if m.thresholded else 0.0
            cap = _spark_cap(spec, train, 0)
            for fit in fit_path(train, train.family, m.penalty, lams, tau, spec.fit, cap):
                for j in fit.support:
                    rows.append({"method": m.name, "lambda": float(fit.lam), "tau": float(fit.tau),
                                 "index": j, "coef": float(fit.beta[j])})
    return rows


# ---------------------------------------------------------------------------
# emission

_MEASURE_LABELS = [("pe", "PE"), ("l2", "L2 loss"), ("l1", "L1 loss"), ("linf", "Linf loss"),
                   ("fp", "FP"), ("fn", "FN"), ("fs", "FS"), ("sigma_hat", "sigma_hat"),
                   ("kl_per_n", "KL / n"), ("model_size", "Model size"),
                   ("consistency_probability", "Consistency"),
                   ("sign_consistency_probability", "Sign consistency")]


def emit_tables(store: ResultStore, formats=("csv", "json", "markdown"), output_dir=None) -> list[Path]:
    """Write aggregate tables (and the example path file) in the requested formats."""
    out = Path(output_dir or store.spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not store.records:
        raise ValueError("result store is empty")
    rows = store.aggregate()
    written = []
    for fmt in formats:
        if fmt == "csv":
            p = out / "aggregate.csv"
            with p.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["method", "measure", "statistic", "value", "se", "n"])
                for r in rows:
                    stat = "mean" if r["measure"].endswith("probability") or r["measure"] == "replicates_ok" \
                        else store.statistic
                    w.writerow([r["method"], r["measure"], stat, _fmt(r["value"]), _fmt(r["se"]), r["n"]])
        elif fmt == "json":
            p = out / "aggregate.json"
            tab = store.table()
            doc = {"setting": store.spec.setting, "statistic": store.statistic,
                   "replications": store.spec.replications, "master_seed": store.spec.master_seed,
                   "methods": {m: {k: {"value": v, "se": s} for k, (v, s) in meas.items()}
                               for m, meas in tab.items()}}
            p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        elif fmt == "markdown":
            p = out / "aggregate.md"
            p.write_text(markdown_table(store) + "\n", encoding="utf-8")
        else:
            raise ValueError(f"unknown format {fmt!r}")
        written.append(p)
    if store.path_rows:
        p = out / "path.csv"
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "lambda", "tau", "index", "coef"])
            for r in store.path_rows:
                w.writerow([r["method"], _fmt(r["lambda"]), _fmt(r["tau"]), r["index"], _fmt(r["coef"])])
        written.append(p)
    return written


def markdown_table(store: ResultStore) -> str:
    """Measures as rows, methods as columns, entries ``value (se)``."""
    tab = store.table()
    methods = [m for m in store.spec.method_names if m in tab]
    head = f"| Measure | {' | '.join(methods)} |"
    lines = [head, "|" + "---|" * (len(methods) + 1)]
    for key, label in _MEASURE_LABELS:
        if not any(key in tab[m] for m in methods):
            continue
        cells = []
        for m in methods:
            if key in tab[m]:
                v, s = tab[m][key]
                cells.append(f"{v:.4f} ({s:.4f})")
            else:
                cells.append("-")
        lines.append(f"| {label} | {' | '.join(cells)} |")
    note = "5% trimmed means" if store.statistic == "trimmed_mean" else "means"
    lines.append("")
    lines.append(f"Entries are {note} over replicates with standard errors in parentheses; "
                 f"consistency is the fraction of replicates with FP = FN = 0.")
    return "\n".join(lines)
