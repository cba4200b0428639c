"""Thresholded coordinate descent (ICA) for penalized GLMs, with warm-started paths."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import _backend
from .data import Dataset
from .exceptions import DimensionError, DomainError, SolverError
from .glm import Family, b_double_prime, b_prime, check_response, score
from .penalty import Penalty, PenaltyKind, RegObjective, is_feasible, objective

WEIGHT_FLOOR = 1e-10


class DegenerateCurvatureWarning(RuntimeWarning):
    """Raised when working weights fall below the floor and are clipped."""


@dataclass(frozen=True)
class FitConfig:
    """Solver settings.

    ``spark_cap`` bounds the support size through ``nnz < spark_cap / 2``;
    ``None`` means ``n + 1``, the largest value the robust spark can take.
    ``init`` is ``None`` (or ``"zeros"``) for a zero start, ``"continuation"``
    to warm start along ``continuation_steps`` log-spaced lambdas from the null
    threshold down to the target, or a coefficient vector.
    """

    max_cycles: int = 500
    tol: float = 1e-7
    mode: str = "exact"
    spark_cap: int | None = None
    damping_max_halvings: int = 20
    init: np.ndarray | str | None = field(default=None, compare=False)
    backend: str | None = None
    continuation_steps: int = 10

    def __post_init__(self):
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.mode not in ("exact", "drop"):
            raise ValueError(f"mode must be 'exact' or 'drop', got {self.mode!r}")
        if self.spark_cap is not None and self.spark_cap < 2:
            raise ValueError("spark_cap must be at least 2")
        if self.damping_max_halvings < 0:
            raise ValueError("damping_max_halvings must be nonnegative")
        if isinstance(self.init, str) and self.init not in ("zeros", "continuation"):
            raise ValueError(f"init must be 'zeros', 'continuation' or a vector, got {self.init!r}")
        if self.continuation_steps < 2:
            raise ValueError("continuation_steps must be at least 2")


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    objective: float
    cycles_used: int
    converged: bool
    eta_inf: float
    mode: str
    lam: float = 0.0
    tau: float = 0.0
    rejections: int = 0
    backtracks: int = 0
    seconds: float = 0.0
    message: str = ""

    def __post_init__(self):
        b = np.array(self.beta, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.beta))

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.beta))


def quadratic_working_model(family: Family | str, X, y, beta):
    """Weights ``b''(x_i'beta)`` and working response for the local quadratic surrogate.

    The surrogate ``(2n)^-1 sum_i w_i (u_i - x_i'b)^2`` agrees with the negative
    log-likelihood to second order at ``b = beta``. Weights below 1e-10 are
    floored and a :class:`DegenerateCurvatureWarning` is issued.
    """
    family = Family.parse(family)
    X = np.asarray(X, dtype=float)
    y = check_response(family, y)
    beta = np.asarray(beta, dtype=float)
    if X.ndim != 2 or beta.shape != (X.shape[1],) or y.shape != (X.shape[0],):
        raise DimensionError("inconsistent shapes for X, y, beta")
    theta = X @ beta
    w = np.atleast_1d(b_double_prime(family, theta)).astype(float)
    low = w < WEIGHT_FLOOR
    if np.any(low):
        warnings.warn(f"{int(low.sum())} working weights below {WEIGHT_FLOOR:g} were floored",
                      DegenerateCurvatureWarning, stacklevel=2)
        w[low] = WEIGHT_FLOOR
    u = theta + (y - np.atleast_1d(b_prime(family, theta))) / w
    return w, u


def effective_spark_cap(n: int, obj: RegObjective, cfg: FitConfig) -> int:
    cap = n + 1 if cfg.spark_cap is None else cfg.spark_cap
    return int(min(cap, obj.spark_cap))


def project_feasible(beta, tau: float, max_nnz: int) -> np.ndarray:
    """Zero entries below ``tau`` and keep only the ``max_nnz`` largest (ties to lower index)."""
    beta = np.array(beta, dtype=float)
    beta[np.abs(beta) < tau] = 0.0
    nz = np.flatnonzero(beta)
    if nz.size > max_nnz:
        order = nz[np.argsort(-np.abs(beta[nz]), kind="stable")]
        beta[order[max_nnz:]] = 0.0
    return beta


def _unpack(data):
    if isinstance(data, Dataset):
        return data.X, data.y
    X, y = data
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)


def fit_ica(data: Dataset, obj: RegObjective, cfg: FitConfig | None = None,
            on_update: Callable | None = None) -> FitResult:
    """Minimize the penalized loss over the thresholded parameter space by cyclic coordinate descent.

    Parameters
    ----------
    data : Dataset
        Design with columns at norm sqrt(n) and a response in the family support.
    obj : RegObjective
        Family, penalty, ``lam`` and ``tau``. L0 is not supported here.
    cfg : FitConfig, optional
    on_update : callable, optional
        ``on_update(j, beta)`` after every accepted coordinate move. Forces the
        pure-Python kernel; meant for tests.

    Returns
    -------
    FitResult
        Always feasible. ``converged`` is false when ``max_cycles`` ran out or
        damping could not restore descent; the last iterate is returned.
    """
    cfg = cfg or FitConfig()
    if obj.penalty.kind is PenaltyKind.L0:
        raise ValueError("the L0 penalty is handled by the enumeration solver only")
    X, y = _unpack(data)
    family = obj.family
    y = check_response(family, y)
    n, p = X.shape
    if y.shape != (n,):
        raise DimensionError(f"y has shape {y.shape}, expected ({n},)")
    cap = effective_spark_cap(n, obj, cfg)
    max_nnz = (cap - 1) // 2
    if isinstance(cfg.init, str) and cfg.init == "continuation":
        return _fit_continuation(X, y, obj, cfg, on_update)
    if cfg.init is None or isinstance(cfg.init, str):
        beta = np.zeros(p)
    else:
        init = np.asarray(cfg.init, dtype=float)
        if init.shape != (p,):
            raise DimensionError(f"init has shape {init.shape}, expected ({p},)")
        beta = project_feasible(init, obj.tau, max_nnz)
    Xf = np.asfortranarray(X)
    yc = np.ascontiguousarray(y)
    kernel = _backend.get_kernel("python" if on_update is not None else cfg.backend)
    t0 = time.perf_counter()
    try:
        cycles, converged, rejections, backtracks = kernel(
            Xf, yc, beta, family.code, obj.penalty.kind.code, float(obj.lam),
            float(obj.penalty.shape), float(obj.tau), cfg.mode == "exact", max_nnz,
            cfg.max_cycles, cfg.tol, cfg.damping_max_halvings, on_update)
    except (FloatingPointError, OverflowError) as exc:
        raise SolverError(f"coordinate descent failed: {exc}") from exc
    elapsed = time.perf_counter() - t0
    if not np.all(np.isfinite(beta)):
        raise SolverError("coordinate descent produced non-finite coefficients")
    try:
        q = objective(obj, X, y, beta)
        eta = float(np.max(np.abs(score(family, X, y, beta))))
    except DomainError as exc:
        raise SolverError(f"fitted coefficients leave the family domain: {exc}") from exc
    if not is_feasible(replace(obj, spark_cap=cap), beta):
        raise SolverError("solver returned an infeasible iterate")
    return FitResult(beta, q, int(cycles), bool(converged), eta, cfg.mode, float(obj.lam),
                     float(obj.tau), int(rejections), int(backtracks), elapsed)


def _fit_continuation(X, y, obj: RegObjective, cfg: FitConfig, on_update) -> FitResult:
    n = X.shape[0]
    top = float(np.max(np.abs(score(obj.family, X, y, np.zeros(X.shape[1])))))
    lams = [obj.lam]
    if top > obj.lam > 0:
        lams = list(np.geomspace(top, obj.lam, cfg.continuation_steps))
        lams[-1] = obj.lam
    warm = None
    cycles = rejections = backtracks = 0
    seconds = 0.0
    for lam in lams:
        res = fit_ica((X, y), replace(obj, lam=float(lam)), replace(cfg, init=warm), on_update)
        cycles += res.cycles_used
        rejections += res.rejections
        backtracks += res.backtracks
        seconds += res.seconds
        warm = res.beta
    return replace(res, cycles_used=cycles, rejections=rejections, backtracks=backtracks,
                   seconds=seconds)


def fit_path(data: Dataset, family: Family | str, pen: Penalty, lambda_grid: Sequence[float],
             tau_rule: Callable[[float], float] | float, cfg: FitConfig | None = None,
             spark_cap: int | None = None) -> list[FitResult]:
    """Fit along a strictly decreasing lambda grid, warm-starting each fit at the previous one.

    ``tau_rule`` is either a constant threshold or a callable ``lam -> tau``.
    A grid point whose fit fails is recorded with ``converged=False`` (at the
    warm start) and the path continues.
    """
    cfg = cfg or FitConfig()
    family = Family.parse(family)
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("lambda_grid must be a nonempty vector")
    if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
        raise ValueError("lambda_grid must be positive and strictly decreasing")
    rule = tau_rule if callable(tau_rule) else (lambda _lam, _t=float(tau_rule): _t)
    X, y = _unpack(data)
    if isinstance(data, Dataset):
        data = Dataset(np.asfortranarray(X), y, data.family, data.column_scales, data.rescaled)
    else:
        data = (np.asfortranarray(X), y)
    cap_kw = {} if spark_cap is None else {"spark_cap": int(spark_cap)}
    warm = None if isinstance(cfg.init, str) else cfg.init
    out = []
    for lam in grid:
        obj = RegObjective(family, pen, float(lam), float(rule(float(lam))), **cap_kw)
        step = replace(cfg, init=warm)
        try:
            res = fit_ica(data, obj, step)
        except SolverError as exc:
            start = np.zeros(X.shape[1]) if warm is None else project_feasible(
                warm, obj.tau, (effective_spark_cap(X.shape[0], obj, cfg) - 1) // 2)
            try:
                q = objective(obj, X, y, start)
            except DomainError:
                q = float("nan")
            res = FitResult(start, q, 0, False, float("nan"), cfg.mode, obj.lam, obj.tau,
                            message=str(exc))
        out.append(res)
        warm = res.beta
    return out
