"""Estimation and selection metrics, tuning schedules and grid-search tuning."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import Dataset
from .exceptions import DataError, DimensionError, DomainError
from .glm import Family, b_prime, kl_divergence, score
from .penalty import Penalty, RegObjective
from .solver import FitConfig, FitResult, fit_ica, fit_path


def tau_schedule(c6: float, n: int, p: int) -> float:
    """Threshold tau = c6 * sqrt(log n) * sqrt(log p / n)."""
    if n < 2 or p < 2:
        raise ValueError("tau_schedule needs n >= 2 and p >= 2")
    if not c6 > 0:
        raise ValueError("c6 must be positive")
    return c6 * math.sqrt(math.log(n)) * math.sqrt(math.log(p) / n)


def lambda_schedule(c0: float, n: int, p: int) -> float:
    """Universal rate lambda = c0 * sqrt(log(max(n, p)) / n)."""
    if not c0 > 0:
        raise ValueError("c0 must be positive")
    return c0 * math.sqrt(math.log(max(n, p)) / n)


def _pair(beta_hat, beta0):
    a = np.asarray(beta_hat, dtype=float)
    b = np.asarray(beta0, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def false_signs(beta_hat, beta0) -> int:
    a, b = _pair(beta_hat, beta0)
    return int(np.count_nonzero(np.sign(a) != np.sign(b)))


def selection_errors(beta_hat, beta0) -> tuple[int, int]:
    """(false positives, false negatives) of the estimated support."""
    a, b = _pair(beta_hat, beta0)
    sa, sb = a != 0, b != 0
    return int(np.count_nonzero(sa & ~sb)), int(np.count_nonzero(sb & ~sa))


def lq_loss(beta_hat, beta0, q: float = 2.0) -> float:
    a, b = _pair(beta_hat, beta0)
    d = np.abs(a - b)
    if q == math.inf:
        return float(d.max()) if d.size else 0.0
    if not 1.0 <= q <= 2.0:
        raise ValueError(f"q must lie in [1, 2] or be inf, got {q!r}")
    return float(np.sum(d ** q) ** (1.0 / q))


def prediction_error(family: Family | str, beta_hat, test_X, test_y) -> float:
    """Mean squared difference between test responses and fitted means."""
    family = Family.parse(family)
    X = np.asarray(test_X, dtype=float)
    y = np.asarray(test_y, dtype=float)
    beta_hat = np.asarray(beta_hat, dtype=float)
    if X.ndim != 2 or X.shape != (y.shape[0], beta_hat.shape[0]):
        raise DimensionError("test design, response and coefficients disagree in shape")
    m = np.atleast_1d(b_prime(family, X @ beta_hat))
    return float(np.mean((y - m) ** 2))


def sigma_hat(data: Dataset, beta_hat) -> float:
    """Residual standard deviation sqrt(RSS / (n - ||beta_hat||_0))."""
    if data.family is not Family.GAUSSIAN:
        raise ValueError("sigma_hat is defined for the Gaussian family only")
    beta_hat = np.asarray(beta_hat, dtype=float)
    df = data.n - int(np.count_nonzero(beta_hat))
    if df <= 0:
        raise ValueError("no residual degrees of freedom")
    r = data.y - data.X @ beta_hat
    return math.sqrt(float(r @ r) / df)


def trimmed_mean(values, fraction: float = 0.05) -> float:
    """Mean after dropping floor(fraction * len) values from each tail."""
    if not 0.0 <= fraction < 0.5:
        raise ValueError("fraction must lie in [0, 0.5)")
    v = np.sort(np.asarray(values, dtype=float).ravel())
    k = int(math.floor(fraction * v.size))
    v = v[k: v.size - k]
    if v.size == 0:
        raise ValueError("nothing left after trimming")
    return float(np.mean(v))


@dataclass(frozen=True)
class MetricsReport:
    pe: float
    l1: float
    l2: float
    linf: float
    fp: int
    fn: int
    fs: int
    sign_consistent: bool
    kl_per_n: float
    sigma_hat: float | None = None
    lq: dict = field(default_factory=dict)

    @property
    def consistent(self) -> bool:
        """Exact support recovery."""
        return self.fp == 0 and self.fn == 0

    def as_dict(self) -> dict:
        d = {"pe": self.pe, "l1": self.l1, "l2": self.l2, "linf": self.linf,
             "fp": self.fp, "fn": self.fn, "fs": self.fs,
             "sign_consistent": self.sign_consistent, "consistent": self.consistent,
             "kl_per_n": self.kl_per_n, "sigma_hat": self.sigma_hat}
        for q, v in sorted(self.lq.items()):
            d[f"l{q:g}"] = v
        return d


def compute_metrics(train: Dataset, beta_hat, beta0, pe: float,
                    extra_q: Sequence[float] = ()) -> MetricsReport:
    """Metrics of a fit against the truth. ``pe`` is computed by the caller on test data."""
    beta_hat, beta0 = _pair(beta_hat, beta0)
    fp, fn = selection_errors(beta_hat, beta0)
    fs = false_signs(beta_hat, beta0)
    kl = kl_divergence(train.family, train.X, beta_hat, beta0) / train.n
    sh = sigma_hat(train, beta_hat) if train.family is Family.GAUSSIAN else None
    return MetricsReport(pe=pe, l1=lq_loss(beta_hat, beta0, 1.0), l2=lq_loss(beta_hat, beta0, 2.0),
                         linf=lq_loss(beta_hat, beta0, math.inf), fp=fp, fn=fn, fs=fs,
                         sign_consistent=fs == 0, kl_per_n=kl, sigma_hat=sh,
                         lq={float(q): lq_loss(beta_hat, beta0, q) for q in extra_q})


def lambda_max(data: Dataset) -> float:
    """Smallest lambda at which the lasso keeps every coefficient at zero: ||score(0)||_inf."""
    return float(np.max(np.abs(score(data.family, data.X, data.y, np.zeros(data.p)))))


def lambda_grid(data: Dataset, n_lambda: int = 50, ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced decreasing grid from lambda_max down to ratio * lambda_max."""
    if n_lambda < 1 or not 0 < ratio < 1:
        raise ValueError("need n_lambda >= 1 and 0 < ratio < 1")
    top = lambda_max(data)
    if not top > 0:
        raise DataError("score at zero vanishes; the null model is already stationary")
    return top * np.logspace(0.0, math.log10(ratio), n_lambda) if n_lambda > 1 else np.array([top])


@dataclass(frozen=True)
class TuningGrid:
    """Grid over (lambda, c6).

    ``lambda_values=None`` builds ``n_lambda`` log-spaced values below lambda_max
    of the training data. ``method`` is ``"validation_set"`` or ``"kfold"``.
    """

    c6_values: tuple = (0.5, 1.0, 2.0, 4.0)
    lambda_values: tuple | None = None
    method: str = "validation_set"
    k: int = 5
    n_lambda: int = 50
    lambda_ratio: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "c6_values", tuple(float(c) for c in self.c6_values))
        if not self.c6_values or any(not c > 0 for c in self.c6_values):
            raise ValueError("c6_values must be a nonempty list of positive numbers")
        if self.lambda_values is not None:
            lv = tuple(float(v) for v in self.lambda_values)
            if not lv or any(v <= 0 for v in lv) or any(b >= a for a, b in zip(lv, lv[1:])):
                raise ValueError("lambda_values must be positive and strictly decreasing")
            object.__setattr__(self, "lambda_values", lv)
        if self.method not in ("validation_set", "kfold"):
            raise ValueError(f"unknown tuning method {self.method!r}")
        if self.method == "kfold" and self.k < 2:
            raise ValueError("kfold needs k >= 2")

    def lambdas(self, data: Dataset) -> np.ndarray:
        if self.lambda_values is not None:
            return np.array(self.lambda_values)
        return lambda_grid(data, self.n_lambda, self.lambda_ratio)


def _path_scores(train: Dataset, valid: Dataset, pen: Penalty, lams, tau: float,
                 cfg: FitConfig, spark_cap) -> tuple[np.ndarray, list[FitResult]]:
    """Validation PE along a warm-started path; stops at the first non-converged fit."""
    scores = np.full(len(lams), np.inf)
    fits: list[FitResult] = []
    warm = None if isinstance(cfg.init, str) else cfg.init
    for i, lam in enumerate(lams):
        obj = RegObjective(train.family, pen, float(lam), tau,
                           **({} if spark_cap is None else {"spark_cap": spark_cap}))
        try:
            fit = fit_ica(train, obj, replace(cfg, init=warm))
        except Exception:  # noqa: BLE001 - a failed grid point only loses its score
            break
        fits.append(fit)
        try:
            scores[i] = prediction_error(train.family, fit.beta, valid.X, valid.y)
        except DomainError:
            pass
        if not fit.converged:
            break
        warm = fit.beta
    return scores, fits


def kfold_indices(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Contiguous folds of a seeded permutation of range(n)."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    return [np.sort(f) for f in np.array_split(rng.permutation(n), k)]


def select_tuning(train: Dataset, valid: Dataset | None, pen: Penalty, grid: TuningGrid,
                  cfg: FitConfig | None = None, rng: np.random.Generator | None = None,
                  spark_cap: int | None = None, thresholded: bool = True):
    """Pick (lambda, c6) minimizing validation prediction error.

    ``valid`` is the validation set for ``method="validation_set"`` and is
    ignored for k-fold, which needs ``rng`` for the fold permutation. Ties go to
    the larger lambda, then the larger c6. Returns ``(lam, c6, fit)`` where
    ``fit`` is the fit on all of ``train`` at the winning pair. With
    ``thresholded=False`` the threshold is fixed at 0 and ``c6`` is reported as 0.
    """
    cfg = cfg or FitConfig()
    lams = grid.lambdas(train)
    n, p = train.n, train.p
    c6_values = grid.c6_values if thresholded else (0.0,)

    def tau_of(c6, m):
        return tau_schedule(c6, m, p) if thresholded else 0.0
    candidates = []  # (score, -lam, -c6, i_lam, c6)
    fits_by_c6 = {}
    if grid.method == "validation_set":
        if valid is None:
            raise ValueError("validation_set tuning needs a validation dataset")
        for c6 in c6_values:
            scores, fits = _path_scores(train, valid, pen, lams, tau_of(c6, n), cfg, spark_cap)
            fits_by_c6[c6] = fits
            candidates += [(scores[i], -lams[i], -c6, i, c6) for i in range(len(lams))]
    else:
        if rng is None:
            raise ValueError("k-fold tuning needs a random generator")
        folds = kfold_indices(n, grid.k, rng)
        for c6 in c6_values:
            total = np.zeros(len(lams))
            for f in folds:
                mask = np.ones(n, dtype=bool)
                mask[f] = False
                tr, va = train.subset(np.flatnonzero(mask)), train.subset(f)
                s, _ = _path_scores(tr, va, pen, lams, tau_of(c6, tr.n), cfg, spark_cap)
                total += s
            candidates += [(total[i] / len(folds), -lams[i], -c6, i, c6) for i in range(len(lams))]
    finite = [c for c in candidates if np.isfinite(c[0])]
    if not finite:
        raise DomainError("every grid point failed to produce a finite validation score")
    best = min(finite, key=lambda c: c[:3])
    i_lam, c6 = best[3], best[4]
    lam = float(lams[i_lam])
    if grid.method == "validation_set":
        fit = fits_by_c6[c6][i_lam]
    else:
        tau = tau_of(c6, n)
        fit = fit_path(train, train.family, pen, lams[: i_lam + 1], tau, cfg, spark_cap)[-1]
    return lam, c6, fit
