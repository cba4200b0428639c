"""Synthetic designs, column rescaling, response simulation and CSV ingestion."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .exceptions import DataError, DimensionError
from .glm import Family, b_prime, check_response

# Largest linear predictor allowed when simulating Poisson counts.
POISSON_SIM_THETA_MAX = 30.0


@dataclass
class Dataset:
    """Design matrix and response for one GLM fit.

    When ``rescaled`` is true every column of ``X`` has L2 norm sqrt(n);
    ``column_scales[j]`` is the factor that was applied to raw column j.
    """

    X: np.ndarray
    y: np.ndarray
    family: Family
    column_scales: np.ndarray
    rescaled: bool = True
    feature_names: list[str] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.family = Family.parse(self.family)
        self.X = np.asfortranarray(self.X, dtype=float)  # column access in the solver
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise DimensionError("X must be a nonempty n x p matrix")
        if self.y.shape != (self.X.shape[0],):
            raise DimensionError(f"y has shape {self.y.shape}, expected ({self.X.shape[0]},)")
        self.column_scales = np.asarray(self.column_scales, dtype=float)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_arrays(cls, X, y, family, rescale: bool = True, feature_names=None) -> "Dataset":
        family = Family.parse(family)
        X = np.asarray(X, dtype=float)
        y = check_response(family, y)
        if rescale:
            X, scales = rescale_columns(X)
        else:
            scales = np.ones(X.shape[1])
        return cls(X, y, family, scales, rescale, feature_names)

    def subset(self, rows) -> "Dataset":
        """Row subset sharing this dataset's scaling (columns are not re-normalised)."""
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], self.family, self.column_scales,
                       False, self.feature_names)


@dataclass(frozen=True)
class TruthSpec:
    """True coefficient vector (on the rescaled design scale) and noise level."""

    beta0: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.beta0, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "beta0", b)
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.beta0))

    @property
    def s(self) -> int:
        return len(self.support)


class Setting(enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    POISSON = "poisson"

    @property
    def family(self) -> Family:
        return {Setting.LINEAR: Family.GAUSSIAN, Setting.LOGISTIC: Family.BERNOULLI,
                Setting.POISSON: Family.POISSON}[self]


_TRUTH_PREFIX = {
    Setting.LINEAR: (1.0, -0.5, 0.7, -1.2, -0.9, 0.5, 0.55),
    Setting.LOGISTIC: (2.0, 0.0, -2.3, 0.0, 2.8, 0.0, -2.2, 0.0, 2.5),
    Setting.POISSON: (1.0, -0.9, 0.8, -1.1, 0.6),
}


def default_truth(setting: Setting | str, p: int) -> TruthSpec:
    """The simulation truths: the listed coefficient prefix padded with zeros."""
    setting = Setting(setting) if not isinstance(setting, Setting) else setting
    prefix = _TRUTH_PREFIX[setting]
    if p < len(prefix):
        raise ValueError(f"p={p} is smaller than the {len(prefix)} listed coefficients")
    beta0 = np.zeros(p)
    beta0[: len(prefix)] = prefix
    return TruthSpec(beta0, 0.4 if setting is Setting.LINEAR else 0.0)


def stream_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``key`` (e.g. replicate, role).

    Streams depend only on ``(master_seed, key)``, so replicates can run in any order.
    """
    seq = np.random.SeedSequence(int(master_seed) % 2 ** 64, spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


def generate_ar1_design(n: int, p: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with Sigma_jk = r^|j-k|, via the AR(1) recursion across columns."""
    if not 0.0 <= r < 1.0:
        raise ValueError(f"r must lie in [0, 1), got {r!r}")
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    z = rng.standard_normal((n, p))
    if r == 0.0:
        return z
    scale = math.sqrt(1.0 - r * r)
    z[:, 0] /= scale
    return lfilter([scale], [1.0, -r], z, axis=1)


def rescale_columns(X) -> tuple[np.ndarray, np.ndarray]:
    """Scale every column to L2 norm sqrt(n); returns (scaled X, per-column factors)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    norms = np.sqrt(np.einsum("ij,ij->j", X, X))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DataError(f"column {zero[0]} is identically zero and cannot be rescaled")
    target = math.sqrt(n)
    scales = target / norms
    # columns already at norm sqrt(n) are left untouched, so rescaling is idempotent
    scales[np.abs(norms / target - 1.0) < 1e-13] = 1.0
    return X * scales, scales


def simulate_response(family: Family | str, X, truth: TruthSpec, rng: np.random.Generator) -> np.ndarray:
    family = Family.parse(family)
    theta = np.asarray(X, dtype=float) @ truth.beta0
    if not np.all(np.isfinite(theta)):
        raise DataError("linear predictor is not finite")
    n = theta.shape[0]
    if family is Family.GAUSSIAN:
        return theta + truth.sigma * rng.standard_normal(n)
    if family is Family.BERNOULLI:
        return rng.binomial(1, b_prime(family, theta)).astype(float)
    if np.max(theta) > POISSON_SIM_THETA_MAX:
        raise DataError(f"Poisson mean exp({np.max(theta):.3g}) exceeds the simulation guard")
    return rng.poisson(np.exp(theta)).astype(float)


def load_csv(path, response_column: str, family: Family | str, rescale: bool = True) -> Dataset:
    """Read a header-ful, comma-separated numeric file into a :class:`Dataset`.

    Every column other than ``response_column`` becomes a covariate.
    """
    family = Family.parse(family)
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if response_column not in header:
            raise DataError(f"response column {response_column!r} not found in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"row {lineno}: expected {len(header)} fields, found {len(row)}")
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"row {lineno}, column {name!r}: non-numeric value {cell.strip()!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"row {lineno}, column {name!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path} has no data rows")
    table = np.array(rows)
    k = header.index(response_column)
    y = check_response(family, table[:, k])
    features = [h for i, h in enumerate(header) if i != k]
    if not features:
        raise DataError("no covariate columns besides the response")
    X = np.delete(table, k, axis=1)
    return Dataset.from_arrays(X, y, family, rescale=rescale, feature_names=features)
