"""Penalty functions, the univariate thresholding rule and the penalized objective."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .glm import Family, neg_log_likelihood

# Objective values closer than this are treated as a tie (smaller magnitude wins).
TIE_TOL = 1e-12


class PenaltyKind(enum.Enum):
    L1 = "l1"
    SCAD = "scad"
    MCP = "mcp"
    SICA = "sica"
    HARD = "hard"
    L0 = "l0"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]


_KIND_CODES = {PenaltyKind.L1: 0, PenaltyKind.SCAD: 1, PenaltyKind.MCP: 2,
               PenaltyKind.SICA: 3, PenaltyKind.HARD: 4, PenaltyKind.L0: 5}

_DEFAULT_SHAPE = {PenaltyKind.SCAD: 3.7, PenaltyKind.MCP: 3.0, PenaltyKind.SICA: 1e-4}
_SHAPE_MIN = {PenaltyKind.SCAD: 2.0, PenaltyKind.MCP: 1.0, PenaltyKind.SICA: 0.0}


@dataclass(frozen=True)
class Penalty:
    """A penalty family p_lambda(t) with an optional shape parameter ``a``.

    SCAD needs a > 2, MCP a > 1 and SICA a > 0; the other kinds take no shape.
    """

    kind: PenaltyKind
    a: float | None = None

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, PenaltyKind) else PenaltyKind(str(self.kind).lower())
        object.__setattr__(self, "kind", kind)
        if kind in _SHAPE_MIN:
            a = _DEFAULT_SHAPE[kind] if self.a is None else float(self.a)
            if not (math.isfinite(a) and a > _SHAPE_MIN[kind]):
                raise ValueError(f"{kind.value} requires a > {_SHAPE_MIN[kind]:g}, got {a!r}")
            object.__setattr__(self, "a", a)
        else:
            object.__setattr__(self, "a", None)

    @classmethod
    def parse(cls, name: str, a: float | None = None) -> "Penalty":
        return cls(PenaltyKind(name.strip().lower()), a)

    @property
    def shape(self) -> float:
        """Shape parameter as a float (0.0 for shape-free kinds)."""
        return 0.0 if self.a is None else self.a

    def __str__(self):
        return self.kind.value if self.a is None else f"{self.kind.value}(a={self.a:g})"


def _check_lambda(lam):
    if not lam >= 0:
        raise ValueError(f"lambda must be nonnegative, got {lam!r}")


def penalty_value(pen: Penalty, lam: float, t):
    """p_lambda(t) for t >= 0 (scalar or array)."""
    _check_lambda(lam)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("penalty argument must be nonnegative")
    kind, a = pen.kind, pen.a
    if kind is PenaltyKind.L1:
        out = lam * t_arr
    elif kind is PenaltyKind.SCAD:
        mid = (2 * a * lam * t_arr - t_arr ** 2 - lam ** 2) / (2 * (a - 1))
        out = np.where(t_arr <= lam, lam * t_arr,
                       np.where(t_arr <= a * lam, mid, lam ** 2 * (a + 1) / 2))
    elif kind is PenaltyKind.MCP:
        out = np.where(t_arr <= a * lam, lam * t_arr - t_arr ** 2 / (2 * a), a * lam ** 2 / 2)
    elif kind is PenaltyKind.SICA:
        out = lam * (a + 1) * t_arr / (a + t_arr)
    elif kind is PenaltyKind.HARD:
        out = lam ** 2 - np.maximum(lam - t_arr, 0.0) ** 2
    else:
        out = np.where(t_arr != 0, lam, 0.0)
    return float(out) if out.ndim == 0 else out


def penalty_derivative(pen: Penalty, lam: float, t):
    """p'_lambda(t); at t = 0 the right derivative p'_lambda(0+) is returned."""
    _check_lambda(lam)
    kind, a = pen.kind, pen.a
    if kind is PenaltyKind.L0:
        raise ValueError("the L0 penalty is not differentiable")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("penalty argument must be nonnegative")
    if kind is PenaltyKind.L1:
        out = np.full_like(t_arr, lam)
    elif kind is PenaltyKind.SCAD:
        out = np.where(t_arr <= lam, lam, np.maximum(a * lam - t_arr, 0.0) / (a - 1))
    elif kind is PenaltyKind.MCP:
        out = np.maximum(lam - t_arr / a, 0.0)
    elif kind is PenaltyKind.SICA:
        out = lam * a * (a + 1) / (a + t_arr) ** 2
    else:
        out = 2 * np.maximum(lam - t_arr, 0.0)
    return float(out) if out.ndim == 0 else out


def penalty_curvature(pen: Penalty, lam: float, t):
    """p''_lambda(t) away from kinks (right limit at kinks). Used by the reference solver."""
    kind, a = pen.kind, pen.a
    t_arr = np.asarray(t, dtype=float)
    if kind in (PenaltyKind.L1, PenaltyKind.L0):
        out = np.zeros_like(t_arr)
    elif kind is PenaltyKind.SCAD:
        out = np.where((t_arr >= lam) & (t_arr < a * lam), -1.0 / (a - 1), 0.0)
    elif kind is PenaltyKind.MCP:
        out = np.where(t_arr < a * lam, -1.0 / a, 0.0)
    elif kind is PenaltyKind.SICA:
        out = -2 * lam * a * (a + 1) / (a + t_arr) ** 3
    else:
        out = np.where(t_arr < lam, -2.0, 0.0)
    return float(out) if out.ndim == 0 else out


def max_concavity(pen: Penalty, lam: float) -> float:
    """rho(p_lambda) = sup_{0<t1<t2} -(p'(t2) - p'(t1)) / (t2 - t1)."""
    kind, a = pen.kind, pen.a
    if kind is PenaltyKind.L0:
        raise ValueError("max concavity is undefined for the L0 penalty")
    if kind is PenaltyKind.L1:
        return 0.0
    if kind is PenaltyKind.SCAD:
        return 1.0 / (a - 1)
    if kind is PenaltyKind.MCP:
        return 1.0 / a
    if kind is PenaltyKind.SICA:
        return 2 * lam * (1 / a + 1 / a ** 2)
    return 2.0


# ---------------------------------------------------------------------------
# univariate problem  min_b  w/2 (z - b)^2 + p_lambda(|b|)


def _cubic_real_roots(b2: float, b1: float, b0: float) -> list[float]:
    """Real roots of u^3 + b2 u^2 + b1 u + b0, polished by Newton steps."""
    shift = b2 / 3.0
    P = b1 - b2 * b2 / 3.0
    Q = 2.0 * b2 ** 3 / 27.0 - b2 * b1 / 3.0 + b0
    disc = Q * Q / 4.0 + P ** 3 / 27.0
    if disc < 0.0:
        r = 2.0 * math.sqrt(-P / 3.0)
        arg = max(-1.0, min(1.0, (3.0 * Q / (2.0 * P)) * math.sqrt(-3.0 / P)))
        phi = math.acos(arg) / 3.0
        roots = [r * math.cos(phi - 2.0 * math.pi * k / 3.0) - shift for k in range(3)]
    else:
        sq = math.sqrt(disc)
        roots = [math.copysign(abs(-Q / 2 + sq) ** (1 / 3), -Q / 2 + sq)
                 + math.copysign(abs(-Q / 2 - sq) ** (1 / 3), -Q / 2 - sq) - shift]
    out = []
    for u in roots:
        for _ in range(3):
            f = ((u + b2) * u + b1) * u + b0
            df = (3.0 * u + 2.0 * b2) * u + b1
            if df == 0.0:
                break
            u -= f / df
        out.append(u)
    return out


def _scalar_objective(kind: PenaltyKind, lam: float, a: float, z: float, w: float, b: float) -> float:
    t = abs(b)
    if kind is PenaltyKind.L1:
        pv = lam * t
    elif kind is PenaltyKind.SCAD:
        if t <= lam:
            pv = lam * t
        elif t <= a * lam:
            pv = (2 * a * lam * t - t * t - lam * lam) / (2 * (a - 1))
        else:
            pv = lam * lam * (a + 1) / 2
    elif kind is PenaltyKind.MCP:
        pv = lam * t - t * t / (2 * a) if t <= a * lam else a * lam * lam / 2
    elif kind is PenaltyKind.SICA:
        pv = lam * (a + 1) * t / (a + t)
    elif kind is PenaltyKind.HARD:
        d = max(lam - t, 0.0)
        pv = lam * lam - d * d
    else:
        pv = lam if t != 0.0 else 0.0
    return 0.5 * w * (z - b) ** 2 + pv


def _clip(x, lo, hi):
    return lo if x < lo else hi if x > hi else x


def _candidates(kind: PenaltyKind, lam: float, a: float, z: float, w: float) -> list[float]:
    """Nonnegative points containing every minimiser of the univariate problem
    over any interval [tau, inf), for z > 0: per-piece stationary points clipped
    to their piece plus all piece endpoints."""
    c = [0.0]
    if kind is PenaltyKind.L1:
        c.append(max(z - lam / w, 0.0))
    elif kind is PenaltyKind.SCAD:
        c += [lam, a * lam]
        c.append(_clip(z - lam / w, 0.0, lam))
        den = w - 1.0 / (a - 1)
        if den != 0.0:
            c.append(_clip((w * z - a * lam / (a - 1)) / den, lam, a * lam))
        c.append(max(z, a * lam))
    elif kind is PenaltyKind.MCP:
        c.append(a * lam)
        den = w - 1.0 / a
        if den != 0.0:
            c.append(_clip((w * z - lam) / den, 0.0, a * lam))
        c.append(max(z, a * lam))
    elif kind is PenaltyKind.HARD:
        c.append(lam)
        den = w - 2.0
        if den != 0.0:
            c.append(_clip((w * z - 2 * lam) / den, 0.0, lam))
        c.append(max(z, lam))
    elif kind is PenaltyKind.SICA:
        # stationarity in u = a + b:  u^3 - (a+z) u^2 + lam a (a+1) / w = 0
        for u in _cubic_real_roots(-(a + z), 0.0, lam * a * (a + 1) / w):
            if math.isfinite(u) and u > a:
                c.append(u - a)
        c.append(z)
    else:
        c.append(z)
    return c


def _argmin(kind, lam, a, z, w, cands):
    best_b, best_v = 0.0, math.inf
    for b in sorted(set(cands)):
        v = _scalar_objective(kind, lam, a, z, w, b)
        if v < best_v - TIE_TOL:
            best_b, best_v = b, v
    return best_b


def scalar_threshold(pen: Penalty, lam: float, tau: float, z: float, w: float = 1.0,
                     mode: str = "exact") -> float:
    """Solve ``min_b w/2 (z - b)^2 + p_lambda(|b|)`` under the threshold rule.

    ``mode="drop"`` takes the unconstrained global minimiser and zeroes it when
    its magnitude is below ``tau``. ``mode="exact"`` minimises over the
    feasible set ``{0} U {|b| >= tau}``. Ties within ``TIE_TOL`` go to the
    smaller magnitude.
    """
    if not w > 0:
        raise ValueError(f"curvature w must be positive, got {w!r}")
    if not math.isfinite(z):
        raise ValueError("z must be finite")
    _check_lambda(lam)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if mode not in ("drop", "exact"):
        raise ValueError(f"unknown mode {mode!r}")
    if z == 0.0:
        return 0.0
    kind, a = pen.kind, pen.shape
    az = abs(z)
    cands = _candidates(kind, lam, a, az, w)
    if mode == "drop":
        b = _argmin(kind, lam, a, az, w, cands)
        if b < tau:
            b = 0.0
    else:
        feasible = [c for c in cands if c >= tau] + [tau, 0.0]
        b = _argmin(kind, lam, a, az, w, feasible)
    return math.copysign(b, z) if b != 0.0 else 0.0


# ---------------------------------------------------------------------------
# penalized objective and the thresholded parameter space


@dataclass(frozen=True)
class RegObjective:
    """Q_n(beta) = L(beta) + sum_j p_lambda(|beta_j|), restricted to B_tau.

    ``spark_cap`` bounds the model size: feasible vectors have
    ``||beta||_0 < spark_cap / 2``.
    """

    family: Family
    penalty: Penalty
    lam: float
    tau: float = 0.0
    spark_cap: int = 2 ** 31 - 1

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if not self.tau >= 0:
            raise ValueError("tau must be nonnegative")
        if int(self.spark_cap) < 2:
            raise ValueError("spark_cap must be at least 2")
        object.__setattr__(self, "spark_cap", int(self.spark_cap))

    @property
    def max_support(self) -> int:
        """Largest model size k with k < spark_cap / 2."""
        return (self.spark_cap - 1) // 2


def objective(obj: RegObjective, X, y, beta) -> float:
    beta = np.asarray(beta, dtype=float)
    loss = neg_log_likelihood(obj.family, X, y, beta)
    return loss + float(np.sum(penalty_value(obj.penalty, obj.lam, np.abs(beta))))


def is_feasible(obj: RegObjective, beta) -> bool:
    """Membership in B_tau: few enough nonzeros, each of magnitude >= tau."""
    beta = np.asarray(beta, dtype=float)
    nz = np.abs(beta[beta != 0])
    return bool(nz.size < obj.spark_cap / 2 and np.all(nz >= obj.tau))
