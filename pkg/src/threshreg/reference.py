"""Exact solvers for tiny problems: support enumeration and the oracle MLE.

The global minimizer over the thresholded space is found by enumerating every
admissible support and, within each, every sign pattern. Fixing the signs turns
``|beta_j| >= tau`` into simple bounds, so each piece is a bound-constrained
smooth problem solved by projected Newton from several starts.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .data import Dataset
from .exceptions import GuardError, RankDeficiencyError, SeparationError, SolverError
from .glm import POISSON_THETA_MAX, Family, b_double_prime, b_prime, b_value, score
from .penalty import (PenaltyKind, RegObjective, TIE_TOL, objective, penalty_curvature,
                      penalty_derivative, penalty_value)
from .solver import FitResult

MAX_P = 14
MAX_HALF_CAP = 5
DIVERGENCE_BOUND = 1e4
DISAGREEMENT_TOL = 1e-6


@dataclass
class BruteForceReport:
    best: FitResult
    supports_examined: int
    per_support_minima: list = field(default_factory=list)
    disagreements: list = field(default_factory=list)
    diverged: list = field(default_factory=list)


class _Problem:
    """Penalized loss restricted to one support, evaluated for a batch of points."""

    def __init__(self, family, X, y, pen, lam, support):
        self.family = family
        self.pen = pen
        self.lam = lam
        self.n = X.shape[0]
        self.XS = X[:, list(support)]
        self.y = y
        if family is Family.GAUSSIAN:
            self.G = self.XS.T @ self.XS / self.n
            self.c = self.XS.T @ y / self.n
            self.c0 = float(y @ y) / (2 * self.n)

    def _pen(self, u):
        return penalty_value(self.pen, self.lam, u).reshape(u.shape).sum(axis=1)

    def _pen_grad(self, u):
        if self.pen.kind is PenaltyKind.L0:
            return np.zeros_like(u)
        return np.asarray(penalty_derivative(self.pen, self.lam, u)).reshape(u.shape)

    def value(self, beta, u):
        """Objective for rows of ``beta`` (``u = |beta|``); +inf outside the family domain."""
        if self.family is Family.GAUSSIAN:
            loss = 0.5 * np.einsum("bj,jk,bk->b", beta, self.G, beta) - beta @ self.c + self.c0
        else:
            theta = beta @ self.XS.T
            bad = ~np.all(np.isfinite(theta), axis=1)
            if self.family is Family.POISSON:
                bad |= np.max(np.abs(theta), axis=1) > POISSON_THETA_MAX
            theta[bad] = 0.0
            loss = (b_value(self.family, theta).sum(axis=1) - theta @ self.y) / self.n
            loss[bad] = np.inf
        return loss + self._pen(u)

    def derivatives(self, beta, signs, u):
        """Gradient and Hessian in u-coordinates, where ``beta = signs * u``."""
        if self.family is Family.GAUSSIAN:
            g = beta @ self.G - self.c
            H = np.broadcast_to(self.G, (beta.shape[0],) + self.G.shape).copy()
        else:
            theta = beta @ self.XS.T
            mu = b_prime(self.family, theta)
            w = b_double_prime(self.family, theta)
            g = (mu - self.y) @ self.XS / self.n
            H = np.einsum("bi,ij,ik->bjk", w, self.XS, self.XS) / self.n
        gu = signs * g + self._pen_grad(u)
        Hu = H * signs[:, :, None] * signs[:, None, :]
        k = u.shape[1]
        idx = np.arange(k)
        Hu[:, idx, idx] += np.asarray(penalty_curvature(self.pen, self.lam, u)).reshape(u.shape)
        return gu, Hu


def _projected_newton(prob: _Problem, signs, u, tau, max_iter=200, gtol=1e-13):
    """Minimize over u >= tau (elementwise) for a batch of sign patterns and starts.

    Returns final u, objective values and a convergence mask.
    """
    B, k = u.shape
    u = np.maximum(u, tau)
    f = prob.value(signs * u, u)
    done = np.zeros(B, dtype=bool)
    idx = np.arange(k)
    for _ in range(max_iter):
        live = ~done & np.isfinite(f)
        if not live.any():
            break
        L = np.flatnonzero(live)
        uL, sL = u[L], signs[L]
        g, H = prob.derivatives(sL * uL, sL, uL)
        at_bound = uL <= tau * (1 + 1e-15) + 1e-300
        active = at_bound & (g > 0)
        pg = np.where(active, 0.0, g)
        scale = 1.0 + np.abs(f[L])
        small = np.max(np.abs(pg), axis=1) <= gtol * scale
        done[L[small]] = True
        keep = ~small
        if not keep.any():
            break
        L, uL, sL, g, H, active = L[keep], uL[keep], sL[keep], g[keep], H[keep], active[keep]
        free = ~active
        Hf = H * free[:, :, None] * free[:, None, :]
        Hf[:, idx, idx] += active
        ev = np.linalg.eigvalsh(Hf)
        shift = np.maximum(0.0, 1e-8 - ev[:, 0])
        Hf[:, idx, idx] += shift[:, None]
        gf = np.where(free, g, 0.0)
        d = -np.linalg.solve(Hf, gf[:, :, None])[:, :, 0]
        f_old = f[L]
        accepted = np.zeros(len(L), dtype=bool)
        step = 1.0
        for _ in range(60):
            pend = ~accepted
            if not pend.any():
                break
            cand = np.maximum(uL[pend] + step * d[pend], tau)
            fc = prob.value(sL[pend] * cand, cand)
            ok = fc <= f_old[pend] + 1e-4 * np.sum(g[pend] * (cand - uL[pend]), axis=1)
            ok &= np.isfinite(fc)
            rows = np.flatnonzero(pend)[ok]
            uL[rows] = cand[ok]
            f_old[rows] = fc[ok]
            accepted[rows] = True
            step *= 0.5
        stalled = ~accepted
        done[L[stalled]] = True
        u[L] = uL
        f[L] = f_old
        if np.any(np.abs(uL) > DIVERGENCE_BOUND):
            blown = L[np.max(np.abs(uL), axis=1) > DIVERGENCE_BOUND]
            f[blown] = np.inf
            done[blown] = True
    return u, f, done


def _support_mle_guess(family, XS, y):
    """Cheap unpenalized start on the support (ridge-stabilised)."""
    n, k = XS.shape
    if k == 0:
        return np.zeros(0)
    if family is Family.GAUSSIAN:
        return np.linalg.lstsq(XS, y, rcond=None)[0]
    try:
        return oracle_mle(Dataset(XS, y, family, np.ones(k), False), family, range(k))
    except (SeparationError, RankDeficiencyError, SolverError):
        return np.zeros(k)


def _support_solve(data: Dataset, obj: RegObjective, support, n_random: int, rng):
    """Best point on ``support``; also returns start disagreement and divergence flags."""
    support = tuple(int(j) for j in support)
    k = len(support)
    p = data.p
    if k == 0:
        beta = np.zeros(p)
        return beta, objective(obj, data.X, data.y, beta), False, False
    prob = _Problem(obj.family, data.X, data.y, obj.penalty, obj.lam, support)
    tau = float(obj.tau)
    guess = _support_mle_guess(obj.family, prob.XS, data.y)
    spread = 2.0 * max(float(np.max(np.abs(guess))), tau, 1e-3)
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=k)))
    S = len(signs)
    starts = [np.maximum(signs * guess, tau), np.full((S, k), max(tau, 1e-3 * spread))]
    for _ in range(n_random):
        starts.append(tau + spread * np.abs(rng.standard_normal((S, k))))
    m = len(starts)
    u0 = np.concatenate(starts)
    sg = np.tile(signs, (m, 1))
    u, f, _ = _projected_newton(prob, sg, u0, tau)
    f_by = f.reshape(m, S)
    finite = np.isfinite(f_by)
    diverged = not finite.any()
    disagree = False
    for s in range(S):
        vals = f_by[finite[:, s], s]
        if vals.size > 1 and vals.max() - vals.min() > DISAGREEMENT_TOL * (1 + abs(vals.min())):
            disagree = True
    if diverged:
        return np.zeros(p), math.inf, disagree, True
    best = int(np.argmin(np.where(np.isfinite(f), f, np.inf)))
    beta = np.zeros(p)
    beta[list(support)] = sg[best] * u[best]
    return beta, objective(obj, data.X, data.y, beta), disagree, False


def support_constrained_fit(data: Dataset, obj: RegObjective, support, n_random: int = 1,
                            seed: int = 0) -> tuple[np.ndarray, float]:
    """Minimize the penalized loss over vectors supported on ``support`` with |beta_j| >= tau.

    Every sign pattern on the support is solved separately from the projected
    support MLE, the threshold corner and ``n_random`` random starts. Returns
    ``(beta, objective)``; the objective is ``inf`` if every start diverged.
    """
    support = tuple(sorted(int(j) for j in support))
    if len(set(support)) != len(support) or any(not 0 <= j < data.p for j in support):
        raise ValueError("support must hold distinct column indices")
    beta, q, _, _ = _support_solve(data, obj, support, n_random, np.random.default_rng(seed))
    return beta, q


def _spark_cap(data: Dataset, obj: RegObjective) -> int:
    return int(min(obj.spark_cap, data.n + 1))


def brute_force_global(data: Dataset, obj: RegObjective, n_random: int = 1, seed: int = 0,
                       keep_minima: bool = False) -> BruteForceReport:
    """Global minimizer over the thresholded space by enumerating all supports of size < cap/2.

    Requires ``p <= 14`` and ``cap / 2 <= 5`` where ``cap = min(obj.spark_cap, n + 1)``.
    Ties within 1e-12 go to the lexicographically smallest support.
    """
    cap = _spark_cap(data, obj)
    if data.p > MAX_P or cap / 2 > MAX_HALF_CAP:
        raise GuardError(f"enumeration guard: need p <= {MAX_P} and spark_cap/2 <= {MAX_HALF_CAP}, "
                         f"got p={data.p}, spark_cap={cap}")
    max_k = (cap - 1) // 2
    rng = np.random.default_rng(seed)
    best_beta, best_q, best_sup = None, math.inf, None
    examined = 0
    minima, disagreements, diverged = [], [], []
    for k in range(max_k + 1):
        for support in itertools.combinations(range(data.p), k):
            examined += 1
            beta, q, dis, div = _support_solve(data, obj, support, n_random, rng)
            if keep_minima:
                minima.append((support, q))
            if dis:
                disagreements.append(support)
            if div:
                diverged.append(support)
                continue
            sup = tuple(int(j) for j in np.flatnonzero(beta))
            if (best_beta is None or q < best_q - TIE_TOL
                    or (abs(q - best_q) <= TIE_TOL and sup < best_sup)):
                best_beta, best_q, best_sup = beta, q, sup
    if best_beta is None:
        raise SolverError("every support diverged")
    eta = float(np.max(np.abs(score(obj.family, data.X, data.y, best_beta))))
    best = FitResult(best_beta, best_q, 0, True, eta, "exact", float(obj.lam), float(obj.tau))
    return BruteForceReport(best, examined, minima, disagreements, diverged)


def oracle_mle(data: Dataset, family: Family | str, true_support, max_iter: int = 200,
               tol: float = 1e-10) -> np.ndarray:
    """Unpenalized maximum likelihood on ``true_support``; zero elsewhere.

    Raises
    ------
    RankDeficiencyError
        The support columns are linearly dependent.
    SeparationError
        Logistic iterates diverge (the classes are separable on the support).
    """
    family = Family.parse(family)
    support = sorted(int(j) for j in true_support)
    X, y = data.X, data.y
    n, p = X.shape
    beta = np.zeros(p)
    if not support:
        return beta
    XS = X[:, support]
    k = len(support)
    if np.linalg.matrix_rank(XS) < k:
        raise RankDeficiencyError(f"support columns {support} are linearly dependent")
    if family is Family.GAUSSIAN:
        beta[support] = np.linalg.lstsq(XS, y, rcond=None)[0]
        return beta

    def loss(b):
        th = XS @ b
        if family is Family.POISSON and np.max(np.abs(th)) > POISSON_THETA_MAX:
            return math.inf
        return float(np.sum(b_value(family, th)) - y @ th) / n

    if family is Family.BERNOULLI and _separable(XS, y):
        raise SeparationError("logistic likelihood has no finite maximizer on this support "
                              "(classes are separable)")
    b = np.zeros(k)
    f = loss(b)
    for _ in range(max_iter):
        th = XS @ b
        g = XS.T @ (b_prime(family, th) - y) / n
        if np.max(np.abs(g)) < tol:
            beta[support] = b
            return beta
        H = (XS * b_double_prime(family, th)[:, None]).T @ XS / n
        try:
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            d = -g
        if not np.all(np.isfinite(d)):
            break
        if -(g @ d) < 1e-12:
            # inside the quadratic-convergence region the loss change is below
            # rounding, so the line search is uninformative; take the full step
            b = b + d
            f = loss(b)
            continue
        t = 1.0
        while t > 1e-12:
            cand = b + t * d
            fc = loss(cand)
            if fc <= f + 1e-4 * t * (g @ d):
                break
            t *= 0.5
        else:
            # no representable decrease left; accept if the score is already negligible
            if np.max(np.abs(g)) < 1e-8:
                beta[support] = b
                return beta
            break
        b, f = cand, fc
        if np.max(np.abs(b)) > DIVERGENCE_BOUND:
            break
    if family is Family.BERNOULLI:
        raise SeparationError("logistic Newton iterations diverged (classes appear separable)")
    raise SolverError("Newton iterations for the oracle fit did not converge")


def _separable(XS, y) -> bool:
    """True when some direction b != 0 has (2y_i - 1) x_i'b >= 0 for every row.

    For a full-rank design this is exactly the case in which the logistic
    likelihood has no finite maximizer (complete or quasi-complete separation).
    """
    A = (2.0 * y - 1.0)[:, None] * XS
    res = linprog(-A.sum(axis=0), A_ub=-A, b_ub=np.zeros(A.shape[0]),
                  bounds=[(-1.0, 1.0)] * A.shape[1], method="highs")
    return bool(res.status == 0 and -res.fun > 1e-9 * A.shape[0])


@dataclass(frozen=True)
class AgreementReport:
    instances: int
    agree: int
    below: int
    max_gap: float
    gaps: tuple = ()

    @property
    def rate(self) -> float:
        return self.agree / self.instances if self.instances else 0.0


def random_tiny_instance(rng: np.random.Generator, pen, n: int = 30, p: int = 8, s: int = 2,
                         spark_cap: int = 10, sigma: float = 0.5):
    """Small Gaussian problem with lambda and tau drawn from their rate schedules.

    lambda = c0 sqrt(log max(n, p) / n) with c0 ~ U(0.3, 1) and
    tau = c6 sqrt(log n) sqrt(log p / n) with c6 ~ U(0.2, 0.8); the support bound
    ``spark_cap`` keeps the enumeration within its guard.
    """
    from .data import TruthSpec, generate_ar1_design, rescale_columns, simulate_response
    from .evaluation import lambda_schedule, tau_schedule

    X, scales = rescale_columns(generate_ar1_design(n, p, 0.3, rng))
    beta0 = np.zeros(p)
    sup = rng.choice(p, s, replace=False)
    beta0[sup] = rng.choice([-1.0, 1.0], s) * rng.uniform(0.5, 1.5, s)
    y = simulate_response(Family.GAUSSIAN, X, TruthSpec(beta0, sigma), rng)
    data = Dataset(X, y, Family.GAUSSIAN, scales, True)
    lam = lambda_schedule(rng.uniform(0.3, 1.0), n, p)
    tau = tau_schedule(rng.uniform(0.2, 0.8), n, p)
    return data, RegObjective(Family.GAUSSIAN, pen, lam, tau, spark_cap=spark_cap)


def oracle_agreement(pen, instances: int = 100, seed: int = 0, agree_tol: float = 1e-6,
                     init: str = "continuation") -> AgreementReport:
    """How often ICA reaches the enumerated global minimum on random tiny instances.

    ``below`` counts instances where ICA beats the enumeration by more than 1e-9,
    which would mean the enumeration missed the global minimum.
    """
    from .solver import FitConfig, fit_ica

    agree = below = 0
    gaps = []
    for i in range(instances):
        rng = np.random.default_rng([int(seed), i])
        data, obj = random_tiny_instance(rng, pen)
        bf = brute_force_global(data, obj)
        fit = fit_ica(data, obj, FitConfig(init=init))
        gap = fit.objective - bf.best.objective
        gaps.append(gap)
        agree += abs(gap) <= agree_tol
        below += gap < -1e-9
    return AgreementReport(instances, agree, below, max(gaps) if gaps else 0.0, tuple(gaps))
