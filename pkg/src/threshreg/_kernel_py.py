"""Pure-Python coordinate-descent kernel (fallback for the compiled ``_kernel``).

Both kernels share one calling convention and must produce the same iterates
up to floating-point summation order.
"""
from __future__ import annotations

import numpy as np

from .glm import POISSON_THETA_MAX, Family, b_double_prime, b_prime, b_value
from .penalty import Penalty, PenaltyKind, penalty_value, scalar_threshold

_FAMILIES = {0: Family.GAUSSIAN, 1: Family.BERNOULLI, 2: Family.POISSON}
_KINDS = {k.code: k for k in PenaltyKind}

WEIGHT_FLOOR = 1e-10


def _loss(family, y, theta, n):
    return (np.sum(b_value(family, theta)) - y @ theta) / n


def coordinate_descent(X, y, beta, family_code, kind_code, lam, a, tau, exact,
                       max_nnz, max_cycles, tol, max_halvings, on_update=None):
    """Run threshold-constrained cyclic coordinate descent, updating ``beta`` in place.

    Returns ``(cycles_used, converged, rejections, backtracks)``. ``rejections``
    counts coordinate moves refused because they would exceed ``max_nnz``
    nonzeros; ``backtracks`` counts cycle-level damping events.
    """
    family = _FAMILIES[family_code]
    kind = _KINDS[kind_code]
    pen = Penalty(kind, a if kind in (PenaltyKind.SCAD, PenaltyKind.MCP, PenaltyKind.SICA) else None)
    mode = "exact" if exact else "drop"
    n, p = X.shape
    colsq = np.einsum("ij,ij->j", X, X)
    theta = X @ beta
    gaussian = family is Family.GAUSSIAN
    if gaussian:
        resid = y - theta
    else:
        mu = b_prime(family, theta)
        w = np.maximum(b_double_prime(family, theta), WEIGHT_FLOOR)
        xty = X.T @ y
        bsum = np.sum(b_value(family, theta))
    nnz = int(np.count_nonzero(beta))
    q_prev = _loss(family, y, theta, n) + np.sum(penalty_value(pen, lam, np.abs(beta)))
    rejections = backtracks = 0
    converged = False
    cycles = 0
    for cycles in range(1, max_cycles + 1):
        beta_old = beta.copy()
        maxdelta = 0.0
        for j in range(p):
            if colsq[j] == 0.0:
                continue
            xj = X[:, j]
            bj = beta[j]
            if gaussian:
                wbar = colsq[j] / n
                z = bj + (xj @ resid) / colsq[j]
            else:
                s2 = w @ (xj * xj)
                wbar = s2 / n
                z = bj + (xj @ (y - mu)) / s2
            c = scalar_threshold(pen, lam, tau, z, wbar, mode)
            if c == bj:
                continue
            if bj == 0.0 and nnz >= max_nnz:
                rejections += 1
                continue
            if gaussian:
                delta = c - bj
                resid -= delta * xj
            else:
                t = 1.0
                accepted = False
                pen_old = penalty_value(pen, lam, abs(bj))
                b_old = bsum
                for _ in range(max_halvings + 1):
                    cand = bj + t * (c - bj) if t < 1.0 else c
                    t *= 0.5
                    if cand != 0.0 and abs(cand) < tau:
                        continue
                    delta = cand - bj
                    th_new = theta + delta * xj
                    if family is Family.POISSON and np.max(np.abs(th_new)) > POISSON_THETA_MAX:
                        continue
                    b_new = np.sum(b_value(family, th_new))
                    dq = ((b_new - b_old - delta * xty[j]) / n
                          + penalty_value(pen, lam, abs(cand)) - pen_old)
                    if dq <= 0.0:
                        accepted = True
                        break
                if not accepted:
                    continue
                c = cand
                bsum = b_new
                theta = th_new
                mu = b_prime(family, theta)
                w = np.maximum(b_double_prime(family, theta), WEIGHT_FLOOR)
            if bj == 0.0:
                nnz += 1
            elif c == 0.0:
                nnz -= 1
            beta[j] = c
            maxdelta = max(maxdelta, abs(delta))
            if on_update is not None:
                on_update(j, beta)
        if not gaussian:
            q = _loss(family, y, theta, n) + np.sum(penalty_value(pen, lam, np.abs(beta)))
            if q > q_prev + 1e-12 * max(1.0, abs(q_prev)):
                backtracks += 1
                new = beta.copy()
                ok = False
                t = 0.5
                for _ in range(max_halvings):
                    cand = beta_old + t * (new - beta_old)
                    bad = (cand != 0) & (np.abs(cand) < tau)
                    cand[bad] = beta_old[bad]
                    th_c = X @ cand
                    if family is Family.POISSON and np.max(np.abs(th_c)) > POISSON_THETA_MAX:
                        t *= 0.5
                        continue
                    qc = _loss(family, y, th_c, n) + np.sum(penalty_value(pen, lam, np.abs(cand)))
                    if qc <= q_prev:
                        ok = True
                        break
                    t *= 0.5
                if not ok:
                    beta[:] = beta_old
                    break
                beta[:] = cand
                theta = th_c
                bsum = np.sum(b_value(family, theta))
                mu = b_prime(family, theta)
                w = np.maximum(b_double_prime(family, theta), WEIGHT_FLOOR)
                nnz = int(np.count_nonzero(beta))
                maxdelta = float(np.max(np.abs(beta - beta_old)))
                q = qc
            q_prev = q
        if maxdelta < tol:
            converged = True
            break
    return cycles, converged, rejections, backtracks
