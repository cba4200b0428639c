"""Design diagnostics: robust spark, Gaussian design constants and the residual certificate.

The robust spark ``kappa_c`` of ``X`` is the smallest number of columns of
``n^{-1/2} X`` forming a submatrix with a singular value below ``c``. A set of
more than ``n`` columns is always counted as violating (its Gram matrix is
singular), so ``kappa_c <= n + 1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import GuardError, RankDeficiencyError
from .glm import Family, score

EXACT_MAX_P = 20
GAMMA_EXACT_MAX_NOISE = 20
GAMMA_EXACT_MAX_S = 4


@dataclass(frozen=True)
class SparkEstimate:
    """Robust spark value.

    ``kind`` is ``"exact"``, ``"upper_bound"`` (witnessed or heuristic) or
    ``"lower_bound_verified"`` (all smaller column sets checked).
    """

    c: float
    kind: str
    value: int
    witness: tuple[int, ...] = ()


def smallest_singular_value(X, cols) -> float:
    """Smallest singular value of the n x |cols| submatrix of n^{-1/2} X (0 if |cols| > n)."""
    X = np.asarray(X, dtype=float)
    cols = list(cols)
    n = X.shape[0]
    if len(cols) > n:
        return 0.0
    if not cols:
        return math.inf
    return float(np.linalg.svd(X[:, cols] / math.sqrt(n), compute_uv=False)[-1])


class _GramOracle:
    """Smallest singular values of column subsets through Gram eigenvalues."""

    def __init__(self, X):
        self.X = np.asarray(X, dtype=float)
        self.n, self.p = self.X.shape
        self.G = self.X.T @ self.X / self.n if self.p <= 2000 else None
        self.calls = 0

    def gram(self, idx):
        if self.G is not None:
            return self.G[np.ix_(idx, idx)] if idx.ndim == 1 else self.G[idx[:, :, None], idx[:, None, :]]
        if idx.ndim == 1:
            Xs = self.X[:, idx]
            return Xs.T @ Xs / self.n
        Xs = self.X[:, idx]  # n x B x k
        return np.einsum("nbj,nbk->bjk", Xs, Xs) / self.n

    def smin(self, subsets: np.ndarray) -> np.ndarray:
        """Batched smallest singular values for an array of subsets (B x k)."""
        subsets = np.atleast_2d(subsets)
        self.calls += subsets.shape[0]
        k = subsets.shape[1]
        if k > self.n:
            return np.zeros(subsets.shape[0])
        ev = np.linalg.eigvalsh(self.gram(subsets))[:, 0]
        return np.sqrt(np.maximum(ev, 0.0))


def _check_c(c):
    if not c > 0:
        raise ValueError("c must be positive")


def robust_spark_exact(X, c: float, max_size: int | None = None) -> SparkEstimate:
    """Exact robust spark by exhaustive enumeration (requires p <= 20).

    Returns the sentinel ``p + 1`` (kind ``exact``) when no column subset violates.
    With ``max_size``, enumeration stops after that size and, if nothing
    violated, a ``lower_bound_verified`` estimate of ``max_size + 1`` is returned.
    """
    _check_c(c)
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if p > EXACT_MAX_P:
        raise GuardError(f"exhaustive spark needs p <= {EXACT_MAX_P}, got p={p}")
    oracle = _GramOracle(X)
    top = min(p, n + 1)
    if max_size is not None:
        top = min(top, int(max_size))
    for k in range(1, top + 1):
        combos = itertools.combinations(range(p), k)
        while True:
            chunk = np.array(list(itertools.islice(combos, 20000)), dtype=np.intp)
            if chunk.size == 0:
                break
            s = oracle.smin(chunk)
            hit = np.flatnonzero(s < c)
            if hit.size:
                return SparkEstimate(c, "exact", k, tuple(int(j) for j in chunk[hit[0]]))
    if max_size is not None and top < min(p, n + 1):
        return SparkEstimate(c, "lower_bound_verified", top + 1)
    return SparkEstimate(c, "exact", p + 1)


def _shrink(oracle: _GramOracle, cols: list, c: float, budget: list) -> list:
    """Greedy column elimination keeping the set violating; prefers the removal with smallest s_min."""
    cols = list(cols)
    while len(cols) > 1 and budget[0] > 0:
        cand = np.array([cols[:i] + cols[i + 1:] for i in range(len(cols))], dtype=np.intp)
        s = oracle.smin(cand)
        budget[0] -= len(cand)
        i = int(np.argmin(s))
        if not s[i] < c:
            break
        cols = [int(j) for j in cand[i]]
    return sorted(cols)


def robust_spark_search(X, c: float, budget: int = 5000, rng: np.random.Generator | None = None
                        ) -> SparkEstimate:
    """Randomized and greedy search for small violating column sets.

    ``budget`` bounds the number of subset singular-value evaluations. Small
    sizes are enumerated exhaustively while they fit; then the most correlated
    column pairs are checked; then random sets of ``min(p, n + 1)`` columns are
    shrunk by greedy elimination. The smallest violating set found is returned
    as an ``upper_bound`` with its witness. If nothing violates, the result is
    the unverified value ``n + 1`` with no witness, except when the full design
    already satisfies the bound, in which case no subset can violate and the
    sentinel ``p + 1`` is returned as exact.
    """
    _check_c(c)
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    oracle = _GramOracle(X)
    left = [int(budget)]
    best: tuple[int, ...] | None = None

    def offer(cols):
        nonlocal best
        cols = tuple(sorted(int(j) for j in cols))
        if best is None or (len(cols), cols) < (len(best), best):
            best = cols

    # exhaustive sizes while affordable
    k_done = 0
    for k in range(1, min(p, n + 1) + 1):
        if math.comb(p, k) > left[0]:
            break
        chunk = np.array(list(itertools.combinations(range(p), k)), dtype=np.intp)
        s = oracle.smin(chunk)
        left[0] -= len(chunk)
        k_done = k
        hit = np.flatnonzero(s < c)
        if hit.size:
            return SparkEstimate(c, "upper_bound", k, tuple(int(j) for j in chunk[hit[0]]))
    if k_done == min(p, n + 1):
        return SparkEstimate(c, "exact", p + 1)
    if p <= n and oracle.smin(np.arange(p)[None, :])[0] >= c:
        return SparkEstimate(c, "exact", p + 1)
    # most correlated pairs
    if k_done < 2 and p >= 2 and left[0] > 0:
        norms = np.sqrt(np.einsum("ij,ij->j", X, X))
        norms[norms == 0] = 1.0
        Xn = X / norms
        R = np.abs(Xn.T @ Xn) if p <= 2000 else None
        if R is not None:
            iu = np.triu_indices(p, 1)
            m = min(left[0], iu[0].size, max(1, left[0] // 4))
            top = np.argsort(-R[iu], kind="stable")[:m]
            pairs = np.stack([iu[0][top], iu[1][top]], axis=1)
            s = oracle.smin(pairs)
            left[0] -= len(pairs)
            for i in np.flatnonzero(s < c):
                offer(pairs[i])
    # random large sets shrunk by elimination
    size = min(p, n + 1)
    while left[0] > 0 and (best is None or len(best) > k_done + 1):
        cols = sorted(int(j) for j in rng.choice(p, size, replace=False))
        left[0] -= 1
        if not oracle.smin(np.array([cols]))[0] < c:
            continue
        offer(_shrink(oracle, cols, c, left))
    if best is None:
        return SparkEstimate(c, "upper_bound", n + 1)
    return SparkEstimate(c, "upper_bound", len(best), best)


def gamma_star_gaussian(X, support) -> float:
    """||(n^{-1} X_S' X_S)^{-1}||_inf (maximum absolute row sum)."""
    X = np.asarray(X, dtype=float)
    S = list(support)
    if not S:
        raise ValueError("support must be nonempty")
    G = X[:, S].T @ X[:, S] / X.shape[0]
    if np.linalg.matrix_rank(G) < len(S):
        raise RankDeficiencyError("support Gram matrix is singular")
    return float(np.max(np.sum(np.abs(np.linalg.inv(G)), axis=1)))


def gamma_n_gaussian(X, support, s: int | None = None, mode: str = "greedy") -> float:
    """sup over noise sets A with |A| <= s of ||n^{-1} X_S' X_A||_inf.

    ``greedy`` takes, for each true-covariate row, the ``s`` largest absolute
    cross products; it attains the supremum. ``exact`` enumerates all sets.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    S = sorted(int(j) for j in support)
    s = len(S) if s is None else int(s)
    noise = [j for j in range(p) if j not in set(S)]
    if not S or not noise or s == 0:
        return 0.0
    C = np.abs(X[:, S].T @ X[:, noise]) / n
    m = min(s, len(noise))
    if mode == "greedy":
        top = -np.sort(-C, axis=1)[:, :m]
        return float(np.max(top.sum(axis=1)))
    if mode != "exact":
        raise ValueError(f"mode must be 'greedy' or 'exact', got {mode!r}")
    if len(noise) > GAMMA_EXACT_MAX_NOISE or s > GAMMA_EXACT_MAX_S:
        raise GuardError(f"exact enumeration needs p - |S| <= {GAMMA_EXACT_MAX_NOISE} "
                         f"and s <= {GAMMA_EXACT_MAX_S}")
    best = 0.0
    for k in range(1, m + 1):
        for A in itertools.combinations(range(len(noise)), k):
            best = max(best, float(np.max(C[:, list(A)].sum(axis=1))))
    return best


def eta_infinity(family: Family | str, X, y, beta_hat) -> float:
    """Max absolute covariate-residual correlation ||n^{-1} X'(y - mu)||_inf."""
    return float(np.max(np.abs(score(family, X, y, beta_hat))))


def tau_threshold_check(eta: float, lam: float, tau: float, beta0_min: float, s: int) -> bool:
    """Heuristic finite-sample check that tau dominates eta + lambda and the signal dominates both.

    True iff ``eta + lam < tau / 3`` and ``beta0_min > 3 sqrt(s) (eta + lam)``.
    """
    r = eta + lam
    return bool(r < tau / 3.0 and beta0_min > 3.0 * math.sqrt(s) * r)
