"""Canonical-link exponential families and the GLM negative log-likelihood.

All objective evaluations drop the dispersion term ``c(y, phi)``; it does not
depend on the coefficients.
"""
from __future__ import annotations

import enum

import numpy as np

from .exceptions import DimensionError, DomainError, SupportError

#: Largest |theta| accepted for the Poisson family (exp(700) ~ 1e304).
POISSON_THETA_MAX = 700.0


class Family(enum.Enum):
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"
    POISSON = "poisson"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, Family):
            return value
        key = str(value).strip().lower()
        aliases = {"linear": "gaussian", "normal": "gaussian",
                   "logistic": "bernoulli", "binomial": "bernoulli",
                   "count": "poisson"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown family {value!r}") from None

    @property
    def code(self) -> int:
        """Integer code used by the compiled kernel."""
        return _CODES[self]


_CODES = {Family.GAUSSIAN: 0, Family.BERNOULLI: 1, Family.POISSON: 2}


def _check_theta(family: Family, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise DomainError("linear predictor is not finite")
    if family is Family.POISSON and theta.size and np.max(np.abs(theta)) > POISSON_THETA_MAX:
        raise DomainError(
            f"Poisson linear predictor exceeds |theta| <= {POISSON_THETA_MAX:g}")
    return theta


def _ret(x: np.ndarray):
    return float(x) if x.ndim == 0 else x


def b_value(family: Family, theta):
    """Cumulant function b(theta), elementwise."""
    family = Family.parse(family)
    t = _check_theta(family, theta)
    if family is Family.GAUSSIAN:
        out = 0.5 * t * t
    elif family is Family.BERNOULLI:
        # log(1 + e^t) without overflow
        out = np.where(t > 0, t + np.log1p(np.exp(-np.abs(t))), np.log1p(np.exp(np.minimum(t, 0.0))))
    else:
        out = np.exp(t)
    return _ret(out)


def b_prime(family: Family, theta):
    """Mean function mu = b'(theta), elementwise."""
    family = Family.parse(family)
    t = _check_theta(family, theta)
    if family is Family.GAUSSIAN:
        out = t.copy()
    elif family is Family.BERNOULLI:
        e = np.exp(-np.abs(t))
        out = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    else:
        out = np.exp(t)
    return _ret(out)


def b_double_prime(family: Family, theta):
    """Variance function b''(theta), elementwise. Exactly 1 for the Gaussian family."""
    family = Family.parse(family)
    t = _check_theta(family, theta)
    if family is Family.GAUSSIAN:
        out = np.ones_like(t)
    elif family is Family.BERNOULLI:
        e = np.exp(-np.abs(t))
        out = e / (1.0 + e) ** 2
    else:
        out = np.exp(t)
    return _ret(out)


def check_response(family: Family, y) -> np.ndarray:
    """Validate that ``y`` lies in the support of ``family`` and return it as floats."""
    family = Family.parse(family)
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DimensionError("response must be one-dimensional")
    if not np.all(np.isfinite(y)):
        raise SupportError("response contains non-finite values")
    if family is Family.BERNOULLI:
        bad = np.flatnonzero((y != 0.0) & (y != 1.0))
        if bad.size:
            raise SupportError(
                f"Bernoulli response must be 0/1; row {bad[0]} has value {y[bad[0]]:g}")
    elif family is Family.POISSON:
        bad = np.flatnonzero((y < 0) | (y != np.floor(y)))
        if bad.size:
            raise SupportError(
                f"Poisson response must be a nonnegative integer; row {bad[0]} has value {y[bad[0]]:g}")
    return y


def _check_dims(X, y, beta):
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.ndim != 2:
        raise DimensionError("design matrix must be two-dimensional")
    n, p = X.shape
    if beta.shape != (p,):
        raise DimensionError(f"beta has shape {beta.shape}, expected ({p},)")
    if y is not None:
        y = np.asarray(y, dtype=float)
        if y.shape != (n,):
            raise DimensionError(f"y has shape {y.shape}, expected ({n},)")
    return X, y, beta


def neg_log_likelihood(family: Family, X, y, beta) -> float:
    """L(beta) = -n^{-1} {y'X beta - 1'b(X beta)}."""
    family = Family.parse(family)
    X, y, beta = _check_dims(X, y, beta)
    y = check_response(family, y)
    theta = X @ beta
    return float(-(y @ theta - np.sum(b_value(family, theta))) / X.shape[0])


def score(family: Family, X, y, beta) -> np.ndarray:
    """Gradient of :func:`neg_log_likelihood`: -n^{-1} X'(y - b'(X beta))."""
    family = Family.parse(family)
    X, y, beta = _check_dims(X, y, beta)
    y = check_response(family, y)
    mu = np.atleast_1d(b_prime(family, X @ beta))
    return -(X.T @ (y - mu)) / X.shape[0]


def kl_divergence(family: Family, X, beta_hat, beta0) -> float:
    """Kullback-Leibler discrepancy of the fitted model from the true one.

    ``D = -(EY)'X(beta_hat - beta0) + 1'[b(X beta_hat) - b(X beta0)]`` with
    ``EY = b'(X beta0)``. Not normalised by n.
    """
    family = Family.parse(family)
    X, _, beta_hat = _check_dims(X, None, beta_hat)
    beta0 = np.asarray(beta0, dtype=float)
    if beta0.shape != beta_hat.shape:
        raise DimensionError("beta_hat and beta0 differ in length")
    th_hat = X @ beta_hat
    th0 = X @ beta0
    mean0 = np.atleast_1d(b_prime(family, th0))
    b_hat = np.atleast_1d(b_value(family, th_hat))
    b_0 = np.atleast_1d(b_value(family, th0))
    d = float(-(mean0 @ (th_hat - th0)) + np.sum(b_hat - b_0))
    # D >= 0 by convexity of b; clip cancellation noise only
    scale = float(np.sum(np.abs(b_hat)) + np.sum(np.abs(b_0))) + 1.0
    return 0.0 if -1e-12 * scale < d < 0.0 else d
