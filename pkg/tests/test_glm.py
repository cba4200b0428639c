import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from threshreg.exceptions import DimensionError, DomainError, SupportError
from threshreg.glm import (Family, b_double_prime, b_prime, b_value, check_response,
                           kl_divergence, neg_log_likelihood, score)

FAMILIES = list(Family)


def _instance(rng, family, n=15, p=4):
    X = rng.standard_normal((n, p))
    beta = 0.3 * rng.standard_normal(p)
    if family is Family.GAUSSIAN:
        y = rng.standard_normal(n)
    elif family is Family.BERNOULLI:
        y = (rng.random(n) < 0.5).astype(float)
    else:
        y = rng.poisson(1.0, n).astype(float)
    return X, y, beta


class TestCumulant:
    def test_values(self):
        assert b_value(Family.GAUSSIAN, 0.0) == 0.0
        assert b_value(Family.BERNOULLI, 0.0) == pytest.approx(math.log(2), abs=1e-15)
        assert b_value(Family.POISSON, 1.0) == pytest.approx(math.e, rel=1e-15)

    def test_mean(self):
        assert b_prime(Family.GAUSSIAN, 2.5) == 2.5
        assert b_prime(Family.BERNOULLI, 0.0) == 0.5
        assert b_prime(Family.POISSON, 0.0) == 1.0

    def test_variance(self):
        assert b_double_prime(Family.GAUSSIAN, -17.3) == 1.0
        assert b_double_prime(Family.BERNOULLI, 0.0) == 0.25
        assert b_double_prime(Family.POISSON, 0.0) == 1.0

    def test_bernoulli_no_overflow(self):
        t = np.array([-800.0, -40.0, 40.0, 800.0])
        assert np.all(np.isfinite(b_value(Family.BERNOULLI, t)))
        assert b_value(Family.BERNOULLI, 800.0) == pytest.approx(800.0)
        mu = b_prime(Family.BERNOULLI, t)
        assert np.all((mu >= 0) & (mu <= 1))

    def test_poisson_guard(self):
        with pytest.raises(DomainError):
            b_value(Family.POISSON, 701.0)
        with pytest.raises(DomainError):
            b_prime(Family.GAUSSIAN, np.nan)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_derivatives_match_finite_differences(self, family):
        h = 1e-5
        for t in np.linspace(-3, 3, 25):
            fd1 = (b_value(family, t + h) - b_value(family, t - h)) / (2 * h)
            fd2 = (b_prime(family, t + h) - b_prime(family, t - h)) / (2 * h)
            assert abs(fd1 - b_prime(family, t)) < 1e-6
            assert abs(fd2 - b_double_prime(family, t)) < 1e-5

    def test_family_aliases(self):
        assert Family.parse("logistic") is Family.BERNOULLI
        assert Family.parse("Linear") is Family.GAUSSIAN
        with pytest.raises(ValueError):
            Family.parse("gamma")


class TestLikelihood:
    def test_zero_case(self):
        X = np.ones((3, 2))
        assert neg_log_likelihood(Family.GAUSSIAN, X, np.zeros(3), np.zeros(2)) == 0.0

    def test_bernoulli_hand_value(self):
        v = neg_log_likelihood(Family.BERNOULLI, np.array([[1.0]]), np.array([1.0]), np.array([0.0]))
        assert v == pytest.approx(math.log(2), abs=1e-15)

    def test_gaussian_identity(self, rng):
        X = rng.standard_normal((9, 3))
        y = rng.standard_normal(9)
        beta = rng.standard_normal(3)
        n = 9
        expected = np.sum((y - X @ beta) ** 2) / (2 * n) - y @ y / (2 * n)
        assert neg_log_likelihood(Family.GAUSSIAN, X, y, beta) == pytest.approx(expected, abs=1e-13)

    def test_support_errors(self):
        X = np.ones((2, 1))
        with pytest.raises(SupportError, match="row 1"):
            neg_log_likelihood(Family.BERNOULLI, X, np.array([0.0, 2.0]), np.zeros(1))
        with pytest.raises(SupportError):
            check_response(Family.POISSON, [1.5, 2.0])
        with pytest.raises(SupportError):
            check_response(Family.POISSON, [-1.0])

    def test_dimension_errors(self):
        with pytest.raises(DimensionError):
            neg_log_likelihood(Family.GAUSSIAN, np.ones((3, 2)), np.zeros(3), np.zeros(3))
        with pytest.raises(DimensionError):
            score(Family.GAUSSIAN, np.ones((3, 2)), np.zeros(2), np.zeros(2))

    def test_score_hand_algebra(self):
        X = np.array([[1.0, 2.0], [0.5, -1.0]])
        b0 = np.array([0.3, -0.7])
        y = X @ b0
        np.testing.assert_allclose(score(Family.GAUSSIAN, X, y, np.zeros(2)), -X.T @ X @ b0 / 2,
                                   atol=1e-15)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_score_finite_differences(self, family):
        for i in range(100):
            rng = np.random.default_rng([7, i])
            X, y, beta = _instance(rng, family)
            g = score(family, X, y, beta)
            h = 1e-6
            fd = np.empty_like(beta)
            for j in range(beta.size):
                e = np.zeros_like(beta)
                e[j] = h
                fd[j] = (neg_log_likelihood(family, X, y, beta + e)
                         - neg_log_likelihood(family, X, y, beta - e)) / (2 * h)
            assert np.max(np.abs(fd - g)) <= 1e-5 * max(1.0, np.max(np.abs(g)))


class TestKL:
    def test_gaussian_closed_form(self):
        X = np.array([[1.0, 0.5], [-0.3, 2.0], [0.7, -1.1]])
        bh, b0 = np.array([0.2, -0.4]), np.array([1.0, 0.1])
        d = X @ (bh - b0)
        assert kl_divergence(Family.GAUSSIAN, X, bh, b0) == pytest.approx(0.5 * d @ d, rel=1e-13)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_zero_at_truth(self, family, rng):
        X = rng.standard_normal((20, 3))
        b0 = 0.5 * rng.standard_normal(3)
        assert kl_divergence(family, X, b0, b0) == 0.0

    @pytest.mark.parametrize("family", FAMILIES)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_nonnegative(self, family, seed):
        r = np.random.default_rng(seed)
        X = r.standard_normal((12, 3))
        bh, b0 = r.standard_normal(3), r.standard_normal(3)
        assert kl_divergence(family, X, bh, b0) >= 0.0
