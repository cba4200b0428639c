import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from threshreg.data import (Dataset, Setting, TruthSpec, generate_ar1_design, load_csv, default_truth,
                            rescale_columns, simulate_response, stream_rng)
from threshreg.exceptions import DataError, DimensionError, SupportError
from threshreg.glm import Family


class TestDesign:
    def test_shape_and_independent_case(self):
        X = generate_ar1_design(7, 5, 0.0, np.random.default_rng(0))
        assert X.shape == (7, 5)

    def test_lag_correlations(self):
        X = generate_ar1_design(100_000, 6, 0.5, np.random.default_rng(1))
        C = np.corrcoef(X, rowvar=False)
        for j in range(4):
            assert abs(C[j, j + 1] - 0.5) < 0.02
            assert abs(C[j, j + 2] - 0.25) < 0.02

    def test_pooled_covariance(self):
        r, p = 0.5, 10
        X = generate_ar1_design(100_000, p, r, np.random.default_rng(2))
        S = X.T @ X / X.shape[0]
        idx = np.arange(p)
        Sigma = r ** np.abs(idx[:, None] - idx[None, :])
        assert np.linalg.norm(S - Sigma) < 0.05

    def test_invalid(self):
        with pytest.raises(ValueError):
            generate_ar1_design(5, 5, 1.0, np.random.default_rng())
        with pytest.raises(ValueError):
            generate_ar1_design(0, 5, 0.2, np.random.default_rng())


class TestRescale:
    def test_hand_examples(self):
        X = np.array([[1.0, 2.0, 1.0], [1.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0]])
        Z, s = rescale_columns(X)
        np.testing.assert_array_equal(Z[:, 0], X[:, 0])
        np.testing.assert_array_equal(Z[:, 1], [2.0, 0, 0, 0])
        np.testing.assert_array_equal(Z[:, 2], [2.0, 0, 0, 0])
        np.testing.assert_array_equal(s, [1.0, 1.0, 2.0])

    def test_zero_column(self):
        with pytest.raises(DataError, match="column 1"):
            rescale_columns(np.array([[1.0, 0.0], [2.0, 0.0]]))

    @given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 40), p=st.integers(1, 12))
    def test_norms_and_idempotence(self, seed, n, p):
        X = np.random.default_rng(seed).standard_normal((n, p)) * 10 ** np.linspace(-3, 3, p)
        Z, _ = rescale_columns(X)
        np.testing.assert_allclose(np.linalg.norm(Z, axis=0), math.sqrt(n), rtol=1e-9)
        Z2, s2 = rescale_columns(Z)
        assert np.array_equal(Z2, Z)
        assert np.all(s2 == 1.0)


class TestTruthAndResponse:
    def test_linear(self):
        t = default_truth("linear", 10)
        np.testing.assert_array_equal(t.beta0, [1, -0.5, 0.7, -1.2, -0.9, 0.5, 0.55, 0, 0, 0])
        assert t.s == 7 and t.sigma == 0.4

    def test_logistic(self):
        t = default_truth(Setting.LOGISTIC, 12)
        assert t.support == (0, 2, 4, 6, 8) and t.s == 5

    def test_poisson(self):
        np.testing.assert_array_equal(default_truth("poisson", 8).beta0, [1, -0.9, 0.8, -1.1, 0.6, 0, 0, 0])

    def test_too_small(self):
        with pytest.raises(ValueError):
            default_truth("linear", 6)

    def test_truth_is_read_only(self):
        t = TruthSpec(np.ones(3))
        with pytest.raises(ValueError):
            t.beta0[0] = 2.0

    def test_bernoulli_mean(self):
        X = np.zeros((100_000, 2))
        y = simulate_response("bernoulli", X, TruthSpec(np.zeros(2)), np.random.default_rng(4))
        assert abs(y.mean() - 0.5) < 0.006

    def test_poisson_moments(self):
        X = np.zeros((100_000, 1))
        y = simulate_response("poisson", X, TruthSpec(np.zeros(1)), np.random.default_rng(5))
        assert abs(y.mean() - 1) < 0.02 and abs(y.var() - 1) < 0.02

    def test_poisson_guard(self):
        with pytest.raises(DataError):
            simulate_response("poisson", np.full((2, 1), 40.0), TruthSpec(np.ones(1)), np.random.default_rng())

    @pytest.mark.parametrize("family", list(Family))
    def test_reproducible(self, family):
        X = generate_ar1_design(30, 4, 0.3, stream_rng(9, 0, 0))
        t = TruthSpec(np.array([0.5, -0.5, 0, 0]), 1.0)
        a = simulate_response(family, X, t, stream_rng(9, 1, 2))
        b = simulate_response(family, X, t, stream_rng(9, 1, 2))
        assert a.tobytes() == b.tobytes()

    def test_streams_distinct(self):
        a = stream_rng(1, 0, 0).standard_normal(4)
        assert not np.array_equal(a, stream_rng(1, 0, 1).standard_normal(4))
        assert not np.array_equal(a, stream_rng(1, 1, 0).standard_normal(4))
        assert not np.array_equal(a, stream_rng(2, 0, 0).standard_normal(4))


class TestDataset:
    def test_from_arrays(self):
        d = Dataset.from_arrays([[1.0, 2.0], [3.0, 4.0]], [0.0, 1.0], "logistic")
        assert (d.n, d.p) == (2, 2) and d.family is Family.BERNOULLI
        assert d.X.flags.f_contiguous
        np.testing.assert_allclose(np.linalg.norm(d.X, axis=0), math.sqrt(2))

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            Dataset(np.ones((3, 2)), np.ones(2), "gaussian", np.ones(2))

    def test_subset_keeps_scaling(self):
        d = Dataset.from_arrays(np.arange(1.0, 13.0).reshape(6, 2), np.zeros(6), "gaussian")
        s = d.subset([0, 2])
        np.testing.assert_array_equal(s.X, d.X[[0, 2]])
        assert not s.rescaled


class TestCsv:
    def _write(self, tmp_path, text):
        f = tmp_path / "d.csv"
        f.write_text(text)
        return f

    def test_smoke(self, tmp_path):
        d = load_csv(self._write(tmp_path, "x1,x2,y\n1,2,0.5\n3,4,1.5\n5,7,2\n"), "y", "gaussian")
        assert (d.n, d.p) == (3, 2)
        assert d.feature_names == ["x1", "x2"]

    def test_response_mismatch(self, tmp_path):
        with pytest.raises(SupportError):
            load_csv(self._write(tmp_path, "x,y\n1,0\n2,2\n"), "y", "bernoulli")

    def test_non_numeric(self, tmp_path):
        with pytest.raises(DataError, match=r"row 3, column 'x2'"):
            load_csv(self._write(tmp_path, "x1,x2,y\n1,2,0\n3,abc,1\n"), "y", "gaussian")

    def test_missing_column(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_csv(self._write(tmp_path, "x1,x2\n1,2\n"), "y", "gaussian")

    def test_ragged(self, tmp_path):
        with pytest.raises(DataError, match="row 2"):
            load_csv(self._write(tmp_path, "x1,y\n1,2,3\n"), "y", "gaussian")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "nope.csv", "y", "gaussian")

    def test_already_scaled_identity(self, tmp_path):
        Z, _ = rescale_columns(np.random.default_rng(0).standard_normal((5, 2)))
        y = np.arange(5.0)
        lines = ["a,b,y"] + [f"{float(Z[i, 0])!r},{float(Z[i, 1])!r},{float(y[i])!r}" for i in range(5)]
        d = load_csv(self._write(tmp_path, "\n".join(lines) + "\n"), "y", "gaussian")
        assert np.array_equal(d.X, Z)
        assert np.all(d.column_scales == 1.0)
