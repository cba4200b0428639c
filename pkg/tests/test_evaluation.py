import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from threshreg.data import Dataset, TruthSpec, generate_ar1_design, default_truth, rescale_columns, simulate_response
from threshreg.evaluation import (MetricsReport, TuningGrid, compute_metrics, false_signs, kfold_indices,
                                  lambda_grid, lambda_max, lambda_schedule, lq_loss, prediction_error,
                                  select_tuning, selection_errors, sigma_hat, tau_schedule, trimmed_mean)
from threshreg.exceptions import DimensionError
from threshreg.penalty import Penalty, PenaltyKind
from threshreg.reference import oracle_mle

SCAD = Penalty(PenaltyKind.SCAD)
vec = st.lists(st.sampled_from([-2.0, -0.5, 0.0, 0.0, 0.7, 1.0]), min_size=1, max_size=12)


def linear_split(seed, n=100, p=200):
    rng = np.random.default_rng(seed)
    truth = default_truth("linear", p)
    X, sc = rescale_columns(generate_ar1_design(n, p, 0.25, rng))
    train = Dataset(X, simulate_response("gaussian", X, truth, rng), "gaussian", sc)
    Xv = generate_ar1_design(n, p, 0.25, rng) * sc
    valid = Dataset(Xv, simulate_response("gaussian", Xv, truth, rng), "gaussian", sc, False)
    return train, valid, truth


class TestSchedules:
    def test_tau(self):
        assert tau_schedule(1.0, 8, 8) == pytest.approx(math.sqrt(math.log(8)) * math.sqrt(math.log(8) / 8))
        assert tau_schedule(1.0, 8, 8) == pytest.approx(0.7352, abs=1e-4)
        assert tau_schedule(2.0, 50, 30) == pytest.approx(2 * tau_schedule(1.0, 50, 30))
        vals = [tau_schedule(1.0, n, 50) for n in (10 ** 2, 10 ** 4, 10 ** 6)]
        assert vals[0] > vals[1] > vals[2]
        with pytest.raises(ValueError):
            tau_schedule(0.0, 10, 10)
        with pytest.raises(ValueError):
            tau_schedule(1.0, 1, 10)

    def test_lambda(self):
        assert lambda_schedule(1.0, 100, 100) == pytest.approx(0.2146, abs=1e-4)
        assert lambda_schedule(1.0, 100, 20) == pytest.approx(math.sqrt(math.log(100) / 100))
        assert lambda_schedule(3.0, 100, 500) == pytest.approx(3 * lambda_schedule(1.0, 100, 500))

    def test_lambda_grid(self, rng):
        d = Dataset.from_arrays(rng.standard_normal((30, 5)), rng.standard_normal(30), "gaussian")
        g = lambda_grid(d, 50, 1e-3)
        assert g.size == 50 and g[0] == pytest.approx(lambda_max(d))
        assert g[-1] == pytest.approx(1e-3 * lambda_max(d))
        assert np.all(np.diff(g) < 0)


class TestSelectionMetrics:
    def test_false_signs(self):
        assert false_signs([1, 0, 0], [1, -1, 0]) == 1
        assert false_signs([-1, 1], [1, 1]) == 1
        assert false_signs([0.3, -2], [1, -1]) == 0
        with pytest.raises(DimensionError):
            false_signs([1, 2], [1])

    def test_selection_errors(self):
        assert selection_errors([1, 1, 0], [1, 0, 0]) == (1, 0)
        assert selection_errors(np.zeros(10), default_truth("linear", 10).beta0) == (0, 7)

    @given(a=vec, b=vec)
    def test_fs_bounds(self, a, b):
        m = min(len(a), len(b))
        a, b = np.array(a[:m]), np.array(b[:m])
        fp, fn = selection_errors(a, b)
        fs = false_signs(a, b)
        flips = int(np.sum((a != 0) & (b != 0) & (np.sign(a) != np.sign(b))))
        assert fp + fn <= fs <= fp + fn + flips
        assert fs >= max(fp, fn)
        assert (fs == 0) == bool(np.array_equal(np.sign(a), np.sign(b)))


class TestLosses:
    def test_examples(self):
        z = np.zeros(2)
        assert lq_loss([3, 4], z, 2) == pytest.approx(5)
        assert lq_loss([3, 4], z, 1) == pytest.approx(7)
        assert lq_loss([3, 4], z, math.inf) == 4
        assert lq_loss(z, z, 1.5) == 0.0
        with pytest.raises(ValueError):
            lq_loss([1.0], [0.0], 3)

    @given(d=st.lists(st.floats(-5, 5), min_size=1, max_size=10), q=st.floats(1.0, 2.0))
    def test_norm_ordering(self, d, q):
        d = np.array(d)
        z = np.zeros_like(d)
        l1, lq, l2, li = (lq_loss(d, z, 1), lq_loss(d, z, q), lq_loss(d, z, 2), lq_loss(d, z, math.inf))
        assert l1 >= lq - 1e-9 and lq >= l2 - 1e-9 and l2 >= li - 1e-9 and li >= 0

    def test_prediction_error_gaussian(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((100_000, 3))
        b0 = np.array([1.0, -0.5, 0.0])
        y = X @ b0 + 0.4 * rng.standard_normal(100_000)
        assert abs(prediction_error("gaussian", b0, X, y) - 0.16) < 0.005
        assert prediction_error("gaussian", b0, X, X @ b0) == 0.0

    def test_prediction_error_bernoulli(self):
        rng = np.random.default_rng(1)
        y = (rng.random(100_000) < 0.5).astype(float)
        assert prediction_error("bernoulli", np.zeros(2), np.ones((100_000, 2)), y) == pytest.approx(0.25, abs=1e-12)

    def test_prediction_error_decays_with_size(self):
        rng = np.random.default_rng(2)
        b0 = np.array([0.5, 0.5])
        devs = []
        for m in (1_000, 10_000, 100_000):
            X = rng.standard_normal((m, 2))
            y = X @ b0 + 0.4 * rng.standard_normal(m)
            devs.append(abs(prediction_error("gaussian", b0, X, y) - 0.16) * math.sqrt(m))
        assert max(devs) < 5 * 0.16 * math.sqrt(2)

    def test_trimmed_mean(self):
        assert trimmed_mean([0, 1, 2, 3, 100], 0.2) == 2.0
        assert trimmed_mean([1, 2, 6], 0.0) == 3.0
        assert trimmed_mean(np.full(7, 2.5), 0.3) == 2.5
        with pytest.raises(ValueError):
            trimmed_mean([1, 2], 0.5)
        with pytest.raises(ValueError):
            trimmed_mean([], 0.1)


class TestSigmaHat:
    def test_noiseless(self, rng):
        X = rng.standard_normal((20, 3))
        b = np.array([1.0, 0.0, 2.0])
        assert sigma_hat(Dataset(X, X @ b, "gaussian", np.ones(3)), b) == 0.0

    def test_null_model(self, rng):
        y = rng.standard_normal(30)
        d = Dataset(rng.standard_normal((30, 2)), y, "gaussian", np.ones(2))
        assert sigma_hat(d, np.zeros(2)) == pytest.approx(math.sqrt(y @ y / 30))

    def test_oracle_concentrates(self):
        vals = []
        truth = default_truth("linear", 10)
        for i in range(100):
            rng = np.random.default_rng([41, i])
            X, sc = rescale_columns(generate_ar1_design(100, 10, 0.25, rng))
            d = Dataset(X, simulate_response("gaussian", X, truth, rng), "gaussian", sc)
            vals.append(sigma_hat(d, oracle_mle(d, "gaussian", truth.support)))
        assert abs(np.mean(vals) - 0.4) < 0.02

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            sigma_hat(Dataset(np.ones((2, 2)), np.zeros(2), "gaussian", np.ones(2)), np.ones(2))
        with pytest.raises(ValueError):
            sigma_hat(Dataset(np.ones((2, 1)), np.zeros(2), "poisson", np.ones(1)), np.zeros(1))


def test_metrics_report(rng):
    X = rng.standard_normal((20, 4))
    b0 = np.array([1.0, -1.0, 0.0, 0.0])
    d = Dataset(X, X @ b0 + rng.standard_normal(20), "gaussian", np.ones(4))
    m = compute_metrics(d, np.array([0.9, 0.0, 0.2, 0.0]), b0, pe=0.5, extra_q=[1.5])
    assert isinstance(m, MetricsReport)
    assert (m.fp, m.fn, m.fs) == (1, 1, 2) and not m.consistent and not m.sign_consistent
    assert m.l1 == pytest.approx(1.3) and m.linf == pytest.approx(1.0)
    assert m.kl_per_n >= 0 and m.sigma_hat > 0
    assert m.as_dict()["l1.5"] == pytest.approx(lq_loss([0.9, 0, 0.2, 0], b0, 1.5))


class TestTuning:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            TuningGrid(c6_values=())
        with pytest.raises(ValueError):
            TuningGrid(lambda_values=(0.1, 0.2))
        with pytest.raises(ValueError):
            TuningGrid(method="kfold", k=1)
        with pytest.raises(ValueError):
            TuningGrid(method="bic")

    def test_kfold_indices(self):
        folds = kfold_indices(23, 5, np.random.default_rng(0))
        assert len(folds) == 5
        assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(23))
        assert max(map(len, folds)) - min(map(len, folds)) <= 1

    def test_single_pair(self):
        train, valid, _ = linear_split(0, n=60, p=30)
        lam, c6, fit = select_tuning(train, valid, SCAD, TuningGrid(c6_values=(1.0,), lambda_values=(0.1,)))
        assert (lam, c6) == (0.1, 1.0) and fit.lam == 0.1

    def test_duplicate_entries_tie_rule(self):
        train, valid, _ = linear_split(1, n=60, p=30)
        grid = TuningGrid(c6_values=(0.5, 0.5, 1e-6), lambda_values=(50.0, 40.0))
        lam, c6, fit = select_tuning(train, valid, SCAD, grid)
        assert fit.nnz == 0 and lam == 50.0 and c6 == 0.5

    def test_winner_from_grid(self):
        train, valid, _ = linear_split(2, n=60, p=30)
        grid = TuningGrid(c6_values=(0.5, 2.0), n_lambda=10)
        lam, c6, _ = select_tuning(train, valid, SCAD, grid)
        assert c6 in grid.c6_values and np.any(np.isclose(grid.lambdas(train), lam, rtol=0, atol=0))

    def test_kfold(self):
        train, _, _ = linear_split(3, n=60, p=30)
        grid = TuningGrid(c6_values=(1.0,), n_lambda=8, method="kfold", k=3)
        lam, c6, fit = select_tuning(train, None, SCAD, grid, rng=np.random.default_rng(0))
        assert lam in grid.lambdas(train) and fit.lam == lam
        with pytest.raises(ValueError):
            select_tuning(train, None, SCAD, grid)

    def test_unthresholded(self):
        train, valid, _ = linear_split(4, n=60, p=30)
        lam, c6, fit = select_tuning(train, valid, SCAD, TuningGrid(n_lambda=5), thresholded=False)
        assert c6 == 0.0 and fit.tau == 0.0

    def test_planted_recovery(self):
        ok = 0
        for i in range(100):
            train, valid, truth = linear_split(100 + i)
            _, _, fit = select_tuning(train, valid, SCAD, TuningGrid())
            fp, fn = selection_errors(fit.beta, truth.beta0)
            ok += fp + fn == 0
        assert ok >= 90
