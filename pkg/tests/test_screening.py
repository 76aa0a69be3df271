import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ensemble_alpha.panel import SignalSpec, generate_synthetic_panel
from ensemble_alpha.preprocess import preprocess_panel
from ensemble_alpha.screening import (
    FoldError,
    ScreeningConfig,
    ScreeningError,
    StandardizationError,
    default_grid,
    fit_lasso,
    kkt_residuals,
    lambda_max,
    screen_factors,
    select_lambda,
)

from oracles import soft_threshold_oracle


def standardized(n, p, rng):
    X = rng.normal(size=(n, p))
    return (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)


class TestFitLasso:
    def test_ols_limit(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            X = standardized(200, 10, rng)
            y = X @ rng.normal(size=10) + rng.normal(size=200)
            fit = fit_lasso(X, y, 0.0)
            A = np.column_stack([np.ones(200), X])
            ols = np.linalg.lstsq(A, y, rcond=None)[0]
            np.testing.assert_allclose(fit.beta, ols[1:], atol=1e-6)
            assert fit.intercept == pytest.approx(ols[0], abs=1e-6)

    def test_soft_threshold_orthonormal(self):
        # orthonormal, centred columns (unit norm, not unit variance)
        rng = np.random.default_rng(3)
        Q, _ = np.linalg.qr(np.column_stack([np.ones(8), rng.normal(size=(8, 2))]))
        X = Q[:, 1:]
        y = 3.0 * X[:, 0] - 0.5 * X[:, 1]
        fit = fit_lasso(X, y, 2.0, require_standardized=False)
        assert fit.beta[0] == pytest.approx(2.0, abs=1e-9)
        assert fit.beta[0] == pytest.approx(soft_threshold_oracle(3.0, 2.0, 1.0), abs=1e-9)
        assert fit.beta[1] == 0.0  # |b| = 0.5 < lambda / 2

    @given(st.floats(-5, 5), st.floats(0, 10), st.integers(0, 1000))
    def test_single_column_matches_oracle(self, b, lam, seed):
        rng = np.random.default_rng(seed)
        x = standardized(30, 1, rng)
        y = b * x[:, 0]
        fit = fit_lasso(x, y, lam)
        expected = soft_threshold_oracle(b, lam, float(x[:, 0] @ x[:, 0]))
        assert fit.beta[0] == pytest.approx(expected, abs=1e-9)

    def test_huge_lambda(self):
        rng = np.random.default_rng(1)
        X = standardized(50, 4, rng)
        y = rng.normal(size=50)
        assert not fit_lasso(X, y, 10 * lambda_max(X, y)).beta.any()
        assert not fit_lasso(X, y, lambda_max(X, y)).beta.any()

    def test_precondition(self):
        X = np.random.default_rng(0).normal(size=(20, 2)) * 3 + 1
        with pytest.raises(StandardizationError):
            fit_lasso(X, np.zeros(20), 0.1)

    def test_non_convergence_reported(self):
        rng = np.random.default_rng(2)
        X = standardized(40, 5, rng)
        fit = fit_lasso(X, rng.normal(size=40), 0.01, max_sweeps=1, tol=1e-15)
        assert not fit.converged and fit.n_iter == 1

    @given(st.integers(0, 10_000), st.floats(0.01, 50))
    def test_kkt(self, seed, lam):
        rng = np.random.default_rng(seed)
        X = standardized(60, 6, rng)
        X[:, 5] = X[:, 4] * 0.9 + 0.1 * X[:, 5]
        X = (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)
        y = X[:, 0] - 0.5 * X[:, 4] + rng.normal(size=60)
        fit = fit_lasso(X, y, lam)
        assert fit.converged
        assert kkt_residuals(X, y, fit).max() <= 1e-4

    def test_duplicate_columns(self):
        rng = np.random.default_rng(4)
        x = standardized(100, 2, rng)
        X = np.column_stack([x[:, 0], x[:, 0], x[:, 1]])
        y = 0.8 * x[:, 0] + 0.1 * rng.normal(size=100)
        fit = fit_lasso(X, y, 1.0)
        assert np.count_nonzero(fit.beta[:2]) <= 1


class TestSelectLambda:
    def test_single_element_grid(self):
        assert select_lambda(np.zeros((3, 1)), np.zeros(3), [0.7]) == 0.7

    def test_bad_grids(self):
        rng = np.random.default_rng(0)
        X = standardized(20, 2, rng)
        with pytest.raises(ScreeningError):
            select_lambda(X, rng.normal(size=20), [0.1, 0.5])
        with pytest.raises(ScreeningError):
            select_lambda(X, rng.normal(size=20), [0.5, -0.1])

    def test_fold_error(self):
        rng = np.random.default_rng(0)
        with pytest.raises(FoldError):
            select_lambda(standardized(4, 2, rng), rng.normal(size=4), [1.0, 0.5], k_folds=5)

    def test_planted_recovery(self):
        hits = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            X = standardized(200, 20, rng)
            truth = {2, 7, 13}
            y = X[:, 2] + 0.8 * X[:, 7] - 0.6 * X[:, 13] + 0.3 * rng.normal(size=200)
            grid = default_grid(X, y, 40, 1e-3)
            lam = select_lambda(X, y, grid, seed=seed)
            support = set(np.flatnonzero(fit_lasso(X, y, lam).beta != 0).tolist())
            hits += support == truth
        assert hits / 50 >= 0.9

    def test_pure_noise_picks_largest(self):
        top = 0
        for seed in range(30):
            rng = np.random.default_rng(100 + seed)
            X = standardized(150, 10, rng)
            y = rng.normal(size=150)
            grid = default_grid(X, y, 20, 1e-2)
            top += select_lambda(X, y, grid, seed=seed) == grid[0]
        assert top / 30 > 0.5


class TestScreenFactors:
    def _panel(self, seed, dup=False):
        spec = SignalSpec(coefficients=(0.05, 0.04), noise_scale=0.05)
        p = generate_synthetic_panel(80, 12, 6, spec, seed=seed)
        if dup:
            v = p.values.copy()
            v[:, :, 5] = v[:, :, 0]
            p = p.replace(values=v)
        return preprocess_panel(p)[0]

    def test_partition_and_signal(self):
        res = screen_factors(self._panel(1))
        names = {"f01", "f02", "f03", "f04", "f05", "f06"}
        assert set(res.kept) | set(res.excluded) == names
        assert not set(res.kept) & set(res.excluded)
        assert {"f01", "f02"} <= set(res.kept)
        assert len(res.cv_curve) == 30

    def test_duplicate_factor(self):
        res = screen_factors(self._panel(2, dup=True))
        assert len({"f01", "f06"} & set(res.kept)) <= 1

    def test_noise_panel_well_formed(self):
        p = preprocess_panel(generate_synthetic_panel(40, 6, 4, SignalSpec(noise_scale=1.0), seed=5))[0]
        res = screen_factors(p)
        assert len(res.kept) + len(res.excluded) == 4
        assert res.lambda_selected > 0
        d = res.to_dict()
        assert set(d) >= {"kept", "excluded", "lambda_selected", "cv_curve"}

    def test_seed_determinism(self):
        p = self._panel(3)
        a = screen_factors(p, ScreeningConfig(seed=4))
        b = screen_factors(p, ScreeningConfig(seed=4))
        assert a.to_dict() == b.to_dict()
