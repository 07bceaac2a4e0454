import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize
from scipy.stats import norm

from weathergen.errors import NumericalError
from weathergen.gam import (GAMMA_SQRT, NORMAL_IDENTITY, default_lambda_grid,
                            fit_penalized, gcv_score, gcv_select,
                            make_window_fit, posterior_draws,
                            predictive_draws)
from weathergen.splines import build_basis, select_knots


def random_design(rng, n=60, j=10, span=10.0):
    pts = rng.uniform(0, span, size=(n, 3))
    knots = select_knots(pts, j)
    basis = build_basis(pts, knots, time_scale=1.0)
    return basis.design, basis.penalty, basis


def smooth_eta(pts):
    return 1.5 + 0.4 * np.sin(pts[:, 0] / 2.0) + 0.2 * np.cos(pts[:, 1] / 3.0)


class TestNormalFit:
    def test_interpolation_limit_square_design(self, rng):
        X = rng.standard_normal((8, 8)) + 4 * np.eye(8)
        y = rng.standard_normal(8)
        S = np.eye(8)
        fit = fit_penalized(X, y, S, NORMAL_IDENTITY, lam=1e-12)
        assert np.allclose(fit.beta, np.linalg.solve(X, y), atol=1e-6)
        assert fit.deviance == pytest.approx(0.0, abs=1e-12)

    def test_penalty_dominance_collapses_to_polynomial_fit(self, rng):
        X, S, basis = random_design(rng)
        # make the penalty full-rank on the radial block so the smooth part
        # is driven to zero entirely
        j = basis.n_radial
        S = S.copy()
        S[:j, :j] += np.eye(j)
        y = rng.standard_normal(X.shape[0])
        fit = fit_penalized(X, y, S, NORMAL_IDENTITY, lam=1e12)
        poly = X[:, j:]
        beta_poly, *_ = np.linalg.lstsq(poly, y, rcond=None)
        assert np.allclose(X @ fit.beta, poly @ beta_poly, atol=1e-6)

    def test_closed_form_ridge_identity(self, rng):
        # spot check of the closed form; the acceptance suite sweeps 50
        X, S, _ = random_design(rng)
        y = rng.standard_normal(X.shape[0])
        lam = 3.7
        fit = fit_penalized(X, y, S, NORMAL_IDENTITY, lam)
        oracle = np.linalg.solve(X.T @ X + lam * S, X.T @ y)
        denom = np.linalg.norm(oracle)
        assert np.linalg.norm(fit.beta - oracle) / denom < 1e-10

    def test_scaling_equivariance(self, rng):
        X, S, _ = random_design(rng)
        y = rng.standard_normal(X.shape[0])
        lam = 2.0
        base = fit_penalized(X, y, S, NORMAL_IDENTITY, lam)
        scaled = fit_penalized(X, 5.0 * y, S, NORMAL_IDENTITY, lam)
        assert np.allclose(scaled.beta, 5.0 * base.beta, rtol=1e-10)
        assert scaled.phi == pytest.approx(25.0 * base.phi, rel=1e-10)

    def test_edf_monotone_in_lambda(self, rng):
        X, S, _ = random_design(rng)
        y = rng.standard_normal(X.shape[0])
        edfs = [fit_penalized(X, y, S, NORMAL_IDENTITY, lam).edf
                for lam in np.logspace(-4, 6, 12)]
        assert np.all(np.diff(edfs) <= 1e-9)


class TestGammaIrls:
    def gamma_data(self, rng, n=200, phi=0.05):
        pts = rng.uniform(0, 10, size=(n, 3))
        knots = select_knots(pts, 8)
        basis = build_basis(pts, knots, time_scale=1.0)
        eta = smooth_eta(pts)
        mu = eta**2
        y = rng.gamma(shape=1.0 / phi, scale=mu * phi)
        return basis.design, basis.penalty, y

    def test_matches_direct_minimizer_in_fitted_values(self, rng):
        X, S, y = self.gamma_data(rng)
        lam = 1.0
        fit = fit_penalized(X, y, S, GAMMA_SQRT, lam)

        def objective(beta):
            eta = np.maximum(X @ beta, 1e-6)
            mu = eta**2
            dev = np.sum(GAMMA_SQRT.unit_deviance(y, mu))
            return dev + lam * beta @ S @ beta

        res = minimize(objective, fit.beta + 0.05, method="BFGS",
                       options={"maxiter": 2000, "gtol": 1e-10})
        mu_irls = np.maximum(X @ fit.beta, 1e-6) ** 2
        mu_direct = np.maximum(X @ res.x, 1e-6) ** 2
        assert np.max(np.abs(mu_irls - mu_direct)) < 1e-5

    def test_penalized_objective_nonincreasing_after_first(self, rng):
        X, S, y = self.gamma_data(rng)
        fit = fit_penalized(X, y, S, GAMMA_SQRT, lam=0.5)
        path = np.asarray(fit.objective_path)
        assert path.size >= 2
        assert np.all(np.diff(path) <= 1e-10 * np.abs(path[:-1]) + 1e-12)

    def test_positive_dispersion_and_edf_bounds(self, rng):
        X, S, y = self.gamma_data(rng)
        fit = fit_penalized(X, y, S, GAMMA_SQRT, lam=0.5)
        n = y.size
        assert fit.phi > 0
        assert 0 < fit.edf < n


class TestGcvSelect:
    def test_pure_noise_selects_largest_lambda(self):
        rng = np.random.default_rng(0)
        X, S, _ = random_design(rng)
        y = rng.standard_normal(X.shape[0])
        grid = default_lambda_grid(X, S)
        lam, _ = gcv_select(X, y, S, NORMAL_IDENTITY, grid)
        # direct evaluation: the GCV curve is nonincreasing on this instance
        scores = [gcv_score(fit_penalized(X, y, S, NORMAL_IDENTITY, g), y.size)
                  for g in grid]
        assert np.all(np.diff(scores) <= 1e-9)
        assert lam == pytest.approx(grid.max())

    def test_noiseless_in_span_selects_smallest_lambda(self, rng):
        X, S, _ = random_design(rng)
        beta = rng.standard_normal(X.shape[1])
        y = X @ beta
        grid = np.logspace(-6, 4, 15)
        lam, fit = gcv_select(X, y, S, NORMAL_IDENTITY, grid)
        assert lam == pytest.approx(grid.min())
        assert fit.deviance < 1e-6

    def test_interior_minimum_matches_loocv_within_one_step(self):
        rng = np.random.default_rng(3)
        n = 60
        x = np.linspace(0, 4 * np.pi, n)
        pts = np.column_stack([x, np.zeros(n), np.zeros(n)])
        knots = select_knots(pts, 12)
        basis = build_basis(pts, knots, time_scale=1.0)
        X, S = basis.design, basis.penalty
        y = np.sin(x) + 0.4 * rng.standard_normal(n)
        grid = np.logspace(-4, 4, 20)

        lam_gcv, _ = gcv_select(X, y, S, NORMAL_IDENTITY, grid)

        def loocv(lam):
            total = 0.0
            for i in range(n):
                keep = np.arange(n) != i
                fit = fit_penalized(X[keep], y[keep], S, NORMAL_IDENTITY, lam)
                total += (y[i] - X[i] @ fit.beta) ** 2
            return total

        scores = np.array([loocv(g) for g in grid])
        i_loocv = int(np.argmin(scores))
        i_gcv = int(np.argmin(np.abs(grid - lam_gcv)))
        assert abs(i_gcv - i_loocv) <= 1
        assert 0 < i_gcv < len(grid) - 1  # genuinely interior

    def test_all_failures_raise(self, rng):
        X, S, _ = random_design(rng)
        y = rng.standard_normal(X.shape[0])
        with pytest.raises(NumericalError):
            gcv_select(X, y, S, NORMAL_IDENTITY, np.array([-1.0]))


def fitted_window(rng, family=NORMAL_IDENTITY, lam=1.0, n=80, j=8):
    pts = rng.uniform(0, 10, size=(n, 3))
    knots = select_knots(pts, j)
    basis = build_basis(pts, knots, time_scale=1.0)
    X, S = basis.design, basis.penalty
    if family is GAMMA_SQRT:
        eta = smooth_eta(pts)
        y = rng.gamma(shape=20.0, scale=eta**2 / 20.0)
    else:
        y = rng.standard_normal(n) + 2.0
    fit = fit_penalized(X, y, S, family, lam)
    return make_window_fit(basis, family, X, S, fit), pts


class TestPosteriorDraws:
    def test_moments_match_posterior(self, rng):
        wfit, _ = fitted_window(rng)
        m = 100_000
        draws = posterior_draws(wfit, m, seed=11)
        L = wfit.chol_precision
        cov = np.linalg.inv(L @ L.T) * wfit.phi_hat
        se = np.sqrt(np.diag(cov) / m)
        assert np.all(np.abs(draws.mean(axis=0) - wfit.beta_hat) < 4 * se)

        sample_cov = np.cov(draws.T)
        var_entries = (np.outer(np.diag(cov), np.diag(cov)) + cov**2) / m
        mc_err = np.sqrt(var_entries.sum())
        assert np.linalg.norm(sample_cov - cov) < 5 * mc_err

    def test_seed_determinism(self, rng):
        wfit, _ = fitted_window(rng)
        a = posterior_draws(wfit, 50, seed=123)
        b = posterior_draws(wfit, 50, seed=123)
        assert np.array_equal(a, b)
        c = posterior_draws(wfit, 50, seed=124)
        assert not np.array_equal(a, c)


class TestPredictiveDraws:
    def test_zero_dispersion_degenerates_to_mean(self, rng):
        wfit, pts = fitted_window(rng)
        wfit.phi_hat = 0.0
        point = pts.mean(axis=0)
        draws = predictive_draws(wfit, point, 500, seed=5).values
        expected = wfit.design_row(point) @ wfit.beta_hat
        assert np.allclose(draws, expected, atol=1e-12)

    def test_gamma_support_positive(self, rng):
        wfit, pts = fitted_window(rng, family=GAMMA_SQRT, lam=0.5)
        draws = predictive_draws(wfit, pts[3], 2000, seed=9).values
        assert np.all(draws > 0)

    def test_mean_matches_quadrature_oracle(self, rng):
        wfit, pts = fitted_window(rng, family=GAMMA_SQRT, lam=0.5)
        point = pts.mean(axis=0)
        m = 100_000
        draws = predictive_draws(wfit, point, m, seed=77).values

        row = wfit.design_row(point)
        a = row @ wfit.beta_hat
        L = wfit.chol_precision
        s = np.sqrt(row @ np.linalg.inv(L @ L.T) @ row * wfit.phi_hat)

        # E[max(eta, eps)^2] over eta ~ N(a, s^2): the Gamma response mean
        # equals mu = eta^2, so quadrature over the 1-D projection suffices
        def integrand(eta):
            return max(eta, 1e-6) ** 2 * norm.pdf(eta, loc=a, scale=s)

        expected, _ = quad(integrand, a - 10 * s, a + 10 * s)
        mc_se = draws.std(ddof=1) / np.sqrt(m)
        assert abs(draws.mean() - expected) < 4 * mc_se

    def test_determinism(self, rng):
        wfit, pts = fitted_window(rng, family=GAMMA_SQRT, lam=0.5)
        a = predictive_draws(wfit, pts[0], 100, seed=3).values
        b = predictive_draws(wfit, pts[0], 100, seed=3).values
        assert np.array_equal(a, b)
