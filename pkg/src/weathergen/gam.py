"""Penalized GAM fitting for one window: IRLS, GCV, coefficient posterior.

The penalized objective is deviance(beta) + lambda * beta' S beta.  For the
Normal/identity family that is ordinary ridge-type least squares with the
closed form (X'X + lambda S)^-1 X'y; for Gamma/sqrt it is solved by
penalized IRLS.  The Gaussian coefficient posterior has mean beta_hat and
covariance (X'WX + lambda S)^-1 * phi_hat.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, solve_triangular

from .errors import NumericalError
from .splines import SplineBasis

ETA_FLOOR = 1e-6
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 50


@dataclass(frozen=True)
class Family:
    """Response family with link, variance, and unit deviance."""

    tag: str
    link: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    mu_eta: Callable[[np.ndarray], np.ndarray]  # d mu / d eta
    variance: Callable[[np.ndarray], np.ndarray]
    unit_deviance: Callable[[np.ndarray, np.ndarray], np.ndarray]
    needs_irls: bool
    positive_only: bool


NORMAL_IDENTITY = Family(
    tag="normal-identity",
    link=lambda mu: mu,
    inverse=lambda eta: eta,
    mu_eta=lambda eta: np.ones_like(eta),
    variance=lambda mu: np.ones_like(mu),
    unit_deviance=lambda y, mu: (y - mu) ** 2,
    needs_irls=False,
    positive_only=False,
)

GAMMA_SQRT = Family(
    tag="gamma-sqrt",
    link=lambda mu: np.sqrt(mu),
    inverse=lambda eta: eta**2,
    mu_eta=lambda eta: 2.0 * eta,
    variance=lambda mu: mu**2,
    unit_deviance=lambda y, mu: 2.0 * ((y - mu) / mu - np.log(y / mu)),
    needs_irls=True,
    positive_only=True,
)

FAMILIES = {"normal": NORMAL_IDENTITY, "gamma": GAMMA_SQRT}


def family_by_tag(tag: str) -> Family:
    try:
        return FAMILIES[tag]
    except KeyError:
        raise NumericalError(f"unknown family tag {tag!r}") from None


@dataclass
class PenalizedFit:
    """Converged penalized fit at one smoothing value."""

    beta: np.ndarray
    edf: float
    phi: float
    deviance: float
    lam: float
    weights: np.ndarray | None  # final IRLS working weights; None => identity
    n_iter: int = 0
    n_eta_clipped: int = 0
    deviance_path: list[float] | None = None   # raw deviance per iteration
    objective_path: list[float] | None = None  # deviance + lam*b'Sb per iteration


def _chol_system(X: np.ndarray, S: np.ndarray, lam: float,
                 w: np.ndarray | None):
    """Cholesky of X'WX + lam*S, plus X'WX itself."""
    Xw = X if w is None else X * w[:, None]
    xtwx = X.T @ Xw
    system = xtwx + lam * S
    try:
        factor = cho_factor(system, lower=True)
    except LinAlgError:
        raise NumericalError("non-PD system matrix X'WX + lambda*S") from None
    return factor, xtwx


def _edf(factor, xtwx: np.ndarray) -> float:
    """tr[(X'WX + lam S)^-1 X'WX]."""
    return float(np.trace(cho_solve(factor, xtwx)))


def fit_penalized(X: np.ndarray, y: np.ndarray, S: np.ndarray,
                  family: Family, lam: float) -> PenalizedFit:
    """Fit one penalized GAM at a fixed smoothing parameter.

    Normal/identity solves (X'X + lam S) beta = X'y directly.  Gamma/sqrt
    runs penalized IRLS with working weights 4/eta^2 and working response
    eta + (y - mu)/(2 eta), to relative deviance change < 1e-8 or 50
    iterations.  phi is the Pearson estimate chi^2 / (n - edf).

    Raises
    ------
    NumericalError
        Non-PD system, IRLS divergence (deviance rises 3 iterations in a
        row), or nonpositive residual degrees of freedom.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    if lam <= 0:
        raise NumericalError(f"lambda must be positive, got {lam}")

    if not family.needs_irls:
        factor, xtx = _chol_system(X, S, lam, None)
        beta = cho_solve(factor, X.T @ y)
        mu = X @ beta
        deviance = float(np.sum(family.unit_deviance(y, mu)))
        edf = _edf(factor, xtx)
        if n - edf <= 0:
            raise NumericalError("nonpositive residual degrees of freedom")
        pearson = float(np.sum((y - mu) ** 2 / family.variance(mu)))
        objective = deviance + lam * float(beta @ S @ beta)
        return PenalizedFit(beta=beta, edf=edf, phi=pearson / (n - edf),
                            deviance=deviance, lam=lam, weights=None, n_iter=1,
                            deviance_path=[deviance],
                            objective_path=[objective])

    # penalized IRLS for the sqrt-link Gamma family
    n_clipped = 0
    mu = np.maximum(y, ETA_FLOOR**2)
    eta = family.link(mu)
    deviance = float(np.sum(family.unit_deviance(y, mu)))
    objective = np.inf  # raw deviance can creep up; the penalized one cannot
    beta = None
    rising = 0
    n_iter = 0
    dev_path: list[float] = []
    obj_path: list[float] = []
    for n_iter in range(1, IRLS_MAX_ITER + 1):
        low = eta < ETA_FLOOR
        n_clipped += int(np.count_nonzero(low))
        eta = np.where(low, ETA_FLOOR, eta)
        mu = family.inverse(eta)
        w = 4.0 / eta**2
        z = eta + (y - mu) / (2.0 * eta)
        factor, _ = _chol_system(X, S, lam, w)
        beta = cho_solve(factor, X.T @ (w * z))
        eta = X @ beta
        low = eta < ETA_FLOOR
        n_clipped += int(np.count_nonzero(low))
        eta = np.where(low, ETA_FLOOR, eta)
        mu = family.inverse(eta)
        new_deviance = float(np.sum(family.unit_deviance(y, mu)))
        new_objective = new_deviance + lam * float(beta @ S @ beta)
        dev_path.append(new_deviance)
        obj_path.append(new_objective)
        if new_objective > objective + 1e-12 * (1.0 + abs(objective)):
            rising += 1
            if rising >= 3:
                raise NumericalError(
                    f"IRLS diverging: penalized deviance rose {rising} "
                    f"consecutive iterations (lambda={lam:g})"
                )
        else:
            rising = 0
        done = abs(new_deviance - deviance) <= IRLS_TOL * (abs(deviance) + 1e-12)
        deviance = new_deviance
        objective = new_objective
        if done:
            break

    w = 4.0 / np.maximum(eta, ETA_FLOOR) ** 2
    factor, xtwx = _chol_system(X, S, lam, w)
    edf = _edf(factor, xtwx)
    if n - edf <= 0:
        raise NumericalError("nonpositive residual degrees of freedom")
    pearson = float(np.sum((y - mu) ** 2 / family.variance(mu)))
    return PenalizedFit(beta=beta, edf=edf, phi=pearson / (n - edf),
                        deviance=deviance, lam=lam, weights=w,
                        n_iter=n_iter, n_eta_clipped=n_clipped,
                        deviance_path=dev_path, objective_path=obj_path)


def gcv_score(fit: PenalizedFit, n: int) -> float:
    """V(lambda) = n * D / (n - tr A)^2 at the converged fit."""
    return n * fit.deviance / (n - fit.edf) ** 2


def default_lambda_grid(X: np.ndarray, S: np.ndarray,
                        size: int = 20) -> np.ndarray:
    """Log-spaced smoothing grid over 1e-4*n .. 1e4*n, rescaled by
    tr(X'X)/tr(S) so the penalty and data terms are commensurate."""
    n = X.shape[0]
    tr_s = float(np.trace(S))
    ratio = float(np.trace(X.T @ X)) / tr_s if tr_s > 0 else 1.0
    return np.logspace(np.log10(1e-4 * n * ratio), np.log10(1e4 * n * ratio),
                       size)


def gcv_select(X: np.ndarray, y: np.ndarray, S: np.ndarray, family: Family,
               lambda_grid: np.ndarray) -> tuple[float, PenalizedFit]:
    """Pick the grid lambda minimizing GCV; ties go to the smoother fit.

    Raises
    ------
    NumericalError
        If every grid value fails to fit.
    """
    lambda_grid = np.sort(np.asarray(lambda_grid, dtype=float))
    if lambda_grid.size == 0 or lambda_grid[0] <= 0:
        raise NumericalError("lambda grid must be nonempty and positive")
    n = np.asarray(y).size
    best: tuple[float, PenalizedFit] | None = None
    best_score = np.inf
    errors = []
    for lam in lambda_grid:
        try:
            fit = fit_penalized(X, y, S, family, float(lam))
        except NumericalError as exc:
            errors.append(str(exc))
            continue
        score = gcv_score(fit, n)
        if score <= best_score:  # <= : equal scores prefer larger lambda
            best_score = score
            best = (float(lam), fit)
    if best is None:
        raise NumericalError(
            f"all {lambda_grid.size} lambda fits failed; last error: "
            f"{errors[-1] if errors else 'none'}"
        )
    return best


@dataclass
class WindowFit:
    """One fitted window: coefficient posterior plus everything needed to
    draw from the posterior predictive at new points."""

    basis: SplineBasis
    family: Family
    beta_hat: np.ndarray
    chol_precision: np.ndarray  # lower Cholesky of X'WX + lam*S
    lam: float
    phi_hat: float
    edf: float
    center: tuple[int, int, int] = (0, 0, 0)  # (variable, time, location)
    active_cols: np.ndarray | None = None
    n_eta_clipped: int = 0

    def design_row(self, point: np.ndarray) -> np.ndarray:
        """Basis row at a point in the basis's scaled coordinate frame."""
        row = self.basis.evaluate(point)[0]
        if self.active_cols is not None:
            row = row[self.active_cols]
        return row


def make_window_fit(basis: SplineBasis, family: Family, X: np.ndarray,
                    S: np.ndarray, fit: PenalizedFit,
                    center: tuple[int, int, int] = (0, 0, 0),
                    active_cols: np.ndarray | None = None) -> WindowFit:
    """Assemble a WindowFit, factoring the posterior precision."""
    Xw = X if fit.weights is None else X * fit.weights[:, None]
    system = X.T @ Xw + fit.lam * S
    try:
        chol = cholesky(system, lower=True)
    except LinAlgError:
        raise NumericalError("posterior precision is not positive definite") from None
    return WindowFit(basis=basis, family=family, beta_hat=fit.beta,
                     chol_precision=chol, lam=fit.lam, phi_hat=fit.phi,
                     edf=fit.edf, center=center, active_cols=active_cols,
                     n_eta_clipped=fit.n_eta_clipped)


def _draw_coefficients(fit: WindowFit, m: int,
                       rng: np.random.Generator) -> np.ndarray:
    """m draws from N(beta_hat, (X'WX + lam S)^-1 phi_hat)."""
    dim = fit.beta_hat.size
    noise = rng.standard_normal((dim, m))
    # cov(L^-T u) = (L L')^-1, then scale by phi
    shifted = solve_triangular(fit.chol_precision.T, noise, lower=False)
    return fit.beta_hat[None, :] + np.sqrt(fit.phi_hat) * shifted.T


def posterior_draws(fit: WindowFit, m: int, seed) -> np.ndarray:
    """Sample coefficient vectors from the Gaussian posterior.

    Deterministic given the seed (int or SeedSequence).
    """
    if m < 1:
        raise NumericalError("need at least one draw")
    return _draw_coefficients(fit, m, np.random.default_rng(seed))


class PredictiveDraws(NamedTuple):
    values: np.ndarray
    n_eta_clipped: int


def predictive_draws(fit: WindowFit, point: np.ndarray, m: int,
                     seed) -> PredictiveDraws:
    """Posterior-predictive response draws at one point.

    For each coefficient draw, mu = g^-1(x'beta) and the response is drawn
    from the family at (mu, phi_hat); Gamma uses shape 1/phi_hat and scale
    mu*phi_hat.  Nonpositive Gamma linear predictors are clipped to 1e-6
    before squaring and counted.
    """
    rng = np.random.default_rng(seed)
    betas = _draw_coefficients(fit, m, rng)
    eta = betas @ fit.design_row(np.asarray(point, dtype=float))
    n_clipped = 0
    if fit.family.positive_only:
        low = eta < ETA_FLOOR
        n_clipped = int(np.count_nonzero(low))
        eta = np.where(low, ETA_FLOOR, eta)
        mu = fit.family.inverse(eta)
        values = rng.gamma(shape=1.0 / fit.phi_hat, scale=mu * fit.phi_hat)
    else:
        mu = fit.family.inverse(eta)
        values = mu + np.sqrt(fit.phi_hat) * rng.standard_normal(m)
    return PredictiveDraws(values=values, n_eta_clipped=n_clipped)
