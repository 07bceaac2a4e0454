"""Gaussian copula with separable variable x time x space correlation.

Data are mapped to Normal scores through the per-cell marginal ensembles;
the correlation of the score vector is Sigma_p (kron) Sigma_t (kron)
Sigma_n, with Matern-5/2 factors in time and space and a free correlation
matrix across variables.  The 2 + P(P-1)/2 parameters (5 for P=3) are
estimated by maximum likelihood with a quasi-Newton minimizer over the
unconstrained vector (log v_space, log v_time, Cholesky angles of
Sigma_p).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cholesky
from scipy.optimize import minimize
from scipy.spatial.distance import cdist, pdist
from scipy.special import ndtri

from .errors import DataError, NumericalError
from .grid import Coordinates, SpaceTimeCube
from .kron import kron_solve_lower
from .windows import MarginalEnsemble, cdf_field

MATERN_NU = 2.5  # fixed smoothness; closed-form correlation
SQRT5 = np.sqrt(5.0)


def matern52(d, rho: float):
    """Matern correlation with smoothness 5/2.

    (1 + sqrt(5) d/rho + 5 d^2 / (3 rho^2)) * exp(-sqrt(5) d/rho),
    elementwise over d >= 0; equals 1 at d = 0 and decays to 0.
    """
    if rho <= 0:
        raise NumericalError(f"Matern range must be positive, got {rho}")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise NumericalError("distances must be nonnegative")
    s = SQRT5 * d / rho
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


# ---------------------------------------------------------------------------
# correlation-matrix parameterization via hyperspherical Cholesky angles
# ---------------------------------------------------------------------------

def n_angles(p: int) -> int:
    return p * (p - 1) // 2


def angles_to_cholesky(angles: np.ndarray, p: int) -> np.ndarray:
    """Lower-triangular factor with unit-norm rows from P(P-1)/2 angles.

    L L' is a valid correlation matrix for any real angles; it is strictly
    PD whenever every sin(angle) is nonzero.
    """
    angles = np.asarray(angles, dtype=float)
    if angles.size != n_angles(p):
        raise NumericalError(f"need {n_angles(p)} angles for P={p}")
    L = np.zeros((p, p))
    L[0, 0] = 1.0
    idx = 0
    for i in range(1, p):
        run = 1.0
        for j in range(i):
            L[i, j] = run * np.cos(angles[idx])
            run *= np.sin(angles[idx])
            idx += 1
        L[i, i] = run
    return L


def cholesky_to_angles(L: np.ndarray) -> np.ndarray:
    """Invert :func:`angles_to_cholesky` (angles in (0, pi))."""
    L = np.asarray(L, dtype=float)
    p = L.shape[0]
    angles = np.zeros(n_angles(p))
    idx = 0
    for i in range(1, p):
        run = 1.0
        for j in range(i):
            ratio = np.clip(L[i, j] / run if run > 1e-14 else 0.0, -1.0, 1.0)
            theta = np.arccos(ratio)
            angles[idx] = theta
            run *= np.sin(theta)
            idx += 1
    return angles


def correlation_from_angles(angles: np.ndarray, p: int) -> np.ndarray:
    L = angles_to_cholesky(angles, p)
    corr = L @ L.T
    np.fill_diagonal(corr, 1.0)
    return corr


def spatial_correlation(coords: Coordinates, v_space: float) -> np.ndarray:
    return matern52(cdist(coords.locations, coords.locations), v_space)


def temporal_correlation(coords: Coordinates, v_time: float) -> np.ndarray:
    lags = np.abs(coords.times[:, None] - coords.times[None, :])
    return matern52(lags, v_time)


# ---------------------------------------------------------------------------
# Normal scores
# ---------------------------------------------------------------------------

def normal_scores(cube: SpaceTimeCube,
                  ensemble: MarginalEnsemble) -> tuple[np.ndarray, int]:
    """Map observations to Normal scores z = Phi^-1(F_hat(y)).

    Returns the flat score vector in p*T*N + t*N + n order and the number
    of masked cells imputed with z = 0.  The plotting-position clamp in
    the empirical CDF keeps every score finite.
    """
    u = cdf_field(ensemble, cube.values)
    z = np.where(ensemble.mask, 0.0, ndtri(np.where(ensemble.mask, 0.5, u)))
    return z.ravel(), int(np.count_nonzero(ensemble.mask))


# ---------------------------------------------------------------------------
# separable correlation object and likelihood
# ---------------------------------------------------------------------------

@dataclass
class SeparableCorrelation:
    """Fitted copula correlation: two Matern ranges + cross-variable block.

    Cholesky factors of the three Kronecker factors are cached for
    simulation and likelihood work.
    """

    v_space: float
    v_time: float
    sigma_p: np.ndarray
    chol_p: np.ndarray
    chol_t: np.ndarray
    chol_n: np.ndarray
    nu: float = MATERN_NU
    params: np.ndarray | None = None  # raw optimizer vector
    neg2_loglik: float = np.nan
    converged: bool = True
    n_iter: int = 0
    trace: list = field(default_factory=list)  # (iteration, objective)

    @property
    def n_variables(self) -> int:
        return self.sigma_p.shape[0]

    @property
    def pairwise_correlations(self) -> np.ndarray:
        """Upper-triangle entries of sigma_p, row-major order."""
        p = self.n_variables
        return np.array([self.sigma_p[i, j]
                         for i in range(p) for j in range(i + 1, p)])

    @classmethod
    def from_parameters(cls, v_space: float, v_time: float,
                        sigma_p: np.ndarray, coords: Coordinates,
                        **meta) -> "SeparableCorrelation":
        sigma_p = np.asarray(sigma_p, dtype=float)
        if not np.allclose(np.diag(sigma_p), 1.0):
            raise NumericalError("sigma_p must have a unit diagonal")
        try:
            chol_p = cholesky(sigma_p, lower=True)
            chol_t = cholesky(temporal_correlation(coords, v_time), lower=True)
            chol_n = cholesky(spatial_correlation(coords, v_space), lower=True)
        except LinAlgError as exc:
            raise NumericalError(f"correlation factor not PD: {exc}") from None
        return cls(v_space=float(v_space), v_time=float(v_time),
                   sigma_p=sigma_p, chol_p=chol_p, chol_t=chol_t,
                   chol_n=chol_n, **meta)


def _unpack(params: np.ndarray, p: int) -> tuple[float, float, np.ndarray]:
    params = np.asarray(params, dtype=float)
    if params.size != 2 + n_angles(p):
        raise NumericalError(
            f"expected {2 + n_angles(p)} parameters for P={p}, got {params.size}"
        )
    return float(np.exp(params[0])), float(np.exp(params[1])), params[2:]


def neg_loglik(params: np.ndarray, z: np.ndarray, coords: Coordinates,
               n_variables: int) -> float:
    """-2 log likelihood of the score vector under the separable model.

    log det and the quadratic form both use the Kronecker factorization:
    the full PTN x PTN matrix is never formed.
    """
    v_space, v_time, angles = _unpack(params, n_variables)
    P, T, N = n_variables, coords.n_times, coords.n_locations
    z = np.asarray(z, dtype=float)
    if z.size != P * T * N:
        raise NumericalError(f"score vector length {z.size} != P*T*N = {P*T*N}")

    chol_p = angles_to_cholesky(angles, P)
    if np.any(np.abs(np.diag(chol_p)) < 1e-12):
        raise NumericalError("angle parameterization hit a singular sigma_p")
    try:
        chol_t = cholesky(temporal_correlation(coords, v_time), lower=True)
        chol_n = cholesky(spatial_correlation(coords, v_space), lower=True)
    except LinAlgError:
        raise NumericalError(
            f"Matern factor Cholesky failed (v_space={v_space:g}, "
            f"v_time={v_time:g})"
        ) from None

    logdet = (T * N * 2.0 * np.sum(np.log(np.abs(np.diag(chol_p))))
              + P * N * 2.0 * np.sum(np.log(np.diag(chol_t)))
              + P * T * 2.0 * np.sum(np.log(np.diag(chol_n))))
    white = kron_solve_lower([chol_p, chol_t, chol_n], z)
    return float(logdet + white @ white)


@dataclass
class OptimizerSettings:
    max_iter: int = 500
    grad_tol: float = 1e-5     # infinity norm of the gradient
    fd_rel_step: float = 1e-6  # central-difference relative step


def _fd_gradient(fun, x: np.ndarray, rel_step: float) -> np.ndarray:
    """Central finite differences with per-coordinate relative steps."""
    grad = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        up = x.copy()
        dn = x.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (fun(up) - fun(dn)) / (2.0 * h)
    return grad


def default_init(z: np.ndarray, coords: Coordinates,
                 n_variables: int) -> np.ndarray:
    """Cheap starting point: median spatial distance, 2 time steps, and the
    empirical cross-variable correlation of the scores."""
    locs = coords.locations
    if locs.shape[0] > 1500:  # pdist memory guard for very large grids
        rng = np.random.default_rng(0)
        locs = locs[rng.choice(locs.shape[0], 1500, replace=False)]
    v_space = float(np.median(pdist(locs)))
    v_time = 2.0 * coords.time_step
    scores = np.asarray(z, dtype=float).reshape(n_variables, -1)
    corr = np.corrcoef(scores)
    corr = np.atleast_2d(corr)
    # shrink just enough to guarantee a usable Cholesky start
    for shrink in (0.0, 0.05, 0.5):
        trial = (1.0 - shrink) * corr + shrink * np.eye(n_variables)
        try:
            L = cholesky(trial, lower=True)
            break
        except LinAlgError:
            continue
    else:
        L = np.eye(n_variables)
    angles = cholesky_to_angles(L)
    return np.concatenate([[np.log(v_space), np.log(v_time)], angles])


def fit_mle(z: np.ndarray, coords: Coordinates, n_variables: int,
            init: np.ndarray | None = None,
            settings: OptimizerSettings | None = None) -> SeparableCorrelation:
    """Maximum-likelihood fit of the separable correlation.

    Runs L-BFGS-B (unbounded) on :func:`neg_loglik` over the unconstrained
    parameter vector, with central finite-difference gradients.  Returns
    the fitted correlation with the iteration trace attached; if the
    gradient tolerance is not met within the iteration budget the best
    iterate is returned with ``converged=False``.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NumericalError("score vector must be finite")
    settings = settings or OptimizerSettings()
    x0 = np.asarray(init, dtype=float) if init is not None \
        else default_init(z, coords, n_variables)

    def objective(x: np.ndarray) -> float:
        try:
            value = neg_loglik(x, z, coords, n_variables)
        except NumericalError:
            return 1e12
        return value if np.isfinite(value) else 1e12

    if objective(x0) >= 1e12:
        raise NumericalError("objective is not finite at the initial point")

    def gradient(x: np.ndarray) -> np.ndarray:
        return _fd_gradient(objective, x, settings.fd_rel_step)

    trace: list[tuple[int, float]] = [(0, objective(x0))]

    def record(xk: np.ndarray) -> None:
        trace.append((len(trace), objective(xk)))

    result = minimize(objective, x0, jac=gradient, method="L-BFGS-B",
                      callback=record,
                      options={"maxiter": settings.max_iter,
                               "pgtol": settings.grad_tol,
                               "ftol": 1e-14, "maxls": 50})
    params = result.x
    grad_norm = float(np.max(np.abs(gradient(params))))
    converged = bool(result.success) or grad_norm < settings.grad_tol

    v_space, v_time, angles = _unpack(params, n_variables)
    sigma_p = correlation_from_angles(angles, n_variables)
    return SeparableCorrelation.from_parameters(
        v_space, v_time, sigma_p, coords,
        params=params, neg2_loglik=float(result.fun),
        converged=converged, n_iter=int(result.nit), trace=trace)


# ---------------------------------------------------------------------------
# persistence: small text artifact
# ---------------------------------------------------------------------------

def save_correlation(corr: SeparableCorrelation, path: str | Path,
                     extra_meta: dict | None = None) -> Path:
    path = Path(path)
    payload = {
        "v_space_km": corr.v_space,
        "v_time_hours": corr.v_time,
        "nu": corr.nu,
        "sigma_p": corr.sigma_p.tolist(),
        "pairwise_correlations": corr.pairwise_correlations.tolist(),
        "raw_params": None if corr.params is None else corr.params.tolist(),
        "neg2_loglik": corr.neg2_loglik,
        "converged": corr.converged,
        "n_iter": corr.n_iter,
        "trace": [[int(i), float(v)] for i, v in corr.trace],
    }
    if extra_meta:
        payload["meta"] = extra_meta
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_correlation(path: str | Path,
                     coords: Coordinates) -> SeparableCorrelation:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such copula artifact: {path}")
    payload = json.loads(path.read_text())
    corr = SeparableCorrelation.from_parameters(
        payload["v_space_km"], payload["v_time_hours"],
        np.asarray(payload["sigma_p"], dtype=float), coords)
    corr.params = (None if payload.get("raw_params") is None
                   else np.asarray(payload["raw_params"], dtype=float))
    corr.neg2_loglik = payload.get("neg2_loglik", np.nan)
    corr.converged = payload.get("converged", True)
    corr.n_iter = payload.get("n_iter", 0)
    corr.trace = [tuple(item) for item in payload.get("trace", [])]
    return corr
