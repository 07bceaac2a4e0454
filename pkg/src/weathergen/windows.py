"""Moving-window marginal fitting across all (variable, time, location) cells.

Each unmasked cell gets its own penalized GAM fitted on the k_space nearest
locations x w_time nearest times, GCV-selected smoothing, and m posterior-
predictive draws at the cell itself.  Cells are independent, so the loop is
embarrassingly parallel; per-cell RNG substreams make the result identical
for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import qr
from scipy.spatial.distance import pdist, squareform

from . import gam, splines
from .errors import DataError, NumericalError
from .grid import SpaceTimeCube, VariableDef, spatial_neighbors, temporal_window


@dataclass(frozen=True)
class WindowConfig:
    """Hyperparameters of the moving-window stage (defaults per pipeline)."""

    k_space: int = 30
    w_time: int = 9
    knots: int = 50
    draws: int = 1000
    lambda_grid_size: int = 20
    seed: int = 0
    max_failure_fraction: float = 0.01

    def provenance(self) -> dict:
        return {"k_space": self.k_space, "w_time": self.w_time,
                "knots": self.knots, "draws": self.draws,
                "lambda_grid_size": self.lambda_grid_size, "seed": self.seed}


@dataclass
class MarginalEnsemble:
    """Per-cell posterior-predictive draws defining the marginal transforms.

    ``draws[p, t, n, :]`` holds m simulations for cell (p, t, n); masked
    cells (inherited from the cube, plus any failed windows) hold NaN and
    are flagged in ``mask``.
    """

    draws: np.ndarray  # (P, T, N, m)
    mask: np.ndarray   # (P, T, N) True = no draws
    variables: list[VariableDef]
    provenance: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)  # (p, t, n, message)

    def __post_init__(self):
        self._sorted: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.draws.shape[-1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.draws.shape[:3]

    def sorted_draws(self) -> np.ndarray:
        """Draws sorted along the last axis (cached; NaN cells stay NaN)."""
        if self._sorted is None:
            self._sorted = np.sort(self.draws, axis=-1)
        return self._sorted


def empirical_cdf(ensemble: MarginalEnsemble, cell: tuple[int, int, int],
                  value: float) -> float:
    """Plotting-position empirical CDF of one cell's draws.

    F_hat(value) = (r - 0.5)/m with r = #draws <= value, clamped to
    [0.5/m, 1 - 0.5/m] so downstream Normal scores stay finite.
    """
    p, t, n = cell
    if ensemble.mask[p, t, n]:
        raise DataError(f"cell {cell} is masked; no draws")
    m = ensemble.m
    r = int(np.count_nonzero(ensemble.draws[p, t, n] <= value))
    return float(np.clip((r - 0.5) / m, 0.5 / m, 1.0 - 0.5 / m))


def _interp_quantile(sorted_draws: np.ndarray, u) -> np.ndarray:
    """Linear interpolation of order statistics at positions (i-0.5)/m.

    Constant extrapolation outside the extreme draws.  ``sorted_draws`` has
    the draw axis last; ``u`` broadcasts against its leading axes.
    """
    m = sorted_draws.shape[-1]
    # real-valued rank: u = (i - 0.5)/m  =>  i = u*m + 0.5 (1-based)
    pos = np.asarray(u, dtype=float) * m - 0.5  # 0-based fractional index
    lo = np.clip(np.floor(pos).astype(int), 0, m - 1)
    hi = np.clip(lo + 1, 0, m - 1)
    frac = np.clip(pos - lo, 0.0, 1.0)
    left = np.take_along_axis(sorted_draws, lo[..., None], axis=-1)[..., 0]
    right = np.take_along_axis(sorted_draws, hi[..., None], axis=-1)[..., 0]
    return left * (1.0 - frac) + right * frac


def empirical_quantile(ensemble: MarginalEnsemble, cell: tuple[int, int, int],
                       u: float) -> float:
    """Inverse of :func:`empirical_cdf` by order-statistic interpolation."""
    p, t, n = cell
    if ensemble.mask[p, t, n]:
        raise DataError(f"cell {cell} is masked; no draws")
    if not 0.0 < u < 1.0:
        raise DataError(f"u must lie in (0, 1), got {u}")
    return float(_interp_quantile(ensemble.sorted_draws()[p, t, n], u))


def cdf_field(ensemble: MarginalEnsemble, values: np.ndarray) -> np.ndarray:
    """Vectorized empirical CDF over the whole cube; NaN at masked cells."""
    sorted_draws = ensemble.sorted_draws()
    m = ensemble.m
    filled = np.where(np.isfinite(values), values, 0.0)
    ranks = np.sum(sorted_draws <= filled[..., None], axis=-1)
    u = np.clip((ranks - 0.5) / m, 0.5 / m, 1.0 - 0.5 / m)
    return np.where(ensemble.mask, np.nan, u)


def quantile_field(ensemble: MarginalEnsemble, u: np.ndarray) -> np.ndarray:
    """Vectorized per-cell quantiles; NaN at masked cells."""
    out = _interp_quantile(ensemble.sorted_draws(), u)
    return np.where(ensemble.mask, np.nan, out)


# ---------------------------------------------------------------------------
# per-cell window fitting
# ---------------------------------------------------------------------------

def _window_time_scale(locations: np.ndarray, time_step: float) -> float:
    """km-per-hour factor making one time step one median NN spacing."""
    unique = np.unique(locations, axis=0)
    if unique.shape[0] < 2:
        spacing = 1.0
    else:
        dist = squareform(pdist(unique))
        np.fill_diagonal(dist, np.inf)
        spacing = float(np.median(dist.min(axis=1)))
        if not np.isfinite(spacing) or spacing <= 0:
            spacing = 1.0
    return spacing / time_step


def _independent_columns(block: np.ndarray) -> np.ndarray:
    """Indices of an affinely independent subset of columns (pivoted QR)."""
    if block.shape[1] == 0:
        return np.array([], dtype=int)
    _, r, piv = qr(block, mode="economic", pivoting=True)
    diag = np.abs(np.diag(np.atleast_2d(r)))
    tol = max(block.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    keep = piv[: int(np.count_nonzero(diag > tol))]
    return np.sort(keep)


def fit_window_cell(cube: SpaceTimeCube, config: WindowConfig,
                    p: int, t: int, n: int) -> gam.PredictiveDraws:
    """Fit the window centered at cell (p, t, n) and draw at its center.

    Raises DataError/NumericalError on unfittable windows; callers decide
    whether that is fatal.
    """
    coords = cube.coords
    var = cube.variables[p]
    family = gam.family_by_tag(var.family)

    neighbors = spatial_neighbors(coords, n, min(config.k_space, coords.n_locations))
    t_window = temporal_window(coords.times, t, min(config.w_time, coords.n_times))

    cell_mask = cube.mask[p][np.ix_(t_window, neighbors)]
    keep_t, keep_n = np.nonzero(~cell_mask)
    if keep_t.size < 5:
        raise DataError(f"window at cell ({p},{t},{n}) has only "
                        f"{keep_t.size} unmasked points")
    times = coords.times[t_window[keep_t]]
    xy = coords.locations[neighbors[keep_n]]
    response = cube.values[p][np.ix_(t_window, neighbors)][keep_t, keep_n]

    time_scale = _window_time_scale(coords.locations[neighbors], coords.time_step)
    points = splines.scale_inputs(xy, times, time_scale)
    offset = points.mean(axis=0)
    points = points - offset

    n_knots = min(config.knots, np.unique(points, axis=0).shape[0])
    knots = splines.select_knots(points, n_knots, seed=config.seed)
    basis = splines.build_basis(points, knots, time_scale)

    # degenerate geometry (e.g. one location) makes polynomial columns
    # collinear; keep an independent subset, radial columns always stay
    poly = basis.design[:, basis.n_radial:]
    keep_poly = _independent_columns(poly) + basis.n_radial
    active = np.concatenate([np.arange(basis.n_radial), keep_poly])
    X = basis.design[:, active]
    S = basis.penalty[np.ix_(active, active)]

    grid = gam.default_lambda_grid(X, S, config.lambda_grid_size)
    _, pfit = gam.gcv_select(X, response, S, family, grid)
    fit = gam.make_window_fit(basis, family, X, S, pfit, center=(p, t, n),
                              active_cols=active)

    center_point = splines.scale_inputs(
        coords.locations[n][None, :], np.array([coords.times[t]]), time_scale
    )[0] - offset
    seed = np.random.SeedSequence(config.seed, spawn_key=(p, t, n))
    return gam.predictive_draws(fit, center_point, config.draws, seed)


def _fit_chunk(args) -> list:
    cube, config, cells = args
    out = []
    for p, t, n in cells:
        try:
            result = fit_window_cell(cube, config, p, t, n)
            out.append((p, t, n, result.values, result.n_eta_clipped, None))
        except (DataError, NumericalError) as exc:
            out.append((p, t, n, None, 0, str(exc)))
    return out


def fit_all_windows(cube: SpaceTimeCube, config: WindowConfig,
                    parallelism: int = 1) -> MarginalEnsemble:
    """Fit every unmasked cell and assemble the marginal ensemble.

    Per-cell failures are recorded, not fatal; the run aborts only when
    more than ``config.max_failure_fraction`` of windows fail.  Output is
    identical for any ``parallelism`` because every cell derives its RNG
    substream from (seed, p, t, n).
    """
    P, T, N = cube.shape
    cells = [(p, t, n) for p in range(P) for t in range(T) for n in range(N)
             if not cube.mask[p, t, n]]
    if not cells:
        raise DataError("cube has no unmasked cells")

    draws = np.full((P, T, N, config.draws), np.nan)
    mask = np.ones((P, T, N), dtype=bool)
    failures: list[tuple[int, int, int, str]] = []
    n_eta_clipped = 0

    if parallelism <= 1:
        chunks = [_fit_chunk((cube, config, cells))]
    else:
        splits = np.array_split(np.arange(len(cells)), parallelism * 4)
        jobs = [(cube, config, [cells[i] for i in idx])
                for idx in splits if idx.size]
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            chunks = list(pool.map(_fit_chunk, jobs))

    for chunk in chunks:
        for p, t, n, values, clipped, error in chunk:
            if error is not None:
                failures.append((p, t, n, error))
                continue
            draws[p, t, n] = values
            mask[p, t, n] = False
            n_eta_clipped += clipped

    failures.sort()
    if len(failures) > config.max_failure_fraction * len(cells):
        sample = "; ".join(msg for *_unused, msg in failures[:3])
        raise NumericalError(
            f"{len(failures)} of {len(cells)} windows failed "
            f"(> {config.max_failure_fraction:.0%}): {sample}"
        )

    provenance = config.provenance()
    provenance["n_cells"] = len(cells)
    provenance["n_failures"] = len(failures)
    provenance["n_eta_clipped"] = n_eta_clipped
    return MarginalEnsemble(draws=draws, mask=mask,
                            variables=list(cube.variables),
                            provenance=provenance, failures=failures)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_ensemble(ensemble: MarginalEnsemble, outdir: str | Path) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    np.save(outdir / "draws.npy", ensemble.draws)
    np.save(outdir / "mask.npy", ensemble.mask)
    meta = {
        "provenance": ensemble.provenance,
        "variables": [{"name": v.name, "family": v.family, "units": v.units}
                      for v in ensemble.variables],
    }
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2,
                                                 sort_keys=True) + "\n")
    lines = ["variable,time,location,message"]
    for p, t, n, msg in ensemble.failures:
        clean = msg.replace('"', "'").replace("\n", " ")
        lines.append(f'{p},{t},{n},"{clean}"')
    (outdir / "failures.csv").write_text("\n".join(lines) + "\n")
    return outdir


def load_ensemble(path: str | Path) -> MarginalEnsemble:
    path = Path(path)
    try:
        draws = np.load(path / "draws.npy")
        mask = np.load(path / "mask.npy")
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"not an ensemble artifact: {path} ({exc})") from None
    variables = [VariableDef(**spec) for spec in meta["variables"]]
    failures = []
    failure_path = path / "failures.csv"
    if failure_path.exists():
        for line in failure_path.read_text().splitlines()[1:]:
            p, t, n, msg = line.split(",", 3)
            failures.append((int(p), int(t), int(n), msg.strip('"')))
    return MarginalEnsemble(draws=draws, mask=mask, variables=variables,
                            provenance=meta.get("provenance", {}),
                            failures=failures)
