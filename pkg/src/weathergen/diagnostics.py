"""Validation statistics for historical versus simulated fields.

Everything is emitted as tidy tables (one row per statistic value) so any
plotting tool can reproduce the usual visual checks: per-location ACF/PACF
maps, empirical variograms at fixed time slices, per-cell posterior
mean/variance maps, and per-probe histogram + envelope panels.  Masked
cells (missing data, excluded zeros) never enter any statistic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from .errors import DataError
from .grid import SpaceTimeCube
from .simulate import ScenarioSet

DEFAULT_MAX_LAG = 16
DEFAULT_N_BINS = 15
SIM_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def _acf_columns(values: np.ndarray, mask: np.ndarray | None,
                 max_lag: int) -> np.ndarray:
    """Column-wise ACF of a (T, C) array with an optional missing mask.

    Biased normalization: lag sums are divided by the full sum of squares,
    which keeps every value in [-1, 1] and the sequence PSD.  Columns with
    zero variance or too little data come back as NaN.
    """
    values = np.asarray(values, dtype=float)
    obs = np.isfinite(values) if mask is None else (~mask) & np.isfinite(values)
    filled = np.where(obs, values, 0.0)
    count = obs.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = filled.sum(axis=0) / count
    centered = np.where(obs, values - mean, 0.0)
    denom = (centered**2).sum(axis=0)
    out = np.full((max_lag, values.shape[1]), np.nan)
    good = (denom > 0) & (count > max_lag)
    for h in range(1, max_lag + 1):
        num = (centered[:-h] * centered[h:] * obs[:-h] * obs[h:]).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[h - 1] = np.where(good, num / denom, np.nan)
    return out


def acf(series: np.ndarray, max_lag: int,
        mask: np.ndarray | None = None) -> np.ndarray:
    """Autocorrelation at lags 1..max_lag of one series.

    rho_hat(h) = sum_t (y_t - ybar)(y_{t+h} - ybar) / sum_t (y_t - ybar)^2.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise DataError("acf expects a 1-D series")
    if series.size <= max_lag:
        raise DataError(f"series length {series.size} <= max_lag {max_lag}")
    col_mask = None if mask is None else np.asarray(mask, bool)[:, None]
    out = _acf_columns(series[:, None], col_mask, max_lag)[:, 0]
    if np.all(np.isnan(out)):
        raise DataError("series is constant (or has too few observed points)")
    return out


def pacf_from_acf(rho: np.ndarray) -> np.ndarray:
    """Partial autocorrelations via the Durbin-Levinson recursion.

    Accepts rho with shape (L,) or (L, C); values clipped into [-1, 1]
    with a warning if numerical error pushes a partial outside.
    """
    rho = np.asarray(rho, dtype=float)
    squeeze = rho.ndim == 1
    if squeeze:
        rho = rho[:, None]
    L, C = rho.shape
    pacf_vals = np.full((L, C), np.nan)
    phi = np.zeros((L + 1, L + 1, C))
    pacf_vals[0] = rho[0]
    phi[1, 1] = rho[0]
    clipped = 0
    for k in range(2, L + 1):
        num = rho[k - 1].copy()
        den = np.ones(C)
        for j in range(1, k):
            num -= phi[k - 1, j] * rho[k - 1 - j]
            den -= phi[k - 1, j] * rho[j - 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            val = np.where(np.abs(den) > 1e-12, num / den, np.nan)
        out_of_range = np.abs(val) > 1.0
        clipped += int(np.count_nonzero(out_of_range & np.isfinite(val)))
        val = np.clip(val, -1.0, 1.0)
        phi[k, k] = val
        for j in range(1, k):
            phi[k, j] = phi[k - 1, j] - val * phi[k - 1, k - j]
        pacf_vals[k - 1] = val
    if clipped:
        warnings.warn(f"pacf clipped {clipped} value(s) into [-1, 1]",
                      RuntimeWarning, stacklevel=2)
    return pacf_vals[:, 0] if squeeze else pacf_vals


def pacf(series: np.ndarray, max_lag: int,
         mask: np.ndarray | None = None) -> np.ndarray:
    """Partial autocorrelation at lags 1..max_lag of one series."""
    series = np.asarray(series, dtype=float)
    if max_lag >= series.size / 2:
        raise DataError(f"max_lag {max_lag} must be below T/2 = {series.size / 2}")
    return pacf_from_acf(acf(series, max_lag, mask=mask))


def default_variogram_bins(locations: np.ndarray,
                           n_bins: int = DEFAULT_N_BINS) -> np.ndarray:
    """Equal-width bin edges from 0 to half the maximum pairwise distance."""
    max_dist = float(pdist(np.asarray(locations, dtype=float)).max())
    return np.linspace(0.0, 0.5 * max_dist, n_bins + 1)


def empirical_variogram(values: np.ndarray, locations: np.ndarray,
                        bin_edges: np.ndarray,
                        mask: np.ndarray | None = None) -> pd.DataFrame:
    """Binned semivariances gamma(bin) = 0.5 * mean (y_i - y_j)^2.

    Empty bins are emitted with count 0 and NaN semivariance.
    """
    values = np.asarray(values, dtype=float)
    locations = np.asarray(locations, dtype=float)
    bin_edges = np.asarray(bin_edges, dtype=float)
    if np.any(np.diff(bin_edges) <= 0):
        raise DataError("bin edges must be increasing")
    keep = np.isfinite(values) if mask is None else (~np.asarray(mask, bool))
    keep &= np.isfinite(values)
    if np.count_nonzero(keep) < 2:
        raise DataError("variogram needs at least 2 unmasked locations")
    pts = locations[keep]
    val = values[keep]
    dist = pdist(pts)
    sqdiff = 0.5 * pdist(val[:, None], metric="sqeuclidean")
    which = np.digitize(dist, bin_edges) - 1
    n_bins = bin_edges.size - 1
    counts = np.zeros(n_bins, dtype=int)
    gamma = np.full(n_bins, np.nan)
    for b in range(n_bins):
        sel = which == b
        counts[b] = int(np.count_nonzero(sel))
        if counts[b]:
            gamma[b] = float(sqdiff[sel].mean())
    return pd.DataFrame({
        "bin_lo": bin_edges[:-1], "bin_hi": bin_edges[1:],
        "distance": 0.5 * (bin_edges[:-1] + bin_edges[1:]),
        "count": counts, "semivariance": gamma,
    })


@dataclass
class DiagnosticBundle:
    """Tidy diagnostic tables for one historical-vs-simulated comparison."""

    acf: pd.DataFrame
    pacf: pd.DataFrame
    variograms: pd.DataFrame
    posterior_maps: pd.DataFrame
    histograms: pd.DataFrame
    envelopes: pd.DataFrame

    def write(self, outdir: str | Path) -> list[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        written = []
        for name in ("acf", "pacf", "variograms", "posterior_maps",
                     "histograms", "envelopes"):
            path = outdir / f"{name}.csv"
            getattr(self, name).to_csv(path, index=False)
            written.append(path)
        return written


def _acf_frames(cube: SpaceTimeCube, scenarios: ScenarioSet,
                max_lag: int) -> tuple[pd.DataFrame, pd.DataFrame]:
    locs = cube.coords.locations
    k = scenarios.k
    acf_rows, pacf_rows = [], []
    for p, var in enumerate(cube.variables):
        hist_acf = _acf_columns(cube.values[p], cube.mask[p], max_lag)
        hist_pacf = pacf_from_acf(np.nan_to_num(hist_acf, nan=0.0))
        hist_pacf[np.isnan(hist_acf)] = np.nan
        sim_acf = np.stack([
            _acf_columns(scenarios.realizations[r, p], cube.mask[p], max_lag)
            for r in range(k)
        ])
        sim_pacf = np.stack([pacf_from_acf(np.nan_to_num(sa, nan=0.0))
                             for sa in sim_acf])
        sim_pacf[np.isnan(sim_acf)] = np.nan
        for stats, hist, sims in ((acf_rows, hist_acf, sim_acf),
                                  (pacf_rows, hist_pacf, sim_pacf)):
            for n in range(cube.coords.n_locations):
                for h in range(max_lag):
                    stats.append((var.name, n, locs[n, 0], locs[n, 1], h + 1,
                                  "historical", "value", hist[h, n]))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    quants = np.nanquantile(sims[:, :, n], SIM_QUANTILES, axis=0)
                for qi, q in enumerate(SIM_QUANTILES):
                    for h in range(max_lag):
                        stats.append((var.name, n, locs[n, 0], locs[n, 1],
                                      h + 1, "simulated", f"q{int(q * 100):02d}",
                                      quants[qi, h]))
    columns = ["variable", "location", "x", "y", "lag", "source", "stat",
               "value"]
    return (pd.DataFrame(acf_rows, columns=columns),
            pd.DataFrame(pacf_rows, columns=columns))


def _variogram_frame(cube: SpaceTimeCube, scenarios: ScenarioSet,
                     time_slices: list[int], n_bins: int) -> pd.DataFrame:
    edges = default_variogram_bins(cube.coords.locations, n_bins)
    frames = []
    for p, var in enumerate(cube.variables):
        for t in time_slices:
            base = dict(variable=var.name, time_index=t,
                        time=cube.coords.times[t])
            hist = empirical_variogram(cube.values[p, t],
                                       cube.coords.locations, edges,
                                       cube.mask[p, t])
            hist = hist.assign(source="historical", realization=-1, **base)
            frames.append(hist)
            for r in range(scenarios.k):
                sim = empirical_variogram(scenarios.realizations[r, p, t],
                                          cube.coords.locations, edges,
                                          cube.mask[p, t])
                frames.append(sim.assign(source="simulated", realization=r,
                                         **base))
    order = ["variable", "time_index", "time", "source", "realization",
             "bin_lo", "bin_hi", "distance", "count", "semivariance"]
    return pd.concat(frames, ignore_index=True)[order]


def _posterior_frame(cube: SpaceTimeCube,
                     scenarios: ScenarioSet) -> pd.DataFrame:
    P, T, N = cube.shape
    sims = scenarios.realizations
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = sims.mean(axis=0)
        var = sims.var(axis=0, ddof=1) if scenarios.k > 1 \
            else np.zeros_like(mean)
    rows = []
    locs = cube.coords.locations
    for p, vdef in enumerate(cube.variables):
        for t in range(T):
            for n in range(N):
                masked = cube.mask[p, t, n]
                rows.append((
                    vdef.name, t, cube.coords.times[t], n,
                    locs[n, 0], locs[n, 1], bool(masked),
                    np.nan if masked else cube.values[p, t, n],
                    np.nan if masked else mean[p, t, n],
                    np.nan if masked else var[p, t, n],
                ))
    return pd.DataFrame(rows, columns=[
        "variable", "time_index", "time", "location", "x", "y", "masked",
        "historical", "sim_mean", "sim_variance"])


def _probe_frames(cube: SpaceTimeCube, scenarios: ScenarioSet,
                  probes: list[int]) -> tuple[pd.DataFrame, pd.DataFrame]:
    hist_rows, env_rows = [], []
    for p, var in enumerate(cube.variables):
        for n in probes:
            keep = ~cube.mask[p, :, n]
            for value in cube.values[p, keep, n]:
                hist_rows.append((var.name, n, "historical", value))
            sims = scenarios.realizations[:, p, :, n]
            for value in sims[:, keep].ravel():
                hist_rows.append((var.name, n, "simulated", value))
            for t in range(cube.coords.n_times):
                masked = cube.mask[p, t, n]
                column = sims[:, t]
                env_rows.append((
                    var.name, n, t, cube.coords.times[t],
                    np.nan if masked else cube.values[p, t, n],
                    np.nan if masked else float(np.min(column)),
                    np.nan if masked else float(np.median(column)),
                    np.nan if masked else float(np.max(column)),
                ))
    histograms = pd.DataFrame(
        hist_rows, columns=["variable", "location", "source", "value"])
    envelopes = pd.DataFrame(env_rows, columns=[
        "variable", "location", "time_index", "time", "historical",
        "sim_min", "sim_median", "sim_max"])
    return histograms, envelopes


def summarize_scenarios(scenarios: ScenarioSet, cube: SpaceTimeCube,
                        probes: list[int] | None = None,
                        max_lag: int = DEFAULT_MAX_LAG,
                        variogram_times: list[int] | None = None,
                        n_bins: int = DEFAULT_N_BINS) -> DiagnosticBundle:
    """Full diagnostic bundle comparing scenarios against the cube.

    ACF/PACF are computed per location (simulation distribution summarized
    by per-lag quantiles), variograms at the configured time slices, and
    histogram/envelope panels at the probe locations.
    """
    if scenarios.realizations.shape[1:] != cube.shape:
        raise DataError("scenario dimensions do not match the cube")
    if scenarios.k < 1:
        raise DataError("need at least one realization to diagnose")
    T = cube.coords.n_times
    max_lag = min(max_lag, T - 2)
    if variogram_times is None:
        variogram_times = [T // 2]
    if probes is None:
        probes = [cube.coords.n_locations // 2]
    for t in variogram_times:
        if not 0 <= t < T:
            raise DataError(f"variogram time index {t} outside 0..{T - 1}")
    for n in probes:
        if not 0 <= n < cube.coords.n_locations:
            raise DataError(f"probe location {n} out of range")

    acf_frame, pacf_frame = _acf_frames(cube, scenarios, max_lag)
    histograms, envelopes = _probe_frames(cube, scenarios, probes)
    return DiagnosticBundle(
        acf=acf_frame,
        pacf=pacf_frame,
        variograms=_variogram_frame(cube, scenarios, variogram_times, n_bins),
        posterior_maps=_posterior_frame(cube, scenarios),
        histograms=histograms,
        envelopes=envelopes,
    )
