"""Render the diagnostic tables as figures next to the CSV output.

All figures are written as PNG files with fixed metadata; nothing here
feeds back into the numerical pipeline.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .diagnostics import DiagnosticBundle  # noqa: E402

RC_PARAMS = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.constrained_layout.use": True,
}

_PNG_META = {"Software": "weathergen"}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def _lag_maps(frame: pd.DataFrame, variable: str, stat_name: str,
              path: Path, max_lag: int = 3) -> Path:
    sub = frame[frame["variable"] == variable]
    lags = sorted(sub["lag"].unique())[:max_lag]
    fig, axes = plt.subplots(2, len(lags), figsize=(3.0 * len(lags), 5.2),
                             squeeze=False)
    hist = sub[sub["source"] == "historical"]
    sim = sub[(sub["source"] == "simulated") & (sub["stat"] == "q50")]
    for col, lag in enumerate(lags):
        for row, (label, data) in enumerate((("historical", hist),
                                             ("simulated median", sim))):
            at_lag = data[data["lag"] == lag]
            ax = axes[row][col]
            pts = ax.scatter(at_lag["x"], at_lag["y"], c=at_lag["value"],
                             s=14, vmin=-1, vmax=1, cmap="RdBu_r")
            ax.set_title(f"{label} lag {lag}")
            ax.set_aspect("equal")
        fig.colorbar(pts, ax=axes[:, col], shrink=0.75)
    fig.suptitle(f"{stat_name} by location: {variable}")
    return _save(fig, path)


def _variogram_panels(frame: pd.DataFrame, variable: str, path: Path) -> Path:
    sub = frame[frame["variable"] == variable]
    slices = sorted(sub["time_index"].unique())
    fig, axes = plt.subplots(1, len(slices), figsize=(4.0 * len(slices), 3.2),
                             squeeze=False)
    for ax, t in zip(axes[0], slices):
        at_t = sub[sub["time_index"] == t]
        for r, sim in at_t[at_t["source"] == "simulated"].groupby("realization"):
            ax.plot(sim["distance"], sim["semivariance"], color="0.7",
                    lw=0.8, zorder=1)
        hist = at_t[at_t["source"] == "historical"]
        ax.plot(hist["distance"], hist["semivariance"], "ko", ms=4, zorder=2)
        ax.set_title(f"{variable}, time index {t}")
        ax.set_xlabel("distance [km]")
        ax.set_ylabel("semivariance")
    return _save(fig, path)


def _posterior_panels(frame: pd.DataFrame, variable: str, time_index: int,
                      path: Path) -> Path:
    sub = frame[(frame["variable"] == variable)
                & (frame["time_index"] == time_index)]
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    panels = (("historical", "historical"), ("sim_mean", "posterior mean"),
              ("sim_variance", "posterior variance"))
    for ax, (column, title) in zip(axes, panels):
        pts = ax.scatter(sub["x"], sub["y"], c=sub[column], s=14,
                         cmap="viridis")
        ax.set_title(title)
        ax.set_aspect("equal")
        fig.colorbar(pts, ax=ax, shrink=0.8)
    fig.suptitle(f"{variable}, time index {time_index}")
    return _save(fig, path)


def _probe_panels(histograms: pd.DataFrame, envelopes: pd.DataFrame,
                  probe: int, path: Path) -> Path:
    variables = sorted(histograms["variable"].unique())
    fig, axes = plt.subplots(2, len(variables),
                             figsize=(3.4 * len(variables), 5.4),
                             squeeze=False)
    for col, variable in enumerate(variables):
        vals = histograms[(histograms["variable"] == variable)
                          & (histograms["location"] == probe)]
        hist_vals = vals[vals["source"] == "historical"]["value"]
        sim_vals = vals[vals["source"] == "simulated"]["value"]
        ax = axes[0][col]
        if len(sim_vals):
            ax.hist(sim_vals, bins=20, density=True, color="0.75",
                    label="simulated")
        if len(hist_vals):
            ax.hist(hist_vals, bins=10, density=True, histtype="step",
                    color="k", lw=1.4, label="historical")
        ax.set_title(variable)
        ax.legend()

        env = envelopes[(envelopes["variable"] == variable)
                        & (envelopes["location"] == probe)]
        ax = axes[1][col]
        ax.fill_between(env["time"], env["sim_min"], env["sim_max"],
                        color="0.8", label="simulated range")
        ax.plot(env["time"], env["sim_median"], color="0.4", lw=1.0,
                label="simulated median")
        ax.plot(env["time"], env["historical"], "k-", lw=1.4,
                label="historical")
        ax.set_xlabel("time [h]")
        ax.legend()
    fig.suptitle(f"location {probe}: histograms and time series")
    return _save(fig, path)


def render_all(bundle: DiagnosticBundle, outdir: str | Path) -> list[Path]:
    """Write the full figure set for one diagnostic bundle."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    with plt.rc_context(RC_PARAMS):
        variables = sorted(bundle.acf["variable"].unique())
        for variable in variables:
            written.append(_lag_maps(bundle.acf, variable, "ACF",
                                     outdir / f"acf_{variable}.png"))
            written.append(_lag_maps(bundle.pacf, variable, "PACF",
                                     outdir / f"pacf_{variable}.png"))
            written.append(_variogram_panels(
                bundle.variograms, variable,
                outdir / f"variogram_{variable}.png"))
            for t in sorted(bundle.variograms["time_index"].unique()):
                written.append(_posterior_panels(
                    bundle.posterior_maps, variable, int(t),
                    outdir / f"posterior_{variable}_t{int(t):03d}.png"))
        for probe in sorted(bundle.histograms["location"].unique()):
            written.append(_probe_panels(bundle.histograms, bundle.envelopes,
                                         int(probe),
                                         outdir / f"location_{int(probe):04d}.png"))
    return written


def render_scores_trace(trace: list, path: str | Path) -> Path:
    """Objective trace of the copula fit (one line, one figure)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    iters = [int(i) for i, _ in trace]
    values = [float(v) for _, v in trace]
    with plt.rc_context(RC_PARAMS):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        ax.plot(iters, values, "k.-", ms=4)
        ax.set_xlabel("iteration")
        ax.set_ylabel("-2 log likelihood")
        ax.set_title("copula fit objective")
        return _save(fig, path)
