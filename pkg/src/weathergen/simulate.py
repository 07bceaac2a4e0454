"""Joint field simulation from the fitted copula and marginal ensembles.

A realization is z = (L_p x L_t x L_n) eps with standard-Normal eps,
mapped through Phi and each cell's empirical quantile function.  Masked
cells come back as structural zeros.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .copula import SeparableCorrelation
from .errors import DataError
from .grid import Coordinates
from .kron import kron_matvec
from .windows import MarginalEnsemble, quantile_field


def kron_chol_mul(chol_p: np.ndarray, chol_t: np.ndarray, chol_n: np.ndarray,
                  eps: np.ndarray) -> np.ndarray:
    """(L_p x L_t x L_n) eps by three mode-wise multiplications.

    Cost O(PTN * (P + T + N)); the Kronecker product is never formed.
    """
    return kron_matvec([chol_p, chol_t, chol_n], eps)


@dataclass
class ScenarioSet:
    """Simulated realizations [k, variable, time, location] plus provenance."""

    realizations: np.ndarray
    seed: int
    copula_meta: dict = field(default_factory=dict)
    marginal_meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.realizations.shape[0]


def simulate_scenarios(corr: SeparableCorrelation, ensemble: MarginalEnsemble,
                       k: int, seed: int) -> ScenarioSet:
    """Draw k joint realizations of the full field.

    Each realization uses its own counter-based RNG substream, so results
    are reproducible and independent of any parallel scheduling.
    """
    if k < 0:
        raise DataError(f"realization count must be nonnegative, got {k}")
    P, T, N = ensemble.shape
    if corr.n_variables != P:
        raise DataError(
            f"copula has {corr.n_variables} variables, ensemble has {P}")
    if corr.chol_t.shape[0] != T or corr.chol_n.shape[0] != N:
        raise DataError("copula factor dimensions do not match the ensemble")

    out = np.empty((k, P, T, N))
    for r in range(k):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
        eps = rng.standard_normal(P * T * N)
        z = kron_chol_mul(corr.chol_p, corr.chol_t, corr.chol_n, eps)
        u = ndtr(z).reshape(P, T, N)
        values = quantile_field(ensemble, u)
        out[r] = np.where(ensemble.mask, 0.0, values)

    return ScenarioSet(
        realizations=out, seed=seed,
        copula_meta={"v_space_km": corr.v_space, "v_time_hours": corr.v_time,
                     "nu": corr.nu,
                     "pairwise_correlations":
                         corr.pairwise_correlations.tolist()},
        marginal_meta=dict(ensemble.provenance))


# ---------------------------------------------------------------------------
# persistence: long-format CSV + binary dump
# ---------------------------------------------------------------------------

def save_scenarios(scenarios: ScenarioSet, coords: Coordinates,
                   variable_names: list[str], outdir: str | Path) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    np.save(outdir / "realizations.npy", scenarios.realizations)
    meta = {"seed": scenarios.seed, "k": scenarios.k,
            "copula": scenarios.copula_meta,
            "marginals": scenarios.marginal_meta,
            "variables": variable_names}
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2,
                                                 sort_keys=True) + "\n")

    k, P, T, N = scenarios.realizations.shape
    with open(outdir / "scenarios.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["realization", "variable", "time", "x", "y", "value"])
        for r in range(k):
            for p in range(P):
                for t in range(T):
                    for n in range(N):
                        writer.writerow([
                            r, variable_names[p],
                            repr(float(coords.times[t])),
                            repr(float(coords.locations[n, 0])),
                            repr(float(coords.locations[n, 1])),
                            repr(float(scenarios.realizations[r, p, t, n])),
                        ])
    return outdir


def load_scenarios(path: str | Path) -> ScenarioSet:
    path = Path(path)
    try:
        realizations = np.load(path / "realizations.npy")
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"not a scenario artifact: {path} ({exc})") from None
    return ScenarioSet(realizations=realizations, seed=meta.get("seed", 0),
                       copula_meta=meta.get("copula", {}),
                       marginal_meta=meta.get("marginals", {}))
