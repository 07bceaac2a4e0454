"""Gridded multivariate space-time fields: data model, ingestion, windows.

A field is a dense ``[variable, time, location]`` cube over a fixed set of
planar-km locations and a regular time axis in hours.  The flat vector order
used everywhere downstream is ``index = p*(T*N) + t*N + n`` (variables
outermost, locations fastest), which is exactly the C-order raveling of the
``(P, T, N)`` value array.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import DataError

# Mean-Earth-radius kilometres per degree of latitude, used by the local
# equirectangular projection applied to lon/lat input.
KM_PER_DEGREE = math.pi * 6371.0088 / 180.0

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

GAMMA_FAMILIES = ("gamma",)
VALID_FAMILIES = ("normal", "gamma")


@dataclass(frozen=True)
class VariableDef:
    """One weather variable: its name and marginal family tag."""

    name: str
    family: str
    units: str = ""

    def __post_init__(self):
        if self.family not in VALID_FAMILIES:
            raise DataError(
                f"unknown family {self.family!r} for variable {self.name!r}; "
                f"expected one of {VALID_FAMILIES}"
            )

    @property
    def positive_only(self) -> bool:
        return self.family in GAMMA_FAMILIES


@dataclass(frozen=True)
class Coordinates:
    """Planar-km locations and a regular time axis in epoch-hours.

    Attributes
    ----------
    locations : ndarray, shape (N, 2)
        (x, y) in kilometres east/north.
    times : ndarray, shape (T,)
        Strictly increasing, regularly spaced epoch-hours.
    """

    locations: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        locations = np.ascontiguousarray(np.asarray(self.locations, dtype=float))
        times = np.ascontiguousarray(np.asarray(self.times, dtype=float))
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "times", times)
        if locations.ndim != 2 or locations.shape[1] != 2:
            raise DataError("locations must be an (N, 2) array of km coordinates")
        if locations.shape[0] < 2:
            raise DataError("need at least 2 locations")
        if len(np.unique(locations, axis=0)) != locations.shape[0]:
            raise DataError("duplicate locations")
        if times.ndim != 1 or times.size < 2:
            raise DataError("need at least 2 time points")
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise DataError("times must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
            raise DataError(
                f"irregular time grid: spacings range "
                f"{steps.min():g}..{steps.max():g} hours"
            )

    @property
    def n_locations(self) -> int:
        return self.locations.shape[0]

    @property
    def n_times(self) -> int:
        return self.times.shape[0]

    @property
    def time_step(self) -> float:
        """Grid spacing in hours."""
        return float(self.times[1] - self.times[0])


@dataclass
class SpaceTimeCube:
    """Dense P-variable x T-time x N-location field with a missing mask.

    ``values[p, t, n]`` holds the observation for variable ``p`` at time
    ``t`` and location ``n``; ``mask[p, t, n]`` is True for cells that are
    missing or excluded (e.g. non-positive values of a Gamma-family
    variable).  Masked cells take no part in fitting, copula scores, or
    diagnostics.
    """

    coords: Coordinates
    variables: list[VariableDef]
    values: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        P, T, N = len(self.variables), self.coords.n_times, self.coords.n_locations
        if self.values.shape != (P, T, N):
            raise DataError(
                f"values shape {self.values.shape} does not match (P, T, N)="
                f"({P}, {T}, {N})"
            )
        if self.mask is None:
            self.mask = ~np.isfinite(self.values)
        self.mask = np.ascontiguousarray(np.asarray(self.mask, dtype=bool))
        if self.mask.shape != self.values.shape:
            raise DataError("mask shape does not match values shape")
        self.mask |= ~np.isfinite(self.values)
        for p, var in enumerate(self.variables):
            if var.positive_only:
                good = self.values[p][~self.mask[p]]
                if good.size and np.any(good <= 0):
                    raise DataError(
                        f"{var.name!r} is {var.family}-family but has unmasked "
                        "non-positive values"
                    )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def flat_index(self, p: int, t: int, n: int) -> int:
        """Flat vector position of cell (p, t, n): p*T*N + t*N + n."""
        _, T, N = self.shape
        return p * (T * N) + t * N + n

    def flat_values(self) -> np.ndarray:
        """Values raveled in the canonical p*T*N + t*N + n order."""
        return self.values.ravel()


def spatial_neighbors(coords: Coordinates, center: int, k: int) -> np.ndarray:
    """Indices of the k locations nearest to ``center`` (itself included).

    Distances are Euclidean in planar km; ties break toward the lower
    location index so the selection is deterministic.
    """
    N = coords.n_locations
    if not 1 <= k <= N:
        raise DataError(f"k={k} outside 1..{N}")
    if not 0 <= center < N:
        raise DataError(f"center index {center} outside 0..{N - 1}")
    delta = coords.locations - coords.locations[center]
    dist = np.hypot(delta[:, 0], delta[:, 1])
    # stable sort on distance preserves index order among ties
    order = np.argsort(dist, kind="stable")
    return np.sort(order[:k])


def temporal_window(times: np.ndarray, center: int, w: int) -> np.ndarray:
    """Indices of the w time points nearest to ``center``.

    Interior centers get the symmetric window; at the series boundary the
    window shifts toward the available side so exactly ``min(w, T)`` indices
    are always returned.  Ties in |dt| break toward the earlier index.
    """
    times = np.asarray(times, dtype=float)
    T = times.size
    if not 1 <= w <= T:
        raise DataError(f"w={w} outside 1..{T}")
    if not 0 <= center < T:
        raise DataError(f"center index {center} outside 0..{T - 1}")
    dt = np.abs(times - times[center])
    order = np.argsort(dt, kind="stable")
    return np.sort(order[:w])


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

DEFAULT_COLUMNS = {
    "variable": "variable",
    "time": "time",
    "x": "x",
    "y": "y",
    "value": "value",
}


@dataclass
class CubeSchema:
    """Column mapping and parsing choices for long-format CSV input.

    ``variables`` fixes both the accepted variable names and their order
    (the p index of the cube).  ``time_format`` is ``"hours"`` (numeric) or
    ``"iso8601"``; ``coords`` is ``"km"`` or ``"lonlat"`` (projected to
    planar km about the domain centroid at load time).
    """

    variables: list[VariableDef]
    columns: dict = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    time_format: str = "hours"
    coords: str = "km"

    def __post_init__(self):
        missing = set(DEFAULT_COLUMNS) - set(self.columns)
        if missing:
            raise DataError(f"schema columns missing entries for {sorted(missing)}")
        if self.time_format not in ("hours", "iso8601"):
            raise DataError(f"unknown time_format {self.time_format!r}")
        if self.coords not in ("km", "lonlat"):
            raise DataError(f"unknown coords mode {self.coords!r}")
        if not self.variables:
            raise DataError("schema lists no variables")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DataError("duplicate variable names in schema")


def _parse_time(raw: str, time_format: str, line: int) -> float:
    if time_format == "hours":
        try:
            return float(raw)
        except ValueError:
            raise DataError(f"line {line}: cannot parse time {raw!r} as hours") from None
    try:
        stamp = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise DataError(f"line {line}: cannot parse time {raw!r} as ISO-8601") from None
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return (stamp - _EPOCH).total_seconds() / 3600.0


def _project_lonlat(lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Local equirectangular projection about the domain centroid, in km."""
    lon0, lat0 = lon.mean(), lat.mean()
    x = (lon - lon0) * KM_PER_DEGREE * math.cos(math.radians(lat0))
    y = (lat - lat0) * KM_PER_DEGREE
    return np.column_stack([x, y])


def load_cube(path: str | Path, schema: CubeSchema) -> SpaceTimeCube:
    """Read a long-format CSV into a SpaceTimeCube.

    Rows with non-positive values of a Gamma-family variable are masked
    (kept out of all fitting), as are (variable, time, location) cells
    absent from the file.  Duplicate rows and irregular time grids are
    errors.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    cols = schema.columns
    var_index = {v.name: p for p, v in enumerate(schema.variables)}

    raw_var: list[int] = []
    raw_time: list[float] = []
    raw_xy: list[tuple[float, float]] = []
    raw_val: list[float] = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        for name in cols.values():
            if name not in reader.fieldnames:
                raise DataError(f"{path}: missing column {name!r}")
        for line, row in enumerate(reader, start=2):
            name = row[cols["variable"]]
            if name not in var_index:
                raise DataError(f"line {line}: unknown variable {name!r}")
            raw_var.append(var_index[name])
            raw_time.append(_parse_time(row[cols["time"]], schema.time_format, line))
            try:
                raw_xy.append((float(row[cols["x"]]), float(row[cols["y"]])))
                raw_val.append(float(row[cols["value"]]))
            except (TypeError, ValueError):
                raise DataError(f"line {line}: cannot parse coordinates/value") from None
    if not raw_val:
        raise DataError(f"{path}: no data rows")

    xy = np.asarray(raw_xy, dtype=float)
    locations, loc_idx = np.unique(xy, axis=0, return_inverse=True)
    if schema.coords == "lonlat":
        locations = _project_lonlat(locations[:, 0], locations[:, 1])
    times, time_idx = np.unique(np.asarray(raw_time), return_inverse=True)
    coords = Coordinates(locations=locations, times=times)

    P, T, N = len(schema.variables), coords.n_times, coords.n_locations
    values = np.full((P, T, N), np.nan)
    seen = np.zeros((P, T, N), dtype=bool)
    for p, t, n, v in zip(raw_var, time_idx, loc_idx, raw_val):
        if seen[p, t, n]:
            var = schema.variables[p].name
            raise DataError(
                f"duplicate row for variable {var!r} at time index {t}, "
                f"location index {n}"
            )
        seen[p, t, n] = True
        values[p, t, n] = v

    mask = ~seen
    for p, var in enumerate(schema.variables):
        if var.positive_only:
            mask[p] |= seen[p] & (values[p] <= 0)
    return SpaceTimeCube(coords=coords, variables=list(schema.variables),
                         values=values, mask=mask)


# ---------------------------------------------------------------------------
# cube persistence (binary dump + plain-text metadata)
# ---------------------------------------------------------------------------

def save_cube(cube: SpaceTimeCube, outdir: str | Path) -> Path:
    """Write a cube as .npy arrays plus a plain-text metadata file.

    .npy files carry no timestamps, so rewriting the same cube is
    byte-identical.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    np.save(outdir / "values.npy", cube.values)
    np.save(outdir / "mask.npy", cube.mask)
    np.save(outdir / "locations.npy", cube.coords.locations)
    np.save(outdir / "times.npy", cube.coords.times)
    with open(outdir / "variables.json", "w") as handle:
        json.dump(
            [{"name": v.name, "family": v.family, "units": v.units}
             for v in cube.variables],
            handle, indent=2, sort_keys=True)
        handle.write("\n")
    P, T, N = cube.shape
    lines = [
        "space-time cube dump",
        f"P (variables) = {P}",
        f"T (times)     = {T}",
        f"N (locations) = {N}",
        "coordinates   = planar km (x east, y north); times in epoch-hours",
        "units         = " + "; ".join(
            f"{v.name}: {v.units or 'unspecified'}" for v in cube.variables),
        "vectorization = index p*(T*N) + t*N + n "
        "(variables outermost, locations fastest)",
    ]
    (outdir / "metadata.txt").write_text("\n".join(lines) + "\n")
    return outdir


def load_saved_cube(path: str | Path) -> SpaceTimeCube:
    """Read back a cube written by :func:`save_cube`, bit-exactly."""
    path = Path(path)
    try:
        values = np.load(path / "values.npy")
        mask = np.load(path / "mask.npy")
        locations = np.load(path / "locations.npy")
        times = np.load(path / "times.npy")
        specs = json.loads((path / "variables.json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"not a cube dump: {path} ({exc})") from None
    variables = [VariableDef(**spec) for spec in specs]
    return SpaceTimeCube(coords=Coordinates(locations, times),
                         variables=variables, values=values, mask=mask)
