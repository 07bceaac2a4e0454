"""Shared fixtures: small synthetic cubes and CSV helpers."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import pytest

from weathergen.grid import Coordinates, SpaceTimeCube, VariableDef


def grid_coordinates(nx: int = 5, ny: int = 5, spacing: float = 10.0,
                     n_times: int = 10, dt: float = 3.0) -> Coordinates:
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing)
    locations = np.column_stack([xs.ravel(), ys.ravel()])
    times = np.arange(n_times) * dt
    return Coordinates(locations=locations, times=times)


def smooth_surface(coords: Coordinates) -> np.ndarray:
    """A gentle (T, N) surface used as a known mean in recovery tests."""
    x = coords.locations[:, 0]
    y = coords.locations[:, 1]
    t = coords.times
    span_x = max(x.max() - x.min(), 1.0)
    span_t = max(t.max() - t.min(), 1.0)
    return (np.sin(2 * np.pi * t / span_t)[:, None]
            + np.cos(np.pi * x / span_x)[None, :]
            + 0.5 * np.sin(np.pi * (x + y) / span_x)[None, :])


def normal_cube(seed: int = 0, nx: int = 5, ny: int = 5, n_times: int = 10,
                noise: float = 0.3) -> SpaceTimeCube:
    coords = grid_coordinates(nx=nx, ny=ny, n_times=n_times)
    rng = np.random.default_rng(seed)
    values = smooth_surface(coords) + noise * rng.standard_normal(
        (coords.n_times, coords.n_locations))
    return SpaceTimeCube(coords=coords,
                         variables=[VariableDef("temperature", "normal")],
                         values=values[None, :, :])


def write_long_csv(path: Path, cube: SpaceTimeCube) -> Path:
    """Dump a cube to the long CSV format the loader expects."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["variable", "time", "x", "y", "value"])
        P, T, N = cube.shape
        for p in range(P):
            for t in range(T):
                for n in range(N):
                    writer.writerow([
                        cube.variables[p].name,
                        repr(float(cube.coords.times[t])),
                        repr(float(cube.coords.locations[n, 0])),
                        repr(float(cube.coords.locations[n, 1])),
                        repr(float(cube.values[p, t, n])),
                    ])
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(2026)
