"""Knot-based thin-plate spline bases over scaled (x, y, t~) inputs.

All functions here work in the already-scaled 3-D input space where the
time axis has been multiplied by a km-per-hour factor, so one basis and one
isotropic radial kernel serve space and time together.  The radial kernel
for a 3-D input with a second-order penalty is eta(r) = -r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError

POLY_DIM = 4  # unpenalized columns: 1, x, y, t~


def radial_kernel(r: np.ndarray) -> np.ndarray:
    """Thin-plate radial function eta(r) = -r for 3-D inputs."""
    return -np.asarray(r, dtype=float)


@dataclass
class SplineBasis:
    """Design and penalty matrices for one window's spline fit.

    Attributes
    ----------
    knots : ndarray, shape (J, 3)
        Knot positions in scaled (x, y, t~) space.
    design : ndarray, shape (n, J + 4)
        Basis evaluated at the window points: J radial columns followed by
        the polynomial columns [1, x, y, t~].
    penalty : ndarray, shape (J + 4, J + 4)
        PSD penalty: the radial block is the knot kernel matrix projected
        to be PSD (negative eigenvalues clipped to zero); polynomial rows
        and columns are zero.
    null_dim : int
        Dimension of the unpenalized polynomial space (always 4).
    time_scale : float
        km-per-hour factor that produced the t~ axis, kept for scaling
        prediction points consistently.
    """

    knots: np.ndarray
    design: np.ndarray
    penalty: np.ndarray
    null_dim: int
    time_scale: float

    @property
    def n_radial(self) -> int:
        return self.knots.shape[0]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Basis rows at new points in the same scaled coordinate frame."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        radial = radial_kernel(cdist(points, self.knots))
        poly = np.column_stack([np.ones(points.shape[0]), points])
        return np.hstack([radial, poly])


def scale_inputs(xy: np.ndarray, t_hours: np.ndarray, time_scale: float) -> np.ndarray:
    """Stack (x, y, t*time_scale) into the (n, 3) scaled input array."""
    xy = np.asarray(xy, dtype=float)
    t = np.asarray(t_hours, dtype=float)
    return np.column_stack([xy[:, 0], xy[:, 1], t * time_scale])


def select_knots(points: np.ndarray, j: int, seed: int = 0) -> np.ndarray:
    """Choose j space-filling knots by farthest-point sampling.

    The sweep starts at the point nearest the centroid and greedily adds
    the point farthest from the chosen set.  All ties break toward the
    lower index in the deduplicated point list, so the selection is fully
    deterministic; ``seed`` is accepted for interface stability but has no
    effect.

    Parameters
    ----------
    points : ndarray, shape (n, d)
        Candidate points in scaled input space.
    j : int
        Number of knots; must not exceed the number of distinct points.

    Returns
    -------
    ndarray, shape (j, d)
    """
    del seed
    points = np.atleast_2d(np.asarray(points, dtype=float))
    distinct = np.unique(points, axis=0)
    if j > distinct.shape[0]:
        raise DataError(
            f"requested {j} knots but only {distinct.shape[0]} distinct points"
        )
    if j == distinct.shape[0]:
        return distinct
    centroid = distinct.mean(axis=0)
    start = int(np.argmin(np.linalg.norm(distinct - centroid, axis=1)))
    chosen = [start]
    # min distance from every candidate to the chosen set, updated greedily
    min_dist = np.linalg.norm(distinct - distinct[start], axis=1)
    for _ in range(j - 1):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        np.minimum(min_dist, np.linalg.norm(distinct - distinct[nxt], axis=1),
                   out=min_dist)
    return distinct[np.array(chosen)]


def build_basis(points: np.ndarray, knots: np.ndarray,
                time_scale: float) -> SplineBasis:
    """Construct the thin-plate design and penalty for one window.

    Parameters
    ----------
    points : ndarray, shape (n, 3)
        Window input points in scaled (x, y, t~) space.
    knots : ndarray, shape (J, 3)
        Distinct knot positions in the same space.
    time_scale : float
        Factor recorded on the basis for later prediction scaling.

    Returns
    -------
    SplineBasis
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    knots = np.atleast_2d(np.asarray(knots, dtype=float))
    if points.shape[0] == 0:
        raise DataError("no points to build a basis on")
    if len(np.unique(knots, axis=0)) != knots.shape[0]:
        raise DataError("duplicate knots")
    if np.all(points == points[0]):
        raise DataError("degenerate window: all input points identical")

    n_knots = knots.shape[0]
    radial = radial_kernel(cdist(points, knots))
    poly = np.column_stack([np.ones(points.shape[0]), points])
    design = np.hstack([radial, poly])
    if not np.all(np.isfinite(design)):
        raise DataError("non-finite basis entries")

    kernel = radial_kernel(cdist(knots, knots))
    # eta(r) = -r is only conditionally PD: clip the negative spectrum so
    # the penalty is an honest PSD quadratic form.
    eigval, eigvec = np.linalg.eigh(kernel)
    kernel_psd = (eigvec * np.clip(eigval, 0.0, None)) @ eigvec.T
    kernel_psd = 0.5 * (kernel_psd + kernel_psd.T)

    penalty = np.zeros((n_knots + POLY_DIM, n_knots + POLY_DIM))
    penalty[:n_knots, :n_knots] = kernel_psd
    return SplineBasis(knots=knots, design=design, penalty=penalty,
                       null_dim=POLY_DIM, time_scale=float(time_scale))
