"""Mode-wise Kronecker matrix-vector operations.

For factor matrices (A_1, ..., A_k) and a vector v whose flat index runs
with the *last* factor fastest (C-order ravel of the (d_1, ..., d_k)
tensor), (A_1 x ... x A_k) v is computed as k mode products, never
materializing the Kronecker product.  Cost is O(len(v) * sum(d_i)).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError


def _check(mats, vec) -> tuple[list[np.ndarray], np.ndarray, tuple[int, ...]]:
    mats = [np.asarray(m, dtype=float) for m in mats]
    vec = np.asarray(vec, dtype=float)
    shape = tuple(m.shape[0] for m in mats)
    for m in mats:
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise NumericalError("Kronecker factors must be square matrices")
    if vec.size != int(np.prod(shape)):
        raise NumericalError(
            f"vector length {vec.size} does not match factor dimensions {shape}"
        )
    return mats, vec, shape


def _mode_apply(tensor: np.ndarray, axis: int, op) -> np.ndarray:
    """Apply op to the (d_axis, rest) unfolding along one axis."""
    moved = np.moveaxis(tensor, axis, 0)
    flat = moved.reshape(moved.shape[0], -1)
    out = op(flat)
    return np.moveaxis(out.reshape(moved.shape), 0, axis)


def kron_matvec(mats, vec: np.ndarray) -> np.ndarray:
    """(A_1 x A_2 x ... x A_k) vec via mode products."""
    mats, vec, shape = _check(mats, vec)
    tensor = vec.reshape(shape)
    for axis, mat in enumerate(mats):
        tensor = _mode_apply(tensor, axis, lambda flat, m=mat: m @ flat)
    return tensor.ravel()


def kron_solve_lower(chols, vec: np.ndarray) -> np.ndarray:
    """(L_1 x ... x L_k)^-1 vec for lower-triangular factors."""
    chols, vec, shape = _check(chols, vec)
    tensor = vec.reshape(shape)
    for axis, chol in enumerate(chols):
        tensor = _mode_apply(
            tensor, axis,
            lambda flat, c=chol: solve_triangular(c, flat, lower=True))
    return tensor.ravel()
