import numpy as np
import pytest

from weathergen.errors import DataError
from weathergen.splines import (POLY_DIM, build_basis, radial_kernel,
                                scale_inputs, select_knots)


def fps_oracle(points: np.ndarray, j: int) -> np.ndarray:
    """Independent farthest-point trace: greedy, ties to lower index."""
    pts = np.unique(points, axis=0)
    centroid = pts.mean(axis=0)
    d0 = np.linalg.norm(pts - centroid, axis=1)
    chosen = [int(np.flatnonzero(d0 == d0.min())[0])]
    while len(chosen) < j:
        min_d = np.full(len(pts), np.inf)
        for c in chosen:
            min_d = np.minimum(min_d, np.linalg.norm(pts - pts[c], axis=1))
        best = np.flatnonzero(min_d == min_d.max())[0]
        chosen.append(int(best))
    return pts[chosen]


class TestSelectKnots:
    def test_exhaustion_returns_all(self, rng):
        pts = rng.uniform(size=(4, 3))
        got = select_knots(pts, 4)
        assert got.shape == (4, 3)
        assert np.array_equal(np.unique(got, axis=0), np.unique(pts, axis=0))

    def test_collinear_matches_trace_oracle(self):
        pts = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
        got = select_knots(pts, 3)
        oracle = fps_oracle(pts, 3)
        assert np.array_equal(got, oracle)
        # first the point nearest the centroid, then the two extremes
        assert got[0, 0] == 4.0
        assert {got[1, 0], got[2, 0]} == {0.0, 9.0}

    def test_more_spacefilling_than_random_subsets(self, rng):
        pts = rng.uniform(0, 100, size=(270, 3))
        knots = select_knots(pts, 50)
        assert knots.shape == (50, 3)
        assert len(np.unique(knots, axis=0)) == 50

        def min_pairwise(subset):
            from scipy.spatial.distance import pdist
            return pdist(subset).min()

        ours = min_pairwise(knots)
        random_minima = np.array([
            min_pairwise(pts[rng.choice(270, 50, replace=False)])
            for _ in range(200)
        ])
        assert ours >= np.quantile(random_minima, 0.05)

    def test_too_many_knots_rejected(self, rng):
        with pytest.raises(DataError, match="distinct"):
            select_knots(rng.uniform(size=(5, 3)), 6)

    def test_deterministic_under_seed(self, rng):
        pts = rng.uniform(size=(40, 3))
        assert np.array_equal(select_knots(pts, 10, seed=1),
                              select_knots(pts, 10, seed=99))


class TestBuildBasis:
    def test_radial_value_at_knot_is_zero(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        basis = build_basis(pts, np.array([[0.0, 0.0, 0.0]]), time_scale=1.0)
        assert basis.design[0, 0] == 0.0  # eta(0) = 0
        assert basis.design[1, 0] == -1.0

    def test_two_knot_kernel_and_projection(self):
        knots = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        pts = np.array([[0.5, 0.0, 0.0], [1.5, 1.0, 0.0], [0.1, 0.2, 0.3]])
        basis = build_basis(pts, knots, time_scale=1.0)
        raw = radial_kernel(np.linalg.norm(knots[0] - knots[1]))
        assert raw == -2.0
        # clipping the eigenpair (-2, (1,1)/sqrt2) of [[0,-2],[-2,0]] leaves
        # the rank-1 projector on (1,-1): [[1,-1],[-1,1]]
        assert np.allclose(basis.penalty[:2, :2],
                           np.array([[1.0, -1.0], [-1.0, 1.0]]), atol=1e-12)

    def test_interpolates_when_square_and_unpenalized(self, rng):
        # 10 knots + 4 polynomial columns, evaluated at n = 14 points:
        # the design is square, so the lambda -> 0 fit reproduces the data
        pts = rng.uniform(0, 10, size=(14, 3))
        knots = pts[:10]
        basis = build_basis(pts, knots, time_scale=1.0)
        y = rng.standard_normal(14)
        beta = np.linalg.solve(basis.design, y)  # direct linear solve oracle
        assert np.allclose(basis.design @ beta, y, atol=1e-8)

        from weathergen.gam import NORMAL_IDENTITY, fit_penalized
        fit = fit_penalized(basis.design, y, basis.penalty, NORMAL_IDENTITY,
                            lam=1e-10)
        assert np.allclose(basis.design @ fit.beta, y, atol=1e-5)

    def test_duplicate_knots_rejected(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        knots = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        with pytest.raises(DataError, match="duplicate knots"):
            build_basis(pts, knots, time_scale=1.0)

    def test_identical_points_rejected(self):
        pts = np.zeros((5, 3))
        with pytest.raises(DataError, match="degenerate"):
            build_basis(pts, np.zeros((1, 3)), time_scale=1.0)


class TestBasisProperties:
    def make(self, rng, n=40, j=12):
        pts = rng.uniform(0, 20, size=(n, 3))
        knots = select_knots(pts, j)
        return pts, knots, build_basis(pts, knots, time_scale=1.0)

    def test_polynomial_coefficients_unpenalized(self, rng):
        _, _, basis = self.make(rng)
        j = basis.n_radial
        for _ in range(10):
            beta = np.zeros(j + POLY_DIM)
            beta[j:] = rng.standard_normal(POLY_DIM)
            assert beta @ basis.penalty @ beta == 0.0

    def test_translation_equivariance_of_radial_columns(self, rng):
        pts, knots, basis = self.make(rng)
        shift = np.array([5.0, -3.0, 2.0])
        shifted = build_basis(pts + shift, knots + shift, time_scale=1.0)
        j = basis.n_radial
        assert np.allclose(shifted.design[:, :j], basis.design[:, :j],
                           atol=1e-10)
        assert not np.allclose(shifted.design[:, j:], basis.design[:, j:])

    def test_psd_projection_bound_and_psdness(self, rng):
        pts, knots, basis = self.make(rng)
        j = basis.n_radial
        from scipy.spatial.distance import cdist
        raw = radial_kernel(cdist(knots, knots))
        eigs_raw = np.linalg.eigvalsh(raw)
        delta = np.linalg.norm(basis.penalty[:j, :j] - raw, ord=2)
        assert delta <= abs(eigs_raw.min()) + 1e-10

        eigs = np.linalg.eigvalsh(basis.penalty)
        assert eigs.min() >= -1e-8 * eigs.max()

    def test_rank_deficiency_is_nulldim_plus_clipped(self, rng):
        # eta(r) = -r has exactly one structural negative eigenvalue
        # (negated distance matrix), so clipping adds one null direction
        # on top of the 4 polynomial ones.
        pts, knots, basis = self.make(rng)
        from scipy.spatial.distance import cdist
        raw = radial_kernel(cdist(knots, knots))
        n_clipped = int(np.sum(np.linalg.eigvalsh(raw) < 0))
        assert n_clipped == 1
        dim = basis.penalty.shape[0]
        rank = np.linalg.matrix_rank(basis.penalty, tol=1e-9)
        assert dim - rank == basis.null_dim + n_clipped

    def test_scale_inputs_stacks_and_scales_time(self):
        xy = np.array([[1.0, 2.0], [3.0, 4.0]])
        t = np.array([6.0, 9.0])
        scaled = scale_inputs(xy, t, time_scale=0.5)
        assert np.array_equal(scaled,
                              np.array([[1.0, 2.0, 3.0], [3.0, 4.0, 4.5]]))
