"""Basis construction and projection tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quasibayes.basis import (BasisError, build_natural_spline,
                              build_tensor_poly, build_thin_plate, project)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestThinPlate:
    def test_small_univariate_columns(self):
        # K=3 in 1-d: null space {1, w} plus one radial column
        points = np.array([0.0, 0.5, 1.0])
        design = build_thin_plate(points, 3, rng())
        assert design.B.shape == (3, 3)
        np.testing.assert_allclose(design.B[:, 0], 1.0)
        np.testing.assert_allclose(design.B[:, 1], points)
        # third column is r^3 about a single knot
        c = design.spec.knots[0, 0]
        np.testing.assert_allclose(design.B[:, 2], np.abs(points - c) ** 3)

    def test_radial_function_at_zero(self):
        # eta(0) = 0 in both parities
        pts1 = np.linspace(0, 1, 20)
        d1 = build_thin_plate(pts1, 5, rng())
        knots = d1.spec.knots
        vals = d1.evaluate(knots)
        # radial part of each knot's own column vanishes at the knot
        for j in range(knots.shape[0]):
            assert vals[j, 2 + j] == 0.0

    def test_rank_full(self):
        pts = rng(3).uniform(size=50)
        design = build_thin_plate(pts, 10, rng(4))
        assert np.linalg.matrix_rank(design.B) == 10
        assert design.ridge == 0.0

    def test_dimension_error(self):
        with pytest.raises(BasisError):
            build_thin_plate(np.arange(5.0), 6, rng())

    def test_min_dimension(self):
        with pytest.raises(BasisError):
            build_thin_plate(np.arange(9.0), 2, rng())  # K < d_w + 2

    def test_duplicate_knots_reduce_K(self):
        # two distinct values cannot support 3 distinct knots
        pts = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
        with pytest.warns(UserWarning):
            design = build_thin_plate(pts, 5, rng())
        assert design.K < 5

    def test_multivariate_even_dimension(self):
        # d_w = 2 uses r^2 log r
        pts = rng(1).uniform(size=(60, 2))
        design = build_thin_plate(pts, 8, rng(2))
        assert design.B.shape == (60, 8)
        assert np.linalg.matrix_rank(design.B) == 8


class TestNaturalSpline:
    def test_j2_is_linear(self):
        x = rng(0).uniform(size=30)
        design = build_natural_spline(x, 2)
        # basis spans {1, x}: fitting x exactly
        fitted = project(design, x)
        np.testing.assert_allclose(fitted, x, atol=1e-10)
        assert design.K == 2

    def test_full_rank(self):
        x = rng(5).uniform(size=200)
        design = build_natural_spline(x, 4)
        assert np.linalg.matrix_rank(design.B) == 4

    def test_boundary_continuity(self):
        x = rng(6).uniform(size=100)
        design = build_natural_spline(x, 5)
        # evaluate on a fine mesh spanning the boundary knots; values must be
        # continuous (no jumps beyond mesh-scale variation)
        mesh = np.linspace(x.min() - 0.1, x.max() + 0.1, 4001)
        vals = design.evaluate(mesh)
        jumps = np.abs(np.diff(vals, axis=0)).max()
        assert jumps < 0.05

    def test_too_few_distinct(self):
        with pytest.raises(BasisError):
            build_natural_spline(np.array([1.0, 1.0, 1.0]), 2)

    def test_linearity_beyond_boundary(self):
        # natural spline: second derivative zero outside boundary knots
        x = rng(7).uniform(size=100)
        design = build_natural_spline(x, 4)
        far = np.array([x.min() - 1.0, x.min() - 2.0, x.min() - 3.0])
        vals = design.evaluate(far)
        second_diff = vals[2] - 2 * vals[1] + vals[0]
        np.testing.assert_allclose(second_diff, 0.0, atol=1e-8)


class TestTensorPoly:
    def test_includes_constant_and_linear(self):
        pts = rng(8).uniform(size=(40, 3))
        design = build_tensor_poly(pts, 4)
        np.testing.assert_allclose(design.B[:, 0], 1.0)
        np.testing.assert_allclose(design.B[:, 1:4], pts)


class TestProject:
    def test_saturated_identity(self):
        n = 6
        B = rng(9).standard_normal((n, n))
        from quasibayes.basis import BasisDesign, BasisSpec
        design = BasisDesign.from_matrix(B)
        t = rng(10).standard_normal(n)
        np.testing.assert_allclose(project(design, t), t, atol=1e-8)

    def test_idempotence_on_column_space(self):
        pts = rng(11).uniform(size=30)
        design = build_thin_plate(pts, 5, rng(12))
        t = design.B @ rng(13).standard_normal(5)
        np.testing.assert_allclose(project(design, t), t, atol=1e-10)

    def test_mean_projection(self):
        from quasibayes.basis import BasisDesign
        design = BasisDesign.from_matrix(np.ones((2, 1)))
        np.testing.assert_allclose(project(design, np.array([1.0, 3.0])),
                                   [2.0, 2.0], atol=1e-12)

    def test_nonfinite_rejected(self):
        pts = rng(14).uniform(size=20)
        design = build_thin_plate(pts, 4, rng(15))
        with pytest.raises(ValueError):
            project(design, np.full(20, np.nan))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_idempotence_and_orthogonality(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(8, 30))
        K = int(r.integers(3, min(6, n - 2) + 1))
        pts = r.uniform(size=n)
        design = build_thin_plate(pts, K, r)
        t = r.standard_normal(n)
        fitted = project(design, t)
        np.testing.assert_allclose(project(design, fitted), fitted, atol=1e-10)
        assert np.max(np.abs(design.B.T @ (t - fitted))) < 1e-8

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_matches_normal_equations(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(10, 21))
        K = int(r.integers(3, 6))
        pts = r.uniform(size=n)
        design = build_thin_plate(pts, K, r)
        t = r.standard_normal(n)
        B = design.B
        brute = B @ np.linalg.solve(B.T @ B, B.T @ t)
        np.testing.assert_allclose(project(design, t), brute, atol=1e-8)
