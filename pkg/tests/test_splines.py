"""B-spline bases, difference penalties and quadrature weights."""
from __future__ import annotations

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from funmed.errors import DomainError, InputError
from funmed.splines import (BasisSpec, TimeGrid, bspline_basis, difference_penalty,
                            evaluate_curve, knot_vector, trapezoid_weights)


class TestBasisSpec:
    def test_defaults(self):
        spec = BasisSpec()
        assert (spec.degree, spec.interior_knots, spec.penalty_order) == (3, 20, 1)
        assert spec.num_basis == 24

    @pytest.mark.parametrize("kw", [{"degree": 0}, {"interior_knots": -1},
                                    {"penalty_order": 3}, {"penalty_order": 0}])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            BasisSpec(**kw)


class TestTimeGrid:
    def test_regular(self):
        g = TimeGrid.regular(0.0, 2.0, 5)
        npt.assert_allclose(g.points, [0, 0.5, 1, 1.5, 2])
        assert g.width == 2.0 and len(g) == 5

    def test_not_increasing(self):
        with pytest.raises(InputError):
            TimeGrid(np.array([0.0, 0.5, 0.5]), 0.0, 1.0)

    def test_outside(self):
        with pytest.raises(DomainError):
            TimeGrid(np.array([0.0, 1.5]), 0.0, 1.0)

    def test_degenerate_interval(self):
        with pytest.raises(InputError):
            TimeGrid(np.array([0.0]), 1.0, 1.0)


class TestBsplineBasis:
    def test_cubic_no_interior_knots_at_left_end(self):
        row = bspline_basis(BasisSpec(3, 0), [0.0], 0.0, 1.0).values[0]
        npt.assert_array_equal(row, [1.0, 0.0, 0.0, 0.0])

    def test_linear_hat_functions(self):
        row = bspline_basis(BasisSpec(1, 1), [0.25], 0.0, 1.0).values[0]
        npt.assert_allclose(row, [0.5, 0.5, 0.0], atol=1e-15)

    def test_right_end_activates_last_function(self):
        row = bspline_basis(BasisSpec(3, 4), [1.0], 0.0, 1.0).values[0]
        npt.assert_allclose(row, np.eye(8)[-1], atol=1e-15)

    def test_column_count_and_knots(self):
        spec = BasisSpec(2, 5)
        kv = knot_vector(spec, 0.0, 3.0)
        assert kv.size == spec.num_basis + spec.degree + 1
        npt.assert_allclose(kv[2:-2], np.linspace(0, 3, 7))
        assert bspline_basis(spec, [0.1, 2.9], 0.0, 3.0).values.shape == (2, 8)

    @pytest.mark.parametrize("degree,knots", [(1, 3), (2, 7), (3, 20), (5, 4)])
    def test_matches_scipy(self, degree, knots):
        spec = BasisSpec(degree, knots)
        x = np.linspace(-1.0, 2.0, 301)
        ours = bspline_basis(spec, x, -1.0, 2.0).values
        ref = BSpline.design_matrix(x, knot_vector(spec, -1.0, 2.0), degree).toarray()
        npt.assert_allclose(ours, ref, atol=1e-13)

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            bspline_basis(BasisSpec(), [0.5, 1.2], 0.0, 1.0)

    def test_degenerate_interval(self):
        with pytest.raises(InputError):
            bspline_basis(BasisSpec(), [0.5], 1.0, 1.0)

    def test_round_off_at_ends_is_clipped(self):
        B = bspline_basis(BasisSpec(), [-1e-13, 1 + 1e-13], 0.0, 1.0).values
        npt.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)

    def test_deterministic(self):
        x = np.random.default_rng(1).uniform(0, 1, 500)
        a = bspline_basis(BasisSpec(), x, 0.0, 1.0).values
        b = bspline_basis(BasisSpec(), x, 0.0, 1.0).values
        assert np.array_equal(a, b)

    @settings(max_examples=60, deadline=None)
    @given(degree=st.integers(1, 5), knots=st.integers(0, 25),
           lo=st.floats(-100, 100), width=st.floats(1e-3, 1e3),
           u=st.lists(st.floats(0, 1), min_size=1, max_size=40))
    def test_partition_of_unity_and_range(self, degree, knots, lo, width, u):
        hi = lo + width
        x = np.clip(lo + np.asarray(u) * width, lo, hi)
        B = bspline_basis(BasisSpec(degree, knots), x, lo, hi).values
        npt.assert_allclose(B.sum(axis=1), 1.0, atol=1e-10)
        assert B.min() >= -1e-14 and B.max() <= 1 + 1e-14


class TestDifferencePenalty:
    def test_first_order_two_coefficients(self):
        npt.assert_array_equal(difference_penalty(1, 2).values, [[1, -1], [-1, 1]])

    def test_second_order_four_coefficients_rank(self):
        P = difference_penalty(2, 4)
        assert np.linalg.matrix_rank(P.values) == 2
        assert P.order == 2

    @pytest.mark.parametrize("order,k", [(1, 1), (2, 2), (11, 10), (0, 5)])
    def test_invalid_order(self, order, k):
        with pytest.raises(InputError):
            difference_penalty(order, k)

    @pytest.mark.parametrize("order", [1, 2])
    def test_null_space(self, order):
        k = 12
        P = difference_penalty(order, k).values
        const = np.full(k, 3.7)
        assert abs(const @ P @ const) < 1e-12
        lin = np.arange(k, dtype=float)
        form = lin @ P @ lin
        assert (abs(form) < 1e-12) if order == 2 else form > 0.5
        assert np.linalg.matrix_rank(P) == k - order

    @settings(max_examples=50, deadline=None)
    @given(order=st.sampled_from([1, 2]), k=st.integers(3, 30), seed=st.integers(0, 2**31))
    def test_positive_semidefinite(self, order, k, seed):
        c = np.random.default_rng(seed).normal(size=k)
        P = difference_penalty(order, k).values
        npt.assert_allclose(P, P.T)
        assert c @ P @ c >= -1e-12
        D = np.diff(np.eye(k), n=order, axis=0)
        npt.assert_allclose(c @ P @ c, np.sum((D @ c) ** 2), rtol=1e-10, atol=1e-12)


class TestEvaluateCurve:
    def test_zero_and_constant(self):
        basis = bspline_basis(BasisSpec(), np.linspace(0, 1, 50), 0.0, 1.0)
        npt.assert_array_equal(evaluate_curve(np.zeros(24), basis), 0.0)
        npt.assert_allclose(evaluate_curve(np.full(24, -2.5), basis), -2.5, atol=1e-13)

    def test_linear_function_reproduced(self):
        t = np.linspace(0, 1, 200)
        basis = bspline_basis(BasisSpec(3, 5), t, 0.0, 1.0)
        coef, *_ = np.linalg.lstsq(basis.values, t, rcond=None)
        assert np.max(np.abs(evaluate_curve(coef, basis) - t)) < 1e-8

    def test_dimension_mismatch(self):
        basis = bspline_basis(BasisSpec(), [0.5], 0.0, 1.0)
        with pytest.raises(InputError):
            evaluate_curve(np.ones(5), basis)


class TestTrapezoidWeights:
    def test_uniform(self):
        npt.assert_allclose(trapezoid_weights(np.linspace(0, 1, 5)),
                            [0.125, 0.25, 0.25, 0.25, 0.125])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=30, unique=True),
           st.floats(-3, 3), st.floats(-3, 3))
    def test_exact_for_linear(self, pts, a, b):
        t = np.sort(np.asarray(pts))
        w = trapezoid_weights(t)
        exact = a * (t[-1] - t[0]) + b * (t[-1] ** 2 - t[0] ** 2) / 2
        npt.assert_allclose(np.sum(w * (a + b * t)), exact, rtol=1e-9, atol=1e-9)
        npt.assert_allclose(np.sum(w * (a + b * t)), np.trapezoid(a + b * t, t), rtol=1e-12,
                            atol=1e-9)
