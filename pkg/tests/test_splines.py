import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kandos.errors import ConfigError, ShapeError
from kandos.splines import basis_eval, basis_eval_deriv, basis_values, basis_values_and_derivs, make_grid, spline_eval
from oracles import recursive_basis

DEFAULT = make_grid(-3.0, 3.0, 5, 3)


def test_default_grid_knots():
    g = DEFAULT
    assert g.n_basis == 8
    assert len(g.knots) == 12
    np.testing.assert_allclose(np.diff(g.knots), 1.2, atol=1e-12)
    np.testing.assert_allclose(g.knots[[0, -1]], [-6.6, 6.6], atol=1e-12)
    assert g.knots[3] == -3.0 and g.knots[8] == 3.0


def test_single_interval_degree_zero_grid():
    g = make_grid(0, 1, 1, 0)
    np.testing.assert_array_equal(g.knots, [0.0, 1.0])
    assert g.n_basis == 1


def test_counts_follow_formulas():
    g = make_grid(-1, 1, 4, 2)
    assert g.n_basis == 6
    assert len(g.knots) == 9


@pytest.mark.parametrize("lo, hi, n, k", [(1, 1, 5, 3), (2, 1, 5, 3), (0, 1, 0, 3), (0, 1, 2, -1)])
def test_make_grid_rejects_bad_arguments(lo, hi, n, k):
    with pytest.raises(ConfigError):
        make_grid(lo, hi, n, k)


def test_degree_zero_indicator():
    g = make_grid(0, 2, 2, 0)
    np.testing.assert_array_equal(basis_eval(g, 0.5), [1.0, 0.0])
    # right end of the range belongs to the last interval
    np.testing.assert_array_equal(basis_eval(g, 2.0), [0.0, 1.0])


def test_value_at_zero_matches_recursive_oracle():
    expected = np.array([0, 0, 1, 23, 23, 1, 0, 0]) / 48.0
    np.testing.assert_allclose(recursive_basis(-3, 3, 5, 3, 0.0), expected, atol=1e-14)
    np.testing.assert_allclose(basis_eval(DEFAULT, 0.0), expected, atol=1e-14)


@pytest.mark.parametrize("grid", [(-3, 3, 5, 3), (-1, 2, 4, 2), (0, 1, 3, 1), (-2, 2, 7, 4)])
def test_iterative_matches_recursive_on_random_points(grid):
    g = make_grid(*grid)
    rng = np.random.default_rng(11)
    for x in rng.uniform(g.range_min, g.range_max, size=50):
        np.testing.assert_allclose(basis_eval(g, x), recursive_basis(*grid, x), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    x=st.floats(-3.0, 3.0),
    n=st.integers(1, 9),
    k=st.integers(0, 4),
)
def test_partition_nonnegativity_local_support(x, n, k):
    g = make_grid(-3.0, 3.0, n, k)
    b = basis_eval(g, x)
    assert b.shape == (n + k,)
    assert abs(b.sum() - 1.0) <= 1e-9
    assert np.all(b >= 0.0) and np.all(b <= 1.0 + 1e-12)
    nz = np.flatnonzero(b)
    assert len(nz) <= k + 1
    assert np.all(np.diff(nz) == 1)


def test_hat_function_slope():
    g = make_grid(0.0, 4.0, 4, 1)  # knots -1..5, step 1
    d = basis_eval_deriv(g, 1.5)
    # B_2 rises on [1, 2], B_1 falls on [1, 2]
    np.testing.assert_allclose(d[2], 1.0)
    np.testing.assert_allclose(d[1], -1.0)


def test_derivative_sums_to_zero():
    rng = np.random.default_rng(3)
    for x in rng.uniform(-2.99, 2.99, size=100):
        assert abs(basis_eval_deriv(DEFAULT, x).sum()) <= 1e-9


def test_derivative_matches_finite_difference_at_0_7():
    h = 1e-6
    fd = (basis_eval(DEFAULT, 0.7 + h) - basis_eval(DEFAULT, 0.7 - h)) / (2 * h)
    np.testing.assert_allclose(basis_eval_deriv(DEFAULT, 0.7), fd, atol=1e-5)


def test_derivative_zero_outside_range():
    np.testing.assert_array_equal(basis_eval_deriv(DEFAULT, 3.5), np.zeros(8))
    np.testing.assert_array_equal(basis_eval_deriv(DEFAULT, -7.0), np.zeros(8))


def test_vectorised_matches_scalar():
    xs = np.linspace(-4, 4, 37).reshape(37, 1) * np.ones((1, 3))
    B, dB = basis_values_and_derivs(DEFAULT, xs)
    assert B.shape == (37, 3, 8)
    for i in range(37):
        np.testing.assert_array_equal(B[i, 0], basis_eval(DEFAULT, xs[i, 0]))
        np.testing.assert_array_equal(dB[i, 2], basis_eval_deriv(DEFAULT, xs[i, 2]))
    np.testing.assert_array_equal(basis_values(DEFAULT, xs), B)


def test_spline_constant_coefficients():
    assert spline_eval(DEFAULT, np.full(8, 2.0), 0.3) == pytest.approx(2.0, abs=1e-12)


def test_spline_one_hot_picks_basis():
    for j in range(8):
        c = np.zeros(8)
        c[j] = 1.0
        assert spline_eval(DEFAULT, c, -1.1) == pytest.approx(basis_eval(DEFAULT, -1.1)[j], abs=1e-15)


def test_greville_coefficients_reproduce_identity():
    xs = np.linspace(-3, 3, 100)
    np.testing.assert_allclose(spline_eval(DEFAULT, DEFAULT.greville(), xs), xs, atol=1e-9)


def test_clamping_is_exact():
    c = np.random.default_rng(0).normal(size=8)
    at_edge = spline_eval(DEFAULT, c, 3.0)
    for x in (3.0000001, 4.0, 1e6):
        assert spline_eval(DEFAULT, c, x) == at_edge
    assert spline_eval(DEFAULT, c, -50.0) == spline_eval(DEFAULT, c, -3.0)


def test_spline_length_mismatch():
    with pytest.raises(ShapeError):
        spline_eval(DEFAULT, np.ones(7), 0.0)
