"""Spline basis tests, checked against a naive term-by-term recursion."""

import numpy as np
import pytest

from kcm import SplineBasis


def naive_basis(x, k, i, t):
    """Brute-force Cox-de Boor recursion, independent of the library code."""
    if k == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left_den = t[i + k] - t[i]
    right_den = t[i + k + 1] - t[i + 1]
    left = 0.0 if left_den == 0.0 else (x - t[i]) / left_den * naive_basis(x, k - 1, i, t)
    right = 0.0 if right_den == 0.0 else (
        (t[i + k + 1] - x) / right_den * naive_basis(x, k - 1, i + 1, t)
    )
    return left + right


def test_knot_vector_layout():
    basis = SplineBasis(order=3, num_intervals=5, lo=-1.0, hi=1.0)
    assert basis.knots.shape == (5 + 2 * 3 + 1,)
    assert np.all(np.diff(basis.knots) > 0)
    assert basis.size == 8
    # interior knots span exactly [lo, hi]
    assert basis.knots[basis.order] == -1.0
    assert basis.knots[basis.order + basis.num_intervals] == 1.0


def test_order_one_single_interval_partition_of_unity():
    basis = SplineBasis(order=1, num_intervals=1, lo=0.0, hi=1.0)
    values = basis.evaluate(0.0)
    assert values.shape == (2,)
    assert values.sum() == pytest.approx(1.0, abs=1e-12)


def test_matches_naive_recursion_term_by_term():
    basis = SplineBasis(order=3, num_intervals=5, lo=-1.0, hi=1.0)
    values = basis.evaluate(0.37)
    expected = [naive_basis(0.37, 3, i, basis.knots) for i in range(basis.size)]
    np.testing.assert_allclose(values, expected, atol=1e-12)


def test_matches_naive_recursion_many_points():
    rng = np.random.default_rng(7)
    for _ in range(25):
        k = int(rng.integers(1, 5))
        g = int(rng.integers(1, 8))
        basis = SplineBasis(order=k, num_intervals=g, lo=-2.0, hi=1.5)
        x = float(rng.uniform(-2.0, 1.5))
        expected = [naive_basis(x, k, i, basis.knots) for i in range(basis.size)]
        np.testing.assert_allclose(basis.evaluate(x), expected, atol=1e-12)


def test_right_endpoint_is_finite_and_sums_to_one():
    for k in (1, 2, 3, 4):
        basis = SplineBasis(order=k, num_intervals=4, lo=-1.0, hi=1.0)
        for x in (basis.lo, basis.hi):
            values = basis.evaluate(x)
            assert np.all(np.isfinite(values))
            assert values.sum() == pytest.approx(1.0, abs=1e-12)


def test_partition_of_unity_random_pairs():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        k = int(rng.integers(1, 5))
        g = int(rng.integers(1, 10))
        lo = float(rng.uniform(-3, 0))
        hi = lo + float(rng.uniform(0.5, 4.0))
        basis = SplineBasis(order=k, num_intervals=g, lo=lo, hi=hi)
        x = float(rng.uniform(lo, hi))
        values = basis.evaluate(x)
        assert np.all(values >= 0.0)
        assert abs(values.sum() - 1.0) <= 1e-12


def test_local_support():
    basis = SplineBasis(order=3, num_intervals=6, lo=-1.0, hi=1.0)
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = float(rng.uniform(-0.999, 0.999))
        assert np.count_nonzero(basis.evaluate(x)) <= basis.order + 1


def test_out_of_range_clamps():
    basis = SplineBasis(order=3, num_intervals=5)
    np.testing.assert_array_equal(basis.evaluate(17.0), basis.evaluate(basis.hi))
    np.testing.assert_array_equal(basis.evaluate(-17.0), basis.evaluate(basis.lo))


def test_rejects_non_finite():
    basis = SplineBasis(order=2, num_intervals=3)
    for bad in (np.nan, np.inf, -np.inf):
        with pytest.raises(ValueError):
            basis.evaluate(bad)
        with pytest.raises(ValueError):
            basis.derivatives(bad)


def test_batched_evaluation_matches_scalar():
    basis = SplineBasis(order=3, num_intervals=5)
    xs = np.linspace(-1, 1, 11)
    batch = basis.evaluate(xs)
    assert batch.shape == (11, basis.size)
    for i, x in enumerate(xs):
        np.testing.assert_array_equal(batch[i], basis.evaluate(float(x)))


def test_derivatives_match_finite_differences():
    basis = SplineBasis(order=3, num_intervals=5, lo=-1.0, hi=1.0)
    rng = np.random.default_rng(11)
    h = 1e-6
    for _ in range(50):
        x = float(rng.uniform(-0.99, 0.99))
        numeric = (basis.evaluate(x + h) - basis.evaluate(x - h)) / (2 * h)
        np.testing.assert_allclose(basis.derivatives(x), numeric, atol=1e-6)


def test_derivatives_sum_to_zero_inside():
    basis = SplineBasis(order=4, num_intervals=7, lo=0.0, hi=2.0)
    for x in np.linspace(0.05, 1.95, 9):
        assert basis.derivatives(float(x)).sum() == pytest.approx(0.0, abs=1e-10)


def test_invalid_construction():
    with pytest.raises(ValueError):
        SplineBasis(order=0, num_intervals=5)
    with pytest.raises(ValueError):
        SplineBasis(order=3, num_intervals=0)
    with pytest.raises(ValueError):
        SplineBasis(order=3, num_intervals=5, lo=1.0, hi=-1.0)
