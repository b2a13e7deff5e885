import numpy as np
import pytest

from .splines import (
    CubicBSplineBasis, CyclicBSplineBasis, Smooth, fit_penalized,
)


def test_cyclic_basis_partition_of_unity():
    basis = CyclicBSplineBasis(10)
    values = basis(np.linspace(0, 1, 101))
    np.testing.assert_allclose(values.sum(axis=1), 1.0)


def test_cyclic_smooth_is_periodic():
    basis = CyclicBSplineBasis(10)
    smooth = Smooth(basis, np.random.default_rng(0).normal(size=10))
    assert abs(smooth(np.array([0.0]))[0] - smooth(np.array([1.0]))[0]) < 1e-10
    epsilon = 1e-6
    left = (smooth(np.array([epsilon])) - smooth(np.array([0.0])))[0] / epsilon
    right = (smooth(np.array([1.0])) - smooth(np.array([1 - epsilon])))[0] / epsilon
    assert left == pytest.approx(right, abs=1e-3)


def test_cubic_basis_extends_linearly():
    basis = CubicBSplineBasis.from_data(np.linspace(0, 10, 200), n_interior=5)
    smooth = Smooth(basis, np.random.default_rng(1).normal(size=basis.size))
    outside = smooth(np.array([12.0, 14.0, 16.0]))
    assert outside[1] - outside[0] == pytest.approx(outside[2] - outside[1])
    assert np.all(np.diff(basis.interior) > 0)


def test_penalty_vanishes_on_linear_functions():
    basis = CubicBSplineBasis(np.array([2.0, 4.0, 6.0]), 0.0, 10.0)
    x = np.linspace(0, 10, 50)
    coef = np.linalg.lstsq(basis(x), 3 * x + 1, rcond=None)[0]
    assert coef @ basis.penalty() @ coef == pytest.approx(0.0, abs=1e-8)


def test_additive_sinusoid_is_recovered():
    rng = np.random.default_rng(2)
    toy = rng.uniform(0, 1, size=1500)
    truth = 50 * np.sin(2 * np.pi * toy)
    y = 200 + truth + rng.normal(0, 5, size=len(toy))
    fit, smooths = fit_penalized(np.ones((len(toy), 1)), [CyclicBSplineBasis(10)], [toy], y)
    grid = np.linspace(0, 1, 200)
    correlation = np.corrcoef(smooths[0](grid), 50 * np.sin(2 * np.pi * grid))[0, 1]
    assert correlation > 0.99
    assert fit.coef[0] == pytest.approx(200, abs=3)


def test_infinite_penalty_leaves_null_space():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 10, size=500)
    y = 2 * x + np.sin(x) + rng.normal(0, 0.1, size=500)
    basis = CubicBSplineBasis.from_data(x)
    _, smooths = fit_penalized(np.ones((500, 1)), [basis], [x], y, lambdas=[1e10])
    values = smooths[0](np.linspace(1, 9, 9))
    second_differences = np.diff(values, n=2)
    np.testing.assert_allclose(second_differences, 0, atol=1e-3)
