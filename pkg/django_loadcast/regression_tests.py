import numpy as np
import pytest

from .errors import InsufficientHistory, SingularDesign
from .regression import bic, least_squares


def test_least_squares_matches_normal_equations():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 12))
    y = rng.normal(size=400)
    coef, rss = least_squares(X, y)
    expected = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(coef, expected, atol=1e-8)
    assert rss == pytest.approx(float(np.sum((y - X @ expected) ** 2)))


def test_singular_design_raises():
    X = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(SingularDesign):
        least_squares(X, np.arange(10.0))


@pytest.mark.parametrize('on_singular', ['min_norm', 'ridge'])
def test_singular_design_fallbacks(on_singular):
    X = np.column_stack([np.ones(10), np.ones(10)])
    coef, rss = least_squares(X, np.full(10, 4.0), on_singular=on_singular)
    assert coef.sum() == pytest.approx(4.0)
    assert rss == pytest.approx(0.0, abs=1e-6)


def test_no_rows():
    with pytest.raises(InsufficientHistory):
        least_squares(np.zeros((0, 3)), np.zeros(0))


def test_bic_penalizes_parameters():
    assert bic(10.0, 100, 3) < bic(10.0, 100, 4)
    assert np.isfinite(bic(0.0, 100, 3))
