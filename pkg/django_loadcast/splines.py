"""
Penalized cubic B-spline smooths and their smoothing-parameter selection by
generalized cross-validation.
"""
import itertools
import logging

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from .errors import SingularDesign


logger = logging.getLogger(__name__)


DEGREE = 3
DEFAULT_LAMBDA_GRID = tuple(10.0 ** k for k in range(-4, 5))
GAUSS_NODES = np.array([-1, 1]) / np.sqrt(3)


def _gauss_points(breaks):
    """
    Two-point Gauss-Legendre nodes and weights on each interval of `breaks`.
    Exact for the piecewise quadratic squared second derivative of a cubic spline.
    """
    left, right = breaks[:-1], breaks[1:]
    half = (right - left) / 2
    middle = (right + left) / 2
    points = (middle[:, None] + half[:, None] * GAUSS_NODES[None, :]).ravel()
    weights = np.repeat(half, 2)
    return points, weights


class CyclicBSplineBasis:
    """
    Periodic cubic B-splines on [0, 1] with `n_basis` equally spaced knots.
    """
    kind = 'cyclic'

    def __init__(self, n_basis=10):
        if n_basis < 4:
            raise ValueError('A cyclic cubic basis needs at least 4 functions')
        self.n_basis = n_basis
        self.knots = np.arange(-DEGREE, n_basis + DEGREE + 1) / n_basis

    @property
    def size(self):
        return self.n_basis

    def _wrap(self, raw):
        out = raw[:, :self.n_basis].copy()
        out[:, :DEGREE] += raw[:, self.n_basis:]
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        x = np.where((x < 0) | (x > 1), np.mod(x, 1), x)
        raw = BSpline.design_matrix(x, self.knots, DEGREE).toarray()
        return self._wrap(raw)

    def penalty(self):
        points, weights = _gauss_points(np.linspace(0, 1, self.n_basis + 1))
        raw = BSpline(self.knots, np.eye(self.n_basis + DEGREE), DEGREE).derivative(2)(points)
        second = self._wrap(raw)
        return second.T @ (weights[:, None] * second)

    def to_dict(self):
        return {'kind': self.kind, 'n_basis': self.n_basis}


class CubicBSplineBasis:
    """
    Cubic B-splines between the boundary knots, extended linearly outside them.
    """
    kind = 'cubic'

    def __init__(self, interior, lower, upper):
        interior = np.unique(np.asarray(interior, dtype=float))
        interior = interior[(interior > lower) & (interior < upper)]
        if not lower < upper:
            raise SingularDesign('Cubic spline needs a covariate with a non-degenerate range')
        self.interior = interior
        self.lower = float(lower)
        self.upper = float(upper)
        self.knots = np.r_[[lower] * (DEGREE + 1), interior, [upper] * (DEGREE + 1)]
        self._spline = BSpline(self.knots, np.eye(self.size), DEGREE)

    @classmethod
    def from_data(cls, x, n_interior=5):
        x = np.asarray(x, dtype=float)
        x = x[np.isfinite(x)]
        if len(x) == 0:
            raise SingularDesign('No finite values to place spline knots')
        quantiles = np.linspace(0, 1, n_interior + 2)[1:-1]
        return cls(np.quantile(x, quantiles), x.min(), x.max())

    @property
    def size(self):
        return len(self.knots) - DEGREE - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.clip(x, self.lower, self.upper)
        out = BSpline.design_matrix(inside, self.knots, DEGREE).toarray()
        below = np.minimum(x - self.lower, 0)
        above = np.maximum(x - self.upper, 0)
        slopes = self._spline.derivative(1)(np.array([self.lower, self.upper]))
        return out + below[:, None] * slopes[0][None, :] + above[:, None] * slopes[1][None, :]

    def penalty(self):
        points, weights = _gauss_points(np.r_[self.lower, self.interior, self.upper])
        second = self._spline.derivative(2)(points)
        return second.T @ (weights[:, None] * second)

    def to_dict(self):
        return {
            'kind': self.kind,
            'interior': self.interior.tolist(),
            'lower': self.lower,
            'upper': self.upper,
        }


def basis_from_dict(data):
    if data['kind'] == CyclicBSplineBasis.kind:
        return CyclicBSplineBasis(data['n_basis'])
    return CubicBSplineBasis(data['interior'], data['lower'], data['upper'])


def sum_to_zero(design):
    """
    Null space Z of the constraint 1' B beta = 0 so that B Z is centred over the training rows.
    """
    constraint = design.sum(axis=0)[:, None]
    q, _ = linalg.qr(constraint, mode='full')
    return q[:, 1:]


class Smooth:
    """
    A fitted smooth effect f(x) = basis(x) @ coef.
    """
    def __init__(self, basis, coef):
        self.basis = basis
        self.coef = np.asarray(coef, dtype=float)

    def __call__(self, x):
        return self.basis(x) @ self.coef

    def to_dict(self):
        return {'basis': self.basis.to_dict(), 'coef': self.coef.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(basis_from_dict(data['basis']), data['coef'])


class PenalizedFit:
    def __init__(self, coef, lambdas, gcv, edf):
        self.coef = coef
        self.lambdas = lambdas
        self.gcv = gcv
        self.edf = edf


def fit_penalized(parametric, bases, covariates, y, lambda_grid=DEFAULT_LAMBDA_GRID, lambdas=None):
    """
    Penalized least squares of y on [parametric, centred smooths]. Smoothing
    parameters are searched jointly over `lambda_grid` by GCV unless fixed `lambdas`
    are given. Penalties are rescaled to the size of their design block.
    Returns (PenalizedFit, list of Smooth).
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    blocks = [np.asarray(parametric, dtype=float)]
    penalties = []
    constraints = []
    for basis, x in zip(bases, covariates):
        raw = basis(x)
        Z = sum_to_zero(raw)
        block = raw @ Z
        S = Z.T @ basis.penalty() @ Z
        scale = np.trace(block.T @ block) / max(np.trace(S), np.finfo(float).tiny)
        blocks.append(block)
        penalties.append(scale * S)
        constraints.append(Z)
    X = np.hstack(blocks)
    XtX = X.T @ X
    Xty = X.T @ y
    yty = y @ y
    width = X.shape[1]

    embedded = []
    offset = blocks[0].shape[1]
    for S in penalties:
        full = np.zeros((width, width))
        size = S.shape[0]
        full[offset:offset + size, offset:offset + size] = S
        embedded.append(full)
        offset += size
    embedded = np.array(embedded) if embedded else np.zeros((0, width, width))

    if lambdas is not None:
        combos = np.array([lambdas], dtype=float)
    else:
        combos = np.array(list(itertools.product(lambda_grid, repeat=len(penalties))), dtype=float)
    systems = XtX[None] + np.einsum('cj,jab->cab', combos, embedded)
    try:
        coefs = np.linalg.solve(systems, np.broadcast_to(Xty, (len(combos), width))[..., None])[..., 0]
        hat = np.linalg.solve(systems, np.broadcast_to(XtX, systems.shape))
    except np.linalg.LinAlgError as e:
        raise SingularDesign('Penalized system is singular') from e
    rss = yty - 2 * coefs @ Xty + np.einsum('ca,ab,cb->c', coefs, XtX, coefs)
    rss = np.maximum(rss, 0)
    edf = np.trace(hat, axis1=1, axis2=2)
    gcv = n * rss / np.maximum(n - edf, 1e-12) ** 2
    best = int(np.argmin(gcv))
    coef = coefs[best]

    smooths = []
    offset = blocks[0].shape[1]
    for basis, Z in zip(bases, constraints):
        size = Z.shape[1]
        smooths.append(Smooth(basis, Z @ coef[offset:offset + size]))
        offset += size
    fit = PenalizedFit(
        coef=coef[:blocks[0].shape[1]],
        lambdas=tuple(combos[best]),
        gcv=float(gcv[best]),
        edf=float(edf[best]),
    )
    return fit, smooths
