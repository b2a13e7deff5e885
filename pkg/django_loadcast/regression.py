import logging

import numpy as np
from scipy import linalg

from .errors import InsufficientHistory, SingularDesign


logger = logging.getLogger(__name__)


RIDGE_PENALTY = 1e-8


def least_squares(X, y, on_singular='raise', context=''):
    """
    Ordinary least squares via scipy.linalg.lstsq.
    Rank deficient designs either raise SingularDesign, use the minimum norm
    solution ('min_norm') or a tiny ridge penalty ('ridge').
    Returns (coefficients, residual sum of squares).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n == 0:
        raise InsufficientHistory(f'No rows to fit {context}'.strip())
    coef, _, rank, _ = linalg.lstsq(X, y, lapack_driver='gelsd')
    if rank < k:
        if on_singular == 'raise' or (rank == 0 and on_singular == 'min_norm'):
            raise SingularDesign(f'Design of rank {rank} < {k} {context}'.strip())
        if on_singular == 'ridge':
            logger.warning('Singular design (rank %d < %d) %s, using ridge fallback', rank, k, context)
            try:
                coef = linalg.solve(
                    X.T @ X + RIDGE_PENALTY * np.eye(k),
                    X.T @ y,
                    assume_a='pos',
                )
            except linalg.LinAlgError:
                logger.warning('Ridge system is not positive definite %s, keeping minimum norm solution', context)
        else:
            logger.debug('Singular design (rank %d < %d) %s, using minimum norm solution', rank, k, context)
    residuals = y - X @ coef
    return coef, float(residuals @ residuals)


def solve_normal_equations(XtX, Xty, context=''):
    """
    Solve XtX @ coef = Xty for a (possibly batched) set of symmetric systems.
    """
    try:
        return np.linalg.solve(XtX, Xty[..., None])[..., 0]
    except np.linalg.LinAlgError as e:
        raise SingularDesign(f'Singular normal equations {context}'.strip()) from e


def bic(rss, n, k):
    """
    n ln(RSS / n) + k ln n, with RSS floored to keep perfect fits comparable.
    """
    rss = max(rss, np.finfo(float).tiny * n)
    return n * np.log(rss / n) + k * np.log(n)
