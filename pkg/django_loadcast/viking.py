"""
Joint tracking of the state and of the log-variances of a state-space model:

    a_t = a_{t-1} + N(0, rho_a)       observation log-variance
    b_t = b_{t-1} + N(0, rho_b)       process log-variance, Q_t = exp(b_t) I

with factorized Gaussian beliefs N(theta, P), N(a_hat, s), N(b_hat, Sigma).
Each scalar belief is refreshed with a Laplace approximation found by damped
Newton iterations.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import (
    DimensionMismatch, InvalidHyperparameter, NewtonDiverged, NonFiniteInput,
)
from .kalman import chronological_batches, elapsed_steps, measurement_update
from .timeseries import to_utc


logger = logging.getLogger(__name__)


DEFAULT_RHO = 1e-5
DEFAULT_PRIOR_VARIANCE = 0.1
DEFAULT_ITERS = 2
MIN_PROCESS_VARIANCE = 1e-12
NEWTON_ITERATIONS = 50
MAX_HALVINGS = 40


@dataclass
class VikingState:
    theta: np.ndarray
    P: np.ndarray
    a_hat: float
    s: float
    b_hat: float
    Sigma: float
    rho_a: float = DEFAULT_RHO
    rho_b: float = DEFAULT_RHO
    last_timestamp: pd.Timestamp = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        d = len(self.theta)
        if self.P.shape != (d, d):
            raise DimensionMismatch(f'State of dimension {d} with P {self.P.shape}')

    @property
    def dimension(self):
        return len(self.theta)

    def to_dict(self):
        return {
            'theta': self.theta.tolist(),
            'P': self.P.tolist(),
            'a_hat': self.a_hat,
            's': self.s,
            'b_hat': self.b_hat,
            'Sigma': self.Sigma,
            'rho_a': self.rho_a,
            'rho_b': self.rho_b,
            'last_timestamp': self.last_timestamp.isoformat() if self.last_timestamp is not None else None,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['last_timestamp'] = to_utc(data['last_timestamp']) if data.get('last_timestamp') else None
        return cls(**data)


def init_viking(theta, P, sigma2, q, rho_a=DEFAULT_RHO, rho_b=DEFAULT_RHO,
                s0=DEFAULT_PRIOR_VARIANCE, Sigma0=DEFAULT_PRIOR_VARIANCE):
    """
    Start from a Kalman initialisation (theta, P, sigma2, Q = q I).
    """
    theta = np.asarray(theta, dtype=float)
    q = np.asarray(q, dtype=float)
    if q.ndim == 2:
        if not np.allclose(q, q[0, 0] * np.eye(len(q))):
            raise InvalidHyperparameter('Process noise must be proportional to the identity')
        q = q[0, 0]
    elif q.ndim == 1:
        if not np.allclose(q, q[0]):
            raise InvalidHyperparameter('Process noise must be proportional to the identity')
        q = q[0]
    q = float(q)
    if sigma2 <= 0:
        raise InvalidHyperparameter(f'Observation variance must be positive, got {sigma2}')
    if q < 0:
        raise InvalidHyperparameter(f'Process variance must be non-negative, got {q}')
    for name, value in (('rho_a', rho_a), ('rho_b', rho_b), ('s0', s0), ('Sigma0', Sigma0)):
        if value < 0 or not np.isfinite(value):
            raise InvalidHyperparameter(f'{name} must be a non-negative number, got {value}')
    return VikingState(
        theta=theta,
        P=np.asarray(P, dtype=float),
        a_hat=float(np.log(sigma2)),
        s=float(s0),
        b_hat=float(np.log(max(q, MIN_PROCESS_VARIANCE))),
        Sigma=float(Sigma0),
        rho_a=float(rho_a),
        rho_b=float(rho_b),
    )


def _laplace_objective(z, prior_mean, prior_variance, scale, weight):
    return (
        -0.5 * (weight * z + scale * np.exp(-z))
        - (z - prior_mean) ** 2 / (2 * prior_variance)
    )


def laplace_update(prior_mean, prior_variance, scale, weight):
    """
    Mode and inverse negative curvature of
        g(z) = -(weight z + scale exp(-z)) / 2 - (z - prior_mean)^2 / (2 prior_variance)
    for arrays of independent problems. A zero prior variance freezes the belief.
    """
    prior_mean = np.asarray(prior_mean, dtype=float)
    prior_variance = np.asarray(prior_variance, dtype=float)
    scale = np.asarray(scale, dtype=float)
    weight = np.broadcast_to(np.asarray(weight, dtype=float), prior_mean.shape)
    mean = prior_mean.copy()
    variance = prior_variance.copy()
    active = prior_variance > 0
    if not active.any():
        return mean, variance
    mu, v, c, w = prior_mean[active], prior_variance[active], scale[active], weight[active]
    z = mu.copy()
    with np.errstate(over='ignore', invalid='ignore'):
        for _ in range(NEWTON_ITERATIONS):
            grad = -0.5 * (w - c * np.exp(-z)) - (z - mu) / v
            curvature = -0.5 * c * np.exp(-z) - 1 / v
            step = -grad / curvature
            current = _laplace_objective(z, mu, v, c, w)
            candidate = z + step
            for _ in range(MAX_HALVINGS):
                worse = ~(_laplace_objective(candidate, mu, v, c, w) >= current)
                if not worse.any():
                    break
                step = np.where(worse, step / 2, step)
                candidate = z + step
            if not np.isfinite(candidate).all():
                raise NewtonDiverged('Non-finite Newton iterate in variance update')
            z = candidate
            if (np.abs(step) <= 1e-10 * (1 + np.abs(z))).all():
                break
        else:
            raise NewtonDiverged(f'Variance update did not converge in {NEWTON_ITERATIONS} iterations')
        curvature = -0.5 * c * np.exp(-z) - 1 / v
    mean[active] = z
    variance[active] = -1 / curvature
    return mean, variance


class VikingBank:
    """
    Independent VIKING states indexed by hour of the day.
    """
    setting = 'viking'

    def __init__(self, states, iters=DEFAULT_ITERS):
        states = list(states)
        if iters < 1:
            raise InvalidHyperparameter('iters must be at least 1')
        self.iters = iters
        self.dimension = states[0].dimension
        self.theta = np.array([state.theta for state in states])
        self.P = np.array([state.P for state in states])
        self.a_hat = np.array([state.a_hat for state in states], dtype=float)
        self.s = np.array([state.s for state in states], dtype=float)
        self.b_hat = np.array([state.b_hat for state in states], dtype=float)
        self.Sigma = np.array([state.Sigma for state in states], dtype=float)
        self.rho_a = np.array([state.rho_a for state in states], dtype=float)
        self.rho_b = np.array([state.rho_b for state in states], dtype=float)
        self.last_timestamp = [state.last_timestamp for state in states]

    def __len__(self):
        return len(self.theta)

    def predict(self, hours, X, timestamps=None):
        hours = np.asarray(hours)
        X = np.asarray(X, dtype=float)
        valid = np.isfinite(X).all(axis=1)
        Xv = np.where(valid[:, None], X, 0.0)
        s_pred = self.s[hours] + self.rho_a[hours]
        Sigma_pred = self.Sigma[hours] + self.rho_b[hours]
        process = np.exp(self.b_hat[hours] + Sigma_pred / 2) * elapsed_steps(self.last_timestamp, hours, timestamps)
        mean = np.einsum('bi,bi->b', self.theta[hours], Xv)
        variance = (
            np.einsum('bi,bij,bj->b', Xv, self.P[hours], Xv)
            + process * np.einsum('bi,bi->b', Xv, Xv)
            + np.exp(self.a_hat[hours] + s_pred / 2)
        )
        return np.where(valid, mean, np.nan), np.where(valid, variance, np.nan)

    def step(self, hours, X, y, timestamps):
        """
        One observation per listed hour; rows with non-finite X or y are skipped.
        Returns the predictive mean and variance computed before the update.
        """
        hours = np.asarray(hours)
        if len(np.unique(hours)) != len(hours):
            raise ValueError('A bank step processes at most one observation per hour')
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        mean, variance = self.predict(hours, X, timestamps)
        valid = np.isfinite(X).all(axis=1) & np.isfinite(y)
        mean[~valid] = np.nan
        variance[~valid] = np.nan
        if not valid.any():
            return mean, variance
        h = hours[valid]
        x = X[valid]
        obs = y[valid]
        times_v = [t for t, flag in zip(timestamps, valid) if flag]
        steps = elapsed_steps(self.last_timestamp, h, times_v)[:, None, None]
        d = self.dimension
        eye = np.eye(d)[None]
        theta_prev = self.theta[h]
        P_prev = self.P[h]
        a_pred, s_pred = self.a_hat[h], self.s[h] + self.rho_a[h]
        b_pred, Sigma_pred = self.b_hat[h], self.Sigma[h] + self.rho_b[h]
        a_hat, s, b_hat, Sigma = a_pred, s_pred, b_pred, Sigma_pred

        def theta_step(a_hat, s, b_hat, Sigma):
            noise = np.exp(a_hat - s / 2)
            prior = P_prev + steps * np.exp(b_hat + Sigma / 2)[:, None, None] * eye
            theta, P, _, _ = measurement_update(theta_prev, prior, x, obs, noise)
            return theta, P

        with np.errstate(over='ignore'):
            for _ in range(self.iters):
                theta, P = theta_step(a_hat, s, b_hat, Sigma)
                residual = obs - np.einsum('bi,bi->b', theta, x)
                M = residual ** 2 + np.einsum('bi,bij,bj->b', x, P, x)
                a_hat, s = laplace_update(a_pred, s_pred, M, 1.0)
                W = (
                    np.sum((theta - theta_prev) ** 2, axis=1)
                    + np.trace(P, axis1=1, axis2=2)
                    + np.trace(P_prev, axis1=1, axis2=2)
                )
                b_hat, Sigma = laplace_update(b_pred, Sigma_pred, W, float(d))
            theta, P = theta_step(a_hat, s, b_hat, Sigma)
        if not (np.isfinite(theta).all() and np.isfinite(P).all()):
            raise NonFiniteInput('Non-finite state after variance-tracking update')
        self.theta[h] = theta
        self.P[h] = P
        self.a_hat[h] = a_hat
        self.s[h] = s
        self.b_hat[h] = b_hat
        self.Sigma[h] = Sigma
        for hour, t in zip(h, times_v):
            self.last_timestamp[hour] = to_utc(t) if t is not None else None
        return mean, variance

    def update(self, hours, X, y, timestamps):
        for batch in chronological_batches(hours, timestamps):
            self.step(np.asarray(hours)[batch], np.asarray(X)[batch], np.asarray(y)[batch],
                      [timestamps[row] for row in batch])

    def state(self, hour):
        return VikingState(
            theta=self.theta[hour].copy(),
            P=self.P[hour].copy(),
            a_hat=float(self.a_hat[hour]),
            s=float(self.s[hour]),
            b_hat=float(self.b_hat[hour]),
            Sigma=float(self.Sigma[hour]),
            rho_a=float(self.rho_a[hour]),
            rho_b=float(self.rho_b[hour]),
            last_timestamp=self.last_timestamp[hour],
        )

    def states(self):
        return [self.state(hour) for hour in range(len(self))]

    def to_dict(self):
        return {'kind': 'viking', 'iters': self.iters, 'states': [state.to_dict() for state in self.states()]}

    @classmethod
    def from_dict(cls, data):
        return cls([VikingState.from_dict(state) for state in data['states']], iters=data['iters'])


def viking_step(state, x, y, iters=DEFAULT_ITERS, t=None):
    """
    Returns (new state, predictive mean, predictive variance).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dimension,):
        raise DimensionMismatch(f'Features of shape {x.shape} for a state of dimension {state.dimension}')
    if not np.isfinite(x).all() or not np.isfinite(y):
        raise NonFiniteInput('Non-finite features or observation')
    bank = VikingBank([state], iters=iters)
    mean, variance = bank.step(np.array([0]), x[None], np.array([float(y)]), [t])
    return bank.state(0), float(mean[0]), float(variance[0])
