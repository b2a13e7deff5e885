"""
State-space adaptation of expert coefficients:

    theta_t = theta_{t-1} + N(0, Q_t)
    y_t = theta_t' x_t + N(0, sigma2)


One filter per (expert, hour). KalmanBank stacks the 24 hourly filters of an
expert so that a backtest day updates them in a single batched step. A filter
makes one transition per day, so an observation or forecast d days after the
last processed observation carries d steps of process noise.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

from .errors import (
    ConfigError, DimensionMismatch, InsufficientHistory, InvalidLevel,
    NonFiniteInput, SearchFailed, SingularDesign,
)
from .timeseries import DAY, to_utc


logger = logging.getLogger(__name__)


SETTINGS = ('static', 'static_break', 'dynamic', 'dynamic_break', 'dynamic_big')
BREAK_SETTINGS = ('static_break', 'dynamic_break')
MIN_EXPONENT = -30
BIG_WINDOW_DAYS = 182
SEARCH_TOLERANCE = 1e-6
MIN_SIGMA2 = 1e-12
SEARCH_CHUNK = 1024
SCORE_BLOCK = 32
COARSE_STRIDE = 3


def variance_grid(min_exponent=MIN_EXPONENT, step=1):
    """
    {2^j : min_exponent <= j <= 0}, thinned with `step` (0 is always kept).
    """
    return 2.0 ** np.arange(0, min_exponent - 1, -step)[::-1]


def as_matrix(q, dimension):
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        return q * np.eye(dimension)
    if q.ndim == 1:
        return np.diag(q)
    return q


def _symmetrize(P):
    return (P + np.swapaxes(P, -1, -2)) / 2


def measurement_update(theta, P_prior, X, y, R):
    """
    Batched measurement update (Joseph form).
    theta (B, d), P_prior (B, d, d), X (B, d), y (B,), R (B,).
    Returns (theta, P, predictive mean, predictive variance).
    """
    Px = np.einsum('bij,bj->bi', P_prior, X)
    variance = R + np.einsum('bi,bi->b', X, Px)
    mean = np.einsum('bi,bi->b', theta, X)
    gain = Px / variance[:, None]
    theta = theta + gain * (y - mean)[:, None]
    A = np.eye(X.shape[1])[None] - np.einsum('bi,bj->bij', gain, X)
    P = A @ P_prior @ np.swapaxes(A, 1, 2) + R[:, None, None] * np.einsum('bi,bj->bij', gain, gain)
    return theta, _symmetrize(P), mean, variance


def elapsed_days(last, t):
    """
    Filter transitions between the last processed observation and t: one per day, at least one.
    """
    if last is None or t is None:
        return 1
    return max(1, int(round((to_utc(t) - last) / DAY)))


@dataclass
class KalmanState:
    """
    Filter belief N(theta, P) with observation variance sigma2 and process noise
    Q, plus an optional one-off break_Q that replaces Q at the first processed
    observation at or after break_time.
    """
    theta: np.ndarray
    P: np.ndarray
    sigma2: float
    Q: np.ndarray
    setting: str = 'static'
    break_time: pd.Timestamp = None
    break_Q: np.ndarray = None
    break_done: bool = False
    last_timestamp: pd.Timestamp = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        d = len(self.theta)
        self.P = np.asarray(self.P, dtype=float)
        self.Q = as_matrix(self.Q, d)
        if self.break_Q is not None:
            self.break_Q = as_matrix(self.break_Q, d)
        if self.P.shape != (d, d) or self.Q.shape != (d, d):
            raise DimensionMismatch(f'State of dimension {d} with P {self.P.shape} and Q {self.Q.shape}')

    @property
    def dimension(self):
        return len(self.theta)

    def breaks_at(self, t):
        return (
            self.break_Q is not None
            and not self.break_done
            and t is not None
            and to_utc(t) >= self.break_time
        )

    def process_noise(self, t=None):
        """
        Noise accumulated from the last processed observation up to t.
        """
        first = self.break_Q if self.breaks_at(t) else self.Q
        return first + (elapsed_days(self.last_timestamp, t) - 1) * self.Q

    def copy(self):
        return KalmanState(
            theta=self.theta.copy(),
            P=self.P.copy(),
            sigma2=self.sigma2,
            Q=self.Q.copy(),
            setting=self.setting,
            break_time=self.break_time,
            break_Q=None if self.break_Q is None else self.break_Q.copy(),
            break_done=self.break_done,
            last_timestamp=self.last_timestamp,
            extra=dict(self.extra),
        )

    def to_dict(self):
        return {
            'setting': self.setting,
            'theta': self.theta.tolist(),
            'P': self.P.tolist(),
            'sigma2': self.sigma2,
            'Q': self.Q.tolist(),
            'break_time': self.break_time.isoformat() if self.break_time is not None else None,
            'break_Q': self.break_Q.tolist() if self.break_Q is not None else None,
            'break_done': self.break_done,
            'last_timestamp': self.last_timestamp.isoformat() if self.last_timestamp is not None else None,
            'extra': self.extra,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            theta=np.asarray(data['theta'], dtype=float),
            P=np.asarray(data['P'], dtype=float),
            sigma2=data['sigma2'],
            Q=np.asarray(data['Q'], dtype=float),
            setting=data['setting'],
            break_time=to_utc(data['break_time']) if data['break_time'] else None,
            break_Q=np.asarray(data['break_Q'], dtype=float) if data['break_Q'] is not None else None,
            break_done=data['break_done'],
            last_timestamp=to_utc(data['last_timestamp']) if data['last_timestamp'] else None,
            extra=data.get('extra', {}),
        )


def _check_step_inputs(state, x, y=0.0):
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dimension,):
        raise DimensionMismatch(f'Features of shape {x.shape} for a state of dimension {state.dimension}')
    if not np.isfinite(x).all() or not np.isfinite(y):
        raise NonFiniteInput('Non-finite features or observation')
    return x


def kalman_step(state, x, y, t=None):
    """
    Predict y with the state before the update, then update the state.
    Returns (new state, predictive mean, predictive variance).
    """
    x = _check_step_inputs(state, x, y)
    bank = KalmanBank([state])
    mean, variance = bank.step(np.array([0]), x[None], np.array([float(y)]), [t])
    return bank.state(0), float(mean[0]), float(variance[0])


def predictive(state, x, t=None):
    x = _check_step_inputs(state, x)
    P = state.P + state.process_noise(t)
    return float(state.theta @ x), float(state.sigma2 + x @ P @ x)


def gaussian_quantile(mean, variance, level):
    if not 0 < level < 1:
        raise InvalidLevel(f'Quantile level must lie in (0, 1), got {level}')
    return mean + norm.ppf(level) * np.sqrt(variance)


def forecast_quantile(state, x, level, t=None):
    mean, variance = predictive(state, x, t)
    return float(gaussian_quantile(mean, variance, level))


def chronological_batches(hours, timestamps):
    """
    Split rows into successive batches holding at most one row per hour, each
    batch later in time than the previous one for every hour.
    """
    hours = np.asarray(hours)
    if len(np.unique(hours)) == len(hours):
        return [np.arange(len(hours))] if len(hours) else []
    order = np.argsort(np.asarray([to_utc(t).value for t in timestamps]), kind='stable')
    pending = list(order)
    batches = []
    while pending:
        seen = set()
        batch = []
        rest = []
        for row in pending:
            if hours[row] in seen:
                rest.append(row)
            else:
                seen.add(hours[row])
                batch.append(row)
        batches.append(np.array(batch))
        pending = rest
    return batches


def elapsed_steps(last_timestamps, hours, timestamps):
    """
    elapsed_days of every row (hour, t) of a bank.
    """
    if timestamps is None:
        return np.ones(len(hours))
    return np.array([elapsed_days(last_timestamps[hour], t) for hour, t in zip(hours, timestamps)], dtype=float)


class KalmanBank:
    """
    Independent filters sharing a feature dimension, indexed 0..H-1 (hours of the day).
    """
    def __init__(self, states):
        states = list(states)
        self.dimension = states[0].dimension
        if any(state.dimension != self.dimension for state in states):
            raise DimensionMismatch('All states of a bank must share their dimension')
        self.setting = states[0].setting
        self.theta = np.array([state.theta for state in states])
        self.P = np.array([state.P for state in states])
        self.sigma2 = np.array([float(state.sigma2) for state in states])
        self.Q = np.array([state.Q for state in states])
        has_break = [state.break_Q is not None for state in states]
        self.break_Q = np.array([
            state.break_Q if state.break_Q is not None else np.zeros_like(state.Q) for state in states
        ])
        self.break_time = [state.break_time if flag else None for state, flag in zip(states, has_break)]
        self.break_done = np.array([state.break_done or not flag for state, flag in zip(states, has_break)])
        self.last_timestamp = [state.last_timestamp for state in states]
        self.extra = [dict(state.extra) for state in states]

    def __len__(self):
        return len(self.theta)

    def _breaks(self, hours, timestamps):
        if self.break_done.all():
            return np.zeros(len(hours), dtype=bool)
        return np.array([
            not self.break_done[hour] and t is not None and to_utc(t) >= self.break_time[hour]
            for hour, t in zip(hours, timestamps)
        ], dtype=bool)

    def process_noise(self, hours, timestamps):
        """
        Noise accumulated by each row's filter since its last observation; break_Q replaces Q
        for the first step at or after the break.
        """
        breaks = self._breaks(hours, timestamps)
        steps = elapsed_steps(self.last_timestamp, hours, timestamps)
        Q = self.Q[hours]
        first = np.where(breaks[:, None, None], self.break_Q[hours], Q)
        return first + (steps - 1)[:, None, None] * Q, breaks

    def predict(self, hours, X, timestamps):
        """
        Predictive mean and variance for rows (hours, X), NaN where X is not finite.
        """
        hours = np.asarray(hours)
        Q, _ = self.process_noise(hours, timestamps)
        X = np.asarray(X, dtype=float)
        valid = np.isfinite(X).all(axis=1)
        Xv = np.where(valid[:, None], X, 0.0)
        mean = np.einsum('bi,bi->b', self.theta[hours], Xv)
        variance = self.sigma2[hours] + np.einsum('bi,bij,bj->b', Xv, self.P[hours] + Q, Xv)
        return np.where(valid, mean, np.nan), np.where(valid, variance, np.nan)

    def step(self, hours, X, y, timestamps):
        """
        Process one observation per listed hour. Rows with non-finite X or y are skipped.
        Returns the pre-update predictive mean and variance.
        """
        hours = np.asarray(hours)
        if len(np.unique(hours)) != len(hours):
            raise ValueError('A bank step processes at most one observation per hour')
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        valid = np.isfinite(X).all(axis=1) & np.isfinite(y)
        mean = np.full(len(hours), np.nan)
        variance = np.full(len(hours), np.nan)
        if not valid.any():
            return mean, variance
        hours_v = hours[valid]
        times_v = [t for t, flag in zip(timestamps, valid) if flag]
        Q, breaks = self.process_noise(hours_v, times_v)
        theta, P, mean_v, variance_v = measurement_update(
            self.theta[hours_v], self.P[hours_v] + Q, X[valid], y[valid], self.sigma2[hours_v],
        )
        self.theta[hours_v] = theta
        self.P[hours_v] = P
        self.break_done[hours_v[breaks]] = True
        for hour, t in zip(hours_v, times_v):
            self.last_timestamp[hour] = to_utc(t) if t is not None else None
        mean[valid] = mean_v
        variance[valid] = variance_v
        return mean, variance

    def update(self, hours, X, y, timestamps):
        """
        Process observations in chronological order, several per hour allowed.
        """
        for batch in chronological_batches(hours, timestamps):
            self.step(np.asarray(hours)[batch], np.asarray(X)[batch], np.asarray(y)[batch],
                      [timestamps[row] for row in batch])

    def state(self, hour):
        return KalmanState(
            theta=self.theta[hour].copy(),
            P=self.P[hour].copy(),
            sigma2=float(self.sigma2[hour]),
            Q=self.Q[hour].copy(),
            setting=self.setting,
            break_time=self.break_time[hour],
            break_Q=self.break_Q[hour].copy() if self.break_time[hour] is not None else None,
            break_done=bool(self.break_done[hour]) if self.break_time[hour] is not None else False,
            last_timestamp=self.last_timestamp[hour],
            extra=dict(self.extra[hour]),
        )

    def states(self):
        return [self.state(hour) for hour in range(len(self))]

    def to_dict(self):
        return {'kind': 'kalman', 'states': [state.to_dict() for state in self.states()]}

    @classmethod
    def from_dict(cls, data):
        return cls([KalmanState.from_dict(state) for state in data['states']])


def stack_streams(streams):
    """
    Pad training streams (X, y[, mask[, score_mask]]) to a common length.
    Returns (G, n, d) features and (G, n) targets, both zeroed outside the fit mask,
    with the fit and score masks. Rows with non-finite X or y are never fitted.
    """
    streams = list(streams)
    d = np.asarray(streams[0][0]).shape[1]
    n = max(len(stream[1]) for stream in streams)
    X = np.zeros((len(streams), n, d))
    y = np.zeros((len(streams), n))
    mask = np.zeros((len(streams), n), dtype=bool)
    score_mask = np.zeros((len(streams), n), dtype=bool)
    for g, (X_g, y_g, *masks) in enumerate(streams):
        X_g = np.asarray(X_g, dtype=float)
        y_g = np.asarray(y_g, dtype=float)
        if X_g.ndim != 2 or X_g.shape != (len(y_g), d):
            raise DimensionMismatch(f'Stream {g} has features {X_g.shape} and {len(y_g)} targets, expected width {d}')
        fit = np.isfinite(X_g).all(axis=1) & np.isfinite(y_g)
        if masks and masks[0] is not None:
            fit &= np.asarray(masks[0], dtype=bool)
        score = fit
        if len(masks) > 1 and masks[1] is not None:
            score = fit & np.asarray(masks[1], dtype=bool)
        rows = len(y_g)
        X[g, :rows] = np.where(fit[:, None], X_g, 0.0)
        y[g, :rows] = np.where(fit, y_g, 0.0)
        mask[g, :rows] = fit
        score_mask[g, :rows] = score
    return X, y, mask, score_mask


class _UnitFilter:
    """
    Unit-scale filters (sigma2 = 1, P_1 = I) of candidate Q/sigma2, candidate c running
    on stream groups[c] of stacked streams. `qs` holds diagonals (C, d) or matrices (C, d, d).
    The state mean is kept affine in theta_1 (theta_t = M theta_1 + m), which makes the
    innovations affine in theta_1 and gives closed-form theta_1 and sigma2.
    Rows outside the fit mask leave a filter untouched.
    """
    def __init__(self, stacked, qs, groups):
        X, y, mask, score_mask = stacked
        qs = np.asarray(qs, dtype=float)
        groups = np.asarray(groups)
        n, d = X.shape[1:]
        C = len(qs)
        diagonal = np.arange(d)
        P = np.broadcast_to(np.eye(d), (C, d, d)).copy()
        M = P.copy()
        m = np.zeros((C, d))
        self.B = np.zeros((C, d, d))
        self.c = np.zeros((C, d))
        self.aa = np.zeros(C)
        self.log_v = np.zeros(C)
        self.n = np.zeros(C)
        block_b = np.zeros((SCORE_BLOCK, C, d))
        block_a = np.zeros((SCORE_BLOCK, C))
        filled = 0
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            for t in range(n):
                active = mask[groups, t]
                if not active.any():
                    continue
                scored = score_mask[groups, t]
                x = X[groups, t]
                if qs.ndim == 2:
                    P[:, diagonal, diagonal] += active[:, None] * qs
                else:
                    P += active[:, None, None] * qs
                Px = np.einsum('cij,cj->ci', P, x)
                v = 1.0 + np.einsum('ci,ci->c', x, Px)
                a = y[groups, t] - np.einsum('ci,ci->c', m, x)
                b = np.einsum('cij,ci->cj', M, x)
                root = np.sqrt(scored / v)
                block_b[filled] = root[:, None] * b
                block_a[filled] = root * a
                filled += 1
                if filled == SCORE_BLOCK:
                    self._accumulate(block_b, block_a)
                    filled = 0
                self.log_v += np.where(scored, np.log(v), 0.0)
                self.n += scored
                gain = Px / v[:, None]
                M -= gain[:, :, None] * b[:, None, :]
                m += gain * a[:, None]
                u = Px / np.sqrt(v)[:, None]
                P -= u[:, :, None] * u[:, None, :]
            self._accumulate(block_b[:filled], block_a[:filled])

    def _accumulate(self, block_b, block_a):
        """
        Add the weighted rows sum_t w_t b_t b_t', sum_t w_t a_t b_t and sum_t w_t a_t^2.
        """
        rows = np.transpose(block_b, (1, 0, 2))
        self.B += np.swapaxes(rows, 1, 2) @ rows
        self.c += np.einsum('tc,tci->ci', block_a, block_b)
        self.aa += np.einsum('tc,tc->c', block_a, block_a)

    def _log_likelihood(self, weighted_rss):
        with np.errstate(divide='ignore', invalid='ignore'):
            sigma2 = np.maximum(weighted_rss / self.n, MIN_SIGMA2)
            ll = -0.5 * (self.n * np.log(2 * np.pi * sigma2) + self.log_v + self.n)
        return np.where(np.isfinite(ll) & (self.n > 0), ll, -np.inf), sigma2

    def profile(self):
        """
        Likelihood maximized over theta_1 and sigma2: (log likelihood, theta_1, sigma2) per candidate.
        """
        theta1 = np.einsum('cij,cj->ci', np.linalg.pinv(self.B, hermitian=True), self.c)
        rss = self.aa - np.einsum('ci,ci->c', theta1, self.c)
        ll, sigma2 = self._log_likelihood(np.maximum(rss, 0))
        return ll, theta1, sigma2

    def at_zero_start(self):
        """
        Likelihood with theta_1 = 0, maximized over sigma2.
        """
        return self._log_likelihood(self.aa)


def _evaluate(stacked, qs, groups, profile=True):
    """
    _UnitFilter runs over SEARCH_CHUNK candidates at a time: (log likelihood, theta_1, sigma2).
    theta_1 is 0 when `profile` is false.
    """
    C = len(qs)
    d = stacked[0].shape[2]
    ll = np.empty(C)
    theta1 = np.zeros((C, d))
    sigma2 = np.empty(C)
    for start in range(0, C, SEARCH_CHUNK):
        part = slice(start, start + SEARCH_CHUNK)
        unit = _UnitFilter(stacked, qs[part], groups[part])
        if profile:
            ll[part], theta1[part], sigma2[part] = unit.profile()
        else:
            ll[part], sigma2[part] = unit.at_zero_start()
    return ll, theta1, sigma2


def _candidate(q, d):
    """
    A single Q/sigma2 (scalar, diagonal vector or matrix) as a one-candidate batch.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        q = q * np.ones(d)
    return q[None]


def profile_likelihood(X, y, q, mask=None):
    """
    Profile log-likelihood of a single Q/sigma2 (diagonal vector or matrix).
    """
    stacked = stack_streams([(X, y, mask)])
    ll, theta1, sigma2 = _evaluate(stacked, _candidate(q, stacked[0].shape[2]), np.zeros(1, dtype=int))
    return float(ll[0]), theta1[0], float(sigma2[0])


@dataclass
class QSearch:
    q: np.ndarray
    log_likelihood: float
    theta1: np.ndarray
    sigma2: float
    path: list


class _GreedyProgress:
    """
    Greedy search state of one stream, with Q/sigma2 held as indices into the value grid.
    """
    def __init__(self, size, dimension, log_likelihood, theta1, sigma2):
        self.size = size
        self.index = np.zeros(dimension, dtype=int)
        self.best = np.zeros(dimension, dtype=int)
        self.phase = 'coarse'
        self.current = (float(log_likelihood), theta1, float(sigma2))
        self.path = [(self.index.copy(), self.current[0])]
        self.done = False

    def scan(self, coarse):
        """
        (coordinate, value index) pairs to evaluate at this step.
        """
        pairs = []
        for i, current in enumerate(self.index):
            if self.phase == 'coarse':
                options = coarse
            elif self.phase == 'full':
                options = range(self.size)
            else:
                best = self.best[i]
                options = {0, current - 1, current + 1, best - 1, best, best + 1}
            pairs.extend((i, option) for option in sorted(options) if 0 <= option < self.size and option != current)
        return pairs

    def advance(self, coordinates, options, ll, theta1, sigma2, tolerance):
        for i in np.unique(coordinates):
            scanned = np.flatnonzero(coordinates == i)
            top = scanned[np.argmax(ll[scanned])]
            self.best[i] = options[top] if ll[top] > self.current[0] else self.index[i]
        top = int(np.argmax(ll))
        threshold = self.current[0] + tolerance * max(1.0, abs(self.current[0]))
        if np.isfinite(ll[top]) and ll[top] > threshold:
            self.index[coordinates[top]] = options[top]
            self.current = (float(ll[top]), theta1[top], float(sigma2[top]))
            self.path.append((self.index.copy(), self.current[0]))
            self.phase = 'local'
        elif self.phase == 'full':
            self.done = True
        else:
            self.phase = 'full'


def greedy_q_searches(streams, grid=None, tolerance=SEARCH_TOLERANCE):
    """
    Coordinate-wise greedy ascent of the profile likelihood over diagonal Q/sigma2, for
    several independent training streams (X, y[, mask]) at once, e.g. the 24 hours of an expert.

    Every stream starts from 0 and changes the coordinate improving the likelihood most
    among the step's candidates. The first step scans every third grid value, later
    steps the grid neighbours of each coordinate's current and best known values. A step
    that improves nothing is followed by a scan of the whole grid, and the search stops
    when that scan does not improve either: no single-coordinate change improves the
    returned Q/sigma2.
    """
    grid = variance_grid() if grid is None else np.asarray(grid, dtype=float)
    values = np.unique(np.r_[0.0, grid])
    stacked = stack_streams(streams)
    G, _, d = stacked[0].shape
    for g, count in enumerate(stacked[2].sum(axis=1)):
        if count < 10 * d:
            raise InsufficientHistory(f'Greedy variance search needs {10 * d} observations, got {count} (stream {g})')
    ll, theta1, sigma2 = _evaluate(stacked, np.zeros((G, d)), np.arange(G))
    failed = np.flatnonzero(~np.isfinite(ll))
    if len(failed):
        raise SearchFailed(f'Likelihood of Q = 0 is not finite (stream {failed[0]})')
    progress = [_GreedyProgress(len(values), d, ll[g], theta1[g], sigma2[g]) for g in range(G)]
    coarse = np.r_[0, np.arange(len(values) - 1, 0, -COARSE_STRIDE)]
    steps = 0
    while True:
        owners = []
        candidates = []
        scans = {}
        for g, search in enumerate(progress):
            if search.done:
                continue
            pairs = search.scan(coarse)
            if not pairs:
                search.done = True
                continue
            scans[g] = (len(candidates), np.array(pairs))
            for i, option in pairs:
                candidate = search.index.copy()
                candidate[i] = option
                candidates.append(candidate)
                owners.append(g)
        if not candidates:
            break
        steps += 1
        ll, theta1, sigma2 = _evaluate(stacked, values[np.array(candidates)], np.array(owners))
        for g, (start, pairs) in scans.items():
            part = slice(start, start + len(pairs))
            progress[g].advance(pairs[:, 0], pairs[:, 1], ll[part], theta1[part], sigma2[part], tolerance)
        logger.debug(
            'Greedy variance search step %d: %d candidates over %d streams', steps, len(candidates), len(scans),
        )
    searches = []
    for search in progress:
        log_likelihood, theta1, sigma2 = search.current
        searches.append(QSearch(
            q=values[search.index],
            log_likelihood=log_likelihood,
            theta1=theta1,
            sigma2=sigma2,
            path=[(values[index], value) for index, value in search.path],
        ))
    logger.debug(
        'Greedy variance search of %d streams: %d scans, %d to %d accepted changes',
        G, steps, min(len(s.path) for s in searches) - 1, max(len(s.path) for s in searches) - 1,
    )
    return searches


def greedy_q_search(X, y, grid=None, mask=None, tolerance=SEARCH_TOLERANCE):
    """
    greedy_q_searches of a single training stream.
    """
    return greedy_q_searches([(X, y, mask)], grid, tolerance)[0]


def closed_form_init(q, X, y, mask=None, on_singular='raise'):
    """
    theta_1 and sigma2 maximizing the likelihood for a fixed Q/sigma2 with P_1 = sigma2 I.
    """
    stacked = stack_streams([(X, y, mask)])
    d = stacked[0].shape[2]
    unit = _UnitFilter(stacked, _candidate(q, d), np.zeros(1, dtype=int))
    if unit.n[0] == 0 or np.linalg.matrix_rank(unit.B[0]) < d:
        if on_singular == 'raise':
            raise SingularDesign('Initial state is not identifiable from the training stream')
        logger.warning('Initial state is not identifiable, using the minimum norm solution')
    _, theta1, sigma2 = unit.profile()
    return theta1[0], float(sigma2[0])


def select_big_qs(streams, grid=None):
    """
    Scalar q of Q = q I for every stream (X, y[, mask[, score_mask]]), for theta_1 = 0 and
    P_1 = I, by likelihood on the score rows.
    """
    grid = variance_grid() if grid is None else np.asarray(grid, dtype=float)
    stacked = stack_streams(streams)
    G, _, d = stacked[0].shape
    qs = np.tile(grid, G)[:, None] * np.ones(d)
    ll, _, _ = _evaluate(stacked, qs, np.repeat(np.arange(G), len(grid)), profile=False)
    ll = ll.reshape(G, len(grid))
    failed = np.flatnonzero(~np.isfinite(ll).any(axis=1))
    if len(failed):
        raise SearchFailed(f'No finite likelihood for any scalar process variance (stream {failed[0]})')
    return grid[np.argmax(ll, axis=1)]


def select_big_q(X, y, grid=None, mask=None, score_mask=None):
    return float(select_big_qs([(X, y, mask, score_mask)], grid)[0])


def make_setting(tag, X, y, mask=None, break_time=None, grid=None, search=None, score_mask=None, big_q=None):
    """
    Initial KalmanState of one hourly filter for variance setting `tag`, from the
    training stream (X, y). `search` and `big_q` may carry values already selected
    for this stream.
    """
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    if tag in BREAK_SETTINGS and break_time is None:
        raise ConfigError(f'Setting {tag} needs a break date')
    break_time = to_utc(break_time) if tag in BREAK_SETTINGS else None
    if tag in ('static', 'static_break'):
        return KalmanState(
            theta=np.zeros(d),
            P=np.eye(d),
            sigma2=1.0,
            Q=np.zeros(d),
            setting=tag,
            break_time=break_time,
            break_Q=np.eye(d) if break_time is not None else None,
        )
    if tag in ('dynamic', 'dynamic_break'):
        search = search or greedy_q_search(X, y, grid, mask)
        theta1, sigma2 = search.theta1, search.sigma2
        return KalmanState(
            theta=theta1,
            P=sigma2 * np.eye(d),
            sigma2=sigma2,
            Q=sigma2 * search.q,
            setting=tag,
            break_time=break_time,
            break_Q=sigma2 * np.eye(d) if break_time is not None else None,
            extra={'q': search.q.tolist()},
        )
    if tag == 'dynamic_big':
        q = select_big_q(X, y, grid, mask, score_mask) if big_q is None else float(big_q)
        return KalmanState(
            theta=np.zeros(d),
            P=np.eye(d),
            sigma2=1.0,
            Q=q * np.ones(d),
            setting=tag,
            extra={'q': q},
        )
    raise ConfigError(f'Unknown variance setting {tag}')
