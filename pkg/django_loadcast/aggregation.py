"""
ML-Poly online aggregation of experts under the absolute loss, one independent
weight vector per hour of the day, and greedy selection of the expert set.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import EmptyCandidates, NonFiniteForecast
from .timeseries import CUTOFF_HOUR


logger = logging.getLogger(__name__)


IMPROVEMENT_TOLERANCE = 1e-9


def mlpoly_weights(regrets, squared):
    """
    w_i proportional to eta_i max(R_i, 0) with eta_i = 1 / (1 + sum of squared regrets);
    uniform when no regret is positive.
    """
    regrets = np.asarray(regrets, dtype=float)
    positive = np.maximum(regrets, 0) / (1 + np.asarray(squared, dtype=float))
    total = positive.sum(axis=-1, keepdims=True)
    uniform = np.full_like(positive, 1 / positive.shape[-1])
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(total > 0, positive / np.where(total > 0, total, 1), uniform)


@dataclass
class MLPolyState:
    experts: tuple
    regrets: np.ndarray = None
    squared: np.ndarray = None
    weights: np.ndarray = None
    steps: int = 0

    def __post_init__(self):
        k = len(self.experts)
        self.regrets = np.zeros(k) if self.regrets is None else np.asarray(self.regrets, dtype=float)
        self.squared = np.zeros(k) if self.squared is None else np.asarray(self.squared, dtype=float)
        self.weights = np.full(k, 1 / k) if self.weights is None else np.asarray(self.weights, dtype=float)

    def to_dict(self):
        return {
            'experts': list(self.experts),
            'regrets': self.regrets.tolist(),
            'squared': self.squared.tolist(),
            'weights': self.weights.tolist(),
            'steps': self.steps,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            experts=tuple(data['experts']),
            regrets=data['regrets'],
            squared=data['squared'],
            weights=data['weights'],
            steps=data['steps'],
        )


def mlpoly_predict(state, forecasts):
    forecasts = np.asarray(forecasts, dtype=float)
    if len(forecasts) != len(state.experts) or len(forecasts) == 0:
        raise NonFiniteForecast(f'Expected {len(state.experts)} forecasts, got {len(forecasts)}')
    if not np.isfinite(forecasts).all():
        raise NonFiniteForecast('Aggregation received a non-finite expert forecast')
    return float(state.weights @ forecasts)


def mlpoly_update(state, forecasts, y, prediction=None):
    """
    Linearized absolute loss: g = sign(prediction - y), r_i = g (prediction - f_i).
    """
    forecasts = np.asarray(forecasts, dtype=float)
    prediction = mlpoly_predict(state, forecasts) if prediction is None else prediction
    instant = np.sign(prediction - y) * (prediction - forecasts)
    regrets = state.regrets + instant
    squared = state.squared + instant ** 2
    return MLPolyState(
        experts=state.experts,
        regrets=regrets,
        squared=squared,
        weights=mlpoly_weights(regrets, squared),
        steps=state.steps + 1,
    )


@dataclass
class AggregationState:
    """
    One ML-Poly state per hour of the day.
    """
    hours: list = field(default_factory=list)

    @classmethod
    def start(cls, experts):
        return cls([MLPolyState(tuple(experts)) for _ in range(24)])

    def predict(self, hour, forecasts):
        return mlpoly_predict(self.hours[hour], forecasts)

    def update(self, hour, forecasts, y, prediction=None):
        self.hours[hour] = mlpoly_update(self.hours[hour], forecasts, y, prediction)

    def to_dict(self):
        return {'hours': [state.to_dict() for state in self.hours]}


def availability_delay(hour):
    """
    Days between the last revealed value of `hour` and the forecast day.
    """
    return 1 if hour <= CUTOFF_HOUR else 2


def replay_mlpoly(forecasts, actual, update_mask):
    """
    Aggregate rows laid out as whole days (row 0 at midnight) in causal order:
    the prediction of day k at hour h uses the updates of that hour up to day
    k - availability_delay(h). Rows where some expert is missing get no prediction
    and no update. Returns (predictions, weights used for each row).
    """
    forecasts = np.asarray(forecasts, dtype=float)
    actual = np.asarray(actual, dtype=float)
    n, k = forecasts.shape
    if n % 24:
        raise ValueError('Aggregation replay needs whole days')
    days = n // 24
    F = forecasts.reshape(days, 24, k)
    y = actual.reshape(days, 24)
    allowed = np.asarray(update_mask, dtype=bool).reshape(days, 24)
    complete = np.isfinite(F).all(axis=2)
    predictions = np.full((days, 24), np.nan)
    weights = np.full((days, 24, k), np.nan)
    regrets = np.zeros((24, k))
    squared = np.zeros((24, k))
    current = np.full((24, k), 1 / k)
    delay = np.array([availability_delay(hour) for hour in range(24)])
    hour_index = np.arange(24)
    for day in range(days):
        source = day - delay
        ready = source >= 0
        src = np.where(ready, source, 0)
        revealed = ready & allowed[src, hour_index] & complete[src, hour_index] & np.isfinite(y[src, hour_index])
        revealed &= np.isfinite(predictions[src, hour_index])
        if revealed.any():
            h = hour_index[revealed]
            f = F[src[revealed], h]
            yhat = predictions[src[revealed], h]
            instant = np.sign(yhat - y[src[revealed], h])[:, None] * (yhat[:, None] - f)
            regrets[h] += instant
            squared[h] += instant ** 2
            current[h] = mlpoly_weights(regrets[h], squared[h])
        row_ok = complete[day]
        predictions[day, row_ok] = np.einsum('hk,hk->h', current[row_ok], F[day, row_ok])
        weights[day, row_ok] = current[row_ok]
    return predictions.ravel(), weights.reshape(n, k)


def mean_absolute_error(forecast, actual, mask=None):
    forecast = np.asarray(forecast, dtype=float)
    actual = np.asarray(actual, dtype=float)
    valid = np.isfinite(forecast) & np.isfinite(actual)
    if mask is not None:
        valid &= mask
    if not valid.any():
        return np.inf
    return float(np.mean(np.abs(forecast[valid] - actual[valid])))


@dataclass
class Selection:
    order: list
    curve: list
    best_size: int


def greedy_select(forecasts, actual, update_mask, eval_mask, max_size, stop_early=True):
    """
    Start from the empty set and add, at each step, the expert whose addition gives
    the lowest validation MAE of the ML-Poly aggregation. Stops at max_size or, when
    `stop_early`, as soon as no candidate strictly improves.
    `forecasts` maps expert names to row-aligned forecast arrays.
    """
    if not forecasts:
        raise EmptyCandidates('No candidate experts to select from')
    names = list(forecasts)
    matrix = np.column_stack([np.asarray(forecasts[name], dtype=float) for name in names])
    chosen = []
    curve = []
    best = np.inf
    while len(chosen) < min(max_size, len(names)):
        step_best = None
        for index, name in enumerate(names):
            if index in chosen:
                continue
            columns = chosen + [index]
            predictions, _ = replay_mlpoly(matrix[:, columns], actual, update_mask)
            score = mean_absolute_error(predictions, actual, eval_mask)
            if step_best is None or score < step_best[0]:
                step_best = (score, index)
        score, index = step_best
        improves = score < best - IMPROVEMENT_TOLERANCE * max(1.0, best if np.isfinite(best) else 1.0)
        if stop_early and not improves:
            break
        chosen.append(index)
        curve.append(score)
        best = min(best, score)
        logger.info('Greedy selection step %d: %s (validation MAE %.4f)', len(chosen), names[index], score)
    best_size = int(np.argmin(curve)) + 1 if curve else 0
    return Selection(order=[names[index] for index in chosen], curve=curve, best_size=best_size)


def weights_frame(timestamps, experts, weights):
    """
    Long format weights: timestamp, hour, expert, weight (rows without weights dropped).
    """
    timestamps = pd.DatetimeIndex(timestamps)
    frame = pd.DataFrame(np.asarray(weights), columns=list(experts))
    frame.insert(0, 'timestamp', timestamps.strftime('%Y-%m-%dT%H:%M:%SZ'))
    frame.insert(1, 'hour', timestamps.hour)
    long = frame.melt(id_vars=['timestamp', 'hour'], var_name='expert', value_name='weight')
    long = long.dropna(subset=['weight'])
    return long.sort_values(['timestamp', 'expert'], kind='stable').reset_index(drop=True)
