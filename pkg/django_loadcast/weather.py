"""
Statistical correction of physical weather forecasts.

    z_t = alpha * zhat_t + sum_l beta_l * (z_{t-l} - zhat_{t-l}) + gamma * z_{t-l0(t)} + delta

Lags follow the day-ahead availability: every observation used for hour h is at
least h+16 hours old.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientHistory, MissingLag, UncorrectableVariable
from .regression import bic, least_squares
from .timeseries import LAST_EARLY_HOUR, WEATHER_VARIABLES, shift, to_utc


logger = logging.getLogger(__name__)


CORRECTABLE_VARIABLES = ('temperature', 'cloud', 'pressure', 'wind_speed')
PER_HOUR_VARIABLES = ('temperature',)
DEFAULT_HOURLY_ORDERS = tuple(range(0, 9))
DEFAULT_DAILY_ORDERS = tuple(range(0, 8))


def _check_hour(hour):
    if not 0 <= hour <= 23:
        raise ValueError(f'Hour must be within 0..23, got {hour}')


def base_lag(hour):
    """
    Last daily lag of the variable visible at 8AM the day before.
    """
    _check_hour(hour)
    return 24 if hour <= LAST_EARLY_HOUR else 48


def daily_lags(P, hour):
    first = 1 if hour <= LAST_EARLY_HOUR else 2
    return [24 * k for k in range(first, first + P)]


def hourly_lags(p, hour):
    return [hour + 16 + j for j in range(1, p + 1)]


def lag_set(p, P, hour):
    """
    Sorted residual lags for orders (p, P) at target hour `hour`, duplicates removed.
    """
    _check_hour(hour)
    return tuple(sorted(set(daily_lags(P, hour)) | set(hourly_lags(p, hour))))


@dataclass(frozen=True)
class HourCorrection:
    p: int
    P: int
    alpha: float
    beta: dict
    gamma: float
    delta: float

    @property
    def coefficient_count(self):
        return len(self.beta) + 3


@dataclass(frozen=True)
class WeatherCorrectionModel:
    variable: str
    hours: tuple
    shared: bool
    bic: tuple

    def to_dict(self):
        return {
            'variable': self.variable,
            'shared': self.shared,
            'bic': list(self.bic),
            'hours': [
                {
                    'hour': hour,
                    'p': block.p,
                    'P': block.P,
                    'alpha': block.alpha,
                    'beta': {str(lag): value for lag, value in block.beta.items()},
                    'gamma': block.gamma,
                    'delta': block.delta,
                }
                for hour, block in enumerate(self.hours)
            ],
        }

    @classmethod
    def from_dict(cls, data):
        hours = [None] * 24
        for item in data['hours']:
            hours[item['hour']] = HourCorrection(
                p=item['p'],
                P=item['P'],
                alpha=item['alpha'],
                beta={int(lag): value for lag, value in item['beta'].items()},
                gamma=item['gamma'],
                delta=item['delta'],
            )
        return cls(
            variable=data['variable'],
            hours=tuple(hours),
            shared=data['shared'],
            bic=tuple(data['bic']),
        )


def identity_correction(variable):
    block = HourCorrection(p=0, P=0, alpha=1.0, beta={}, gamma=0.0, delta=0.0)
    return WeatherCorrectionModel(variable, (block,) * 24, shared=False, bic=(0.0,))


def _series(ds, variable):
    if variable not in CORRECTABLE_VARIABLES:
        if variable in WEATHER_VARIABLES:
            raise UncorrectableVariable(f'{variable} is never corrected')
        raise UncorrectableVariable(f'Unknown weather variable {variable}')
    observed_column, forecast_column = WEATHER_VARIABLES[variable]
    observed = ds.column(observed_column)
    forecast = ds.column(forecast_column)
    return observed, forecast, observed - forecast


class _LagDesign:
    """
    Full design for the largest orders of the grid at one set of rows.
    Column layout: [forecast, daily_1..daily_Pmax, hourly_1..hourly_pmax, base lag observation].
    """
    def __init__(self, observed, forecast, residual, rows, hours, p_max, P_max):
        self.rows = rows
        self.hours = hours
        first_daily = np.where(hours <= LAST_EARLY_HOUR, 1, 2)
        self.daily_lag_values = 24 * (first_daily[:, None] + np.arange(P_max)[None, :])
        self.hourly_lag_values = hours[:, None] + 16 + np.arange(1, p_max + 1)[None, :]
        base = np.where(hours <= LAST_EARLY_HOUR, 24, 48)
        self.forecast = forecast[rows]
        self.daily = _take_lags(residual, rows, self.daily_lag_values)
        self.hourly = _take_lags(residual, rows, self.hourly_lag_values)
        self.base = _take_lags(observed, rows, base[:, None])[:, 0]
        self.target = observed[rows]

    def complete(self):
        return (
            np.isfinite(self.forecast)
            & np.isfinite(self.daily).all(axis=1)
            & np.isfinite(self.hourly).all(axis=1)
            & np.isfinite(self.base)
            & np.isfinite(self.target)
        )

    def subset(self, mask):
        copy = object.__new__(_LagDesign)
        for name in (
            'rows', 'hours', 'daily_lag_values', 'hourly_lag_values',
            'forecast', 'daily', 'hourly', 'base', 'target',
        ):
            setattr(copy, name, getattr(self, name)[mask])
        return copy

    def hourly_duplicates(self, P):
        """
        (rows, p_max) mask of hourly lags already present among the first P daily lags.
        """
        daily = self.daily_lag_values[:, :P]
        return (self.hourly_lag_values[:, :, None] == daily[:, None, :]).any(axis=2)

    def columns(self, p, P):
        hourly = self.hourly[:, :p].copy()
        hourly[self.hourly_duplicates(P)[:, :p]] = 0.0
        return np.column_stack([self.forecast, self.daily[:, :P], hourly, self.base])


def _take_lags(values, rows, lags):
    positions = rows[:, None] - lags
    out = np.full(positions.shape, np.nan)
    valid = positions >= 0
    out[valid] = values[positions[valid]]
    return out


def _training_rows(ds, train_end, hour=None):
    index = ds.timestamps
    mask = index <= to_utc(train_end)
    mask &= ~ds.frame['interpolated'].to_numpy()
    if hour is not None:
        mask &= index.hour == hour
    return np.flatnonzero(mask)


def fit_correction(ds, variable, train_end, grid=None):
    """
    Select (p, P) by BIC over the full grid. Temperature is fitted and selected
    per hour; other variables share slopes across hours with hourly intercepts.
    `grid` is an optional {'p': orders, 'P': orders} mapping.
    """
    grid = grid or {}
    p_orders = tuple(grid.get('p', DEFAULT_HOURLY_ORDERS))
    P_orders = tuple(grid.get('P', DEFAULT_DAILY_ORDERS))
    observed, forecast, residual = _series(ds, variable)
    if variable in PER_HOUR_VARIABLES:
        model = _fit_per_hour(observed, forecast, residual, ds, variable, train_end, p_orders, P_orders)
    else:
        model = _fit_shared(observed, forecast, residual, ds, variable, train_end, p_orders, P_orders)
    logger.info(
        'Fitted %s correction, orders (p, P) per hour: %s',
        variable, sorted({(block.p, block.P) for block in model.hours}),
    )
    return model


def _fit_per_hour(observed, forecast, residual, ds, variable, train_end, p_orders, P_orders):
    p_max, P_max = max(p_orders), max(P_orders)
    blocks = []
    criteria = []
    for hour in range(24):
        rows = _training_rows(ds, train_end, hour)
        design = _LagDesign(observed, forecast, residual, rows, np.full(len(rows), hour), p_max, P_max)
        design = design.subset(design.complete())
        n = len(design.rows)
        if n <= 3 + P_max + p_max:
            raise InsufficientHistory(f'Only {n} complete rows to correct {variable} at hour {hour}')
        best = None
        for p in p_orders:
            for P in P_orders:
                duplicates = design.hourly_duplicates(P)[0, :p]
                keep = np.r_[True, np.ones(P, dtype=bool), ~duplicates, True]
                X = np.column_stack([design.columns(p, P), np.ones(n)])[:, np.r_[keep, True]]
                coef, rss = least_squares(X, design.target, on_singular='ridge', context=f'({variable}, hour {hour})')
                criterion = bic(rss, n, X.shape[1])
                if best is None or criterion < best[0]:
                    best = (criterion, p, P, coef)
        criterion, p, P, coef = best
        duplicates = design.hourly_duplicates(P)[0, :p] if p else np.zeros(0, dtype=bool)
        lags = daily_lags(P, hour) + [lag for lag, dup in zip(hourly_lags(p, hour), duplicates) if not dup]
        blocks.append(HourCorrection(
            p=p,
            P=P,
            alpha=float(coef[0]),
            beta={lag: float(value) for lag, value in zip(lags, coef[1:-2])},
            gamma=float(coef[-2]),
            delta=float(coef[-1]),
        ))
        criteria.append(float(criterion))
    return WeatherCorrectionModel(variable, tuple(blocks), shared=False, bic=tuple(criteria))


def _fit_shared(observed, forecast, residual, ds, variable, train_end, p_orders, P_orders):
    p_max, P_max = max(p_orders), max(P_orders)
    rows = _training_rows(ds, train_end)
    hours = ds.timestamps.hour.to_numpy()[rows]
    design = _LagDesign(observed, forecast, residual, rows, hours, p_max, P_max)
    design = design.subset(design.complete())
    n = len(design.rows)
    if n <= 2 + P_max + p_max + 24:
        raise InsufficientHistory(f'Only {n} complete rows to correct {variable}')
    dummies = (design.hours[:, None] == np.arange(24)[None, :]).astype(float)
    best = None
    for p in p_orders:
        for P in P_orders:
            X = np.column_stack([design.columns(p, P), dummies])
            coef, rss = least_squares(X, design.target, on_singular='ridge', context=f'({variable})')
            criterion = bic(rss, n, X.shape[1])
            if best is None or criterion < best[0]:
                best = (criterion, p, P, coef)
    criterion, p, P, coef = best
    alpha = float(coef[0])
    daily_coef = coef[1:1 + P]
    hourly_coef = coef[1 + P:1 + P + p]
    gamma = float(coef[1 + P + p])
    intercepts = coef[2 + P + p:]
    blocks = []
    for hour in range(24):
        beta = {lag: float(value) for lag, value in zip(daily_lags(P, hour), daily_coef)}
        for lag, value in zip(hourly_lags(p, hour), hourly_coef):
            if lag not in beta:
                beta[lag] = float(value)
        blocks.append(HourCorrection(
            p=p,
            P=P,
            alpha=alpha,
            beta=dict(sorted(beta.items())),
            gamma=gamma,
            delta=float(intercepts[hour]),
        ))
    return WeatherCorrectionModel(variable, tuple(blocks), shared=True, bic=(float(criterion),))


def apply_correction(model, ds, t):
    """
    Corrected forecast of the model's variable at timestamp t.
    """
    observed, forecast, residual = _series(ds, model.variable)
    position = ds.position(t)
    if not 0 <= position < len(ds):
        raise MissingLag(f'{t} is outside the dataset')
    hour = ds.timestamps[position].hour
    block = model.hours[hour]

    def lagged(values, lag):
        source = position - lag
        if source < 0 or not np.isfinite(values[source]):
            raise MissingLag(f'Lag {lag} of {model.variable} unavailable at {t}')
        return values[source]

    if not np.isfinite(forecast[position]):
        raise MissingLag(f'No {model.variable} forecast at {t}')
    value = block.alpha * forecast[position] + block.delta
    for lag, coefficient in block.beta.items():
        value += coefficient * lagged(residual, lag)
    if block.gamma:
        value += block.gamma * lagged(observed, base_lag(hour))
    return float(value)


def correct_series(model, ds):
    """
    Corrected forecast for every row; NaN where some lag is unavailable.
    """
    observed, forecast, residual = _series(ds, model.variable)
    hours = ds.timestamps.hour.to_numpy()
    out = np.full(len(ds), np.nan)
    for hour, block in enumerate(model.hours):
        rows = hours == hour
        value = block.alpha * forecast[rows] + block.delta
        for lag, coefficient in block.beta.items():
            value = value + coefficient * shift(residual, lag)[rows]
        value = value + block.gamma * shift(observed, base_lag(hour))[rows]
        out[rows] = value
    return out


def compare_weather_forecasts(ds, model, start=None, end=None):
    """
    MAE of the raw forecast, of the last available daily value and of the
    corrected forecast, over the rows of [start, end] where all three exist.
    """
    observed, forecast, _ = _series(ds, model.variable)
    hours = ds.timestamps.hour.to_numpy()
    last_daily = np.where(hours <= LAST_EARLY_HOUR, shift(observed, 24), shift(observed, 48))
    corrected = correct_series(model, ds)
    mask = np.isfinite(observed) & np.isfinite(forecast) & np.isfinite(last_daily) & np.isfinite(corrected)
    if start is not None:
        mask &= ds.timestamps >= to_utc(start)
    if end is not None:
        mask &= ds.timestamps <= to_utc(end)
    if not mask.any():
        return {'rows': 0, 'raw': None, 'last_daily_lag': None, 'corrected': None}
    return {
        'rows': int(mask.sum()),
        'raw': float(np.mean(np.abs(forecast[mask] - observed[mask]))),
        'last_daily_lag': float(np.mean(np.abs(last_daily[mask] - observed[mask]))),
        'corrected': float(np.mean(np.abs(corrected[mask] - observed[mask]))),
    }


def fit_corrections(ds, train_end, variables=CORRECTABLE_VARIABLES, grid=None):
    return {variable: fit_correction(ds, variable, train_end, grid) for variable in variables}


def corrected_weather(models, ds):
    """
    Variable -> corrected series, falling back to the raw forecast where lags are missing.
    """
    out = {}
    for variable, model in models.items():
        _, forecast, _ = _series(ds, variable)
        corrected = correct_series(model, ds)
        out[variable] = np.where(np.isfinite(corrected), corrected, forecast)
    return out
