"""
Intraday correction: per target hour h, an autoregression of an expert's
residuals on the 24 most recent residuals visible at 8AM the day before,
i.e. lags h+16 .. h+39.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    BacktestError, InsufficientHistory, MissingResidual, ModelError,
)
from .regression import least_squares, solve_normal_equations
from .timeseries import shift


logger = logging.getLogger(__name__)


LAG_COUNT = 24
MIN_LAG_OFFSET = 16
MIN_ROWS_PER_HOUR = 2 * (LAG_COUNT + 1)


def residual_lags(hour):
    return tuple(range(hour + MIN_LAG_OFFSET, hour + MIN_LAG_OFFSET + LAG_COUNT))


def lagged_residuals(residuals, rows, hour):
    """
    (len(rows), 25) design: the 24 residual lags of `hour` and an intercept column.
    """
    residuals = np.asarray(residuals, dtype=float)
    columns = [shift(residuals, lag)[rows] for lag in residual_lags(hour)]
    return np.column_stack(columns + [np.ones(len(rows))])


@dataclass(frozen=True)
class IntradayModel:
    """
    coefficients[h] holds the 24 lag coefficients (lags h+16 .. h+39) then the intercept.
    """
    coefficients: np.ndarray

    def to_dict(self):
        return {'coefficients': np.asarray(self.coefficients).tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data['coefficients'], dtype=float))


def fit_intraday(residuals, hours, rows):
    """
    Per-hour OLS of r_t on its 24 available lags plus intercept, using target rows `rows`.
    """
    residuals = np.asarray(residuals, dtype=float)
    hours = np.asarray(hours)
    rows = np.asarray(rows)
    coefficients = np.zeros((24, LAG_COUNT + 1))
    for hour in range(24):
        hour_rows = rows[hours[rows] == hour]
        X = lagged_residuals(residuals, hour_rows, hour)
        y = residuals[hour_rows]
        usable = np.isfinite(X).all(axis=1) & np.isfinite(y)
        if usable.sum() <= LAG_COUNT + 1:
            raise InsufficientHistory(f'{usable.sum()} residual rows to fit the intraday model at hour {hour}')
        coefficients[hour], _ = least_squares(X[usable], y[usable], context=f'(intraday, hour {hour})')
    return IntradayModel(coefficients)


def apply_intraday(model, base, residuals, position, hour):
    """
    base + intercept + sum_l coef_l r_{t-l} for the row at `position`.
    """
    residuals = np.asarray(residuals, dtype=float)
    lags = np.array(residual_lags(hour))
    sources = position - lags
    if (sources < 0).any():
        raise MissingResidual(f'Residual lags of row {position} fall before the start of the stream')
    values = residuals[sources]
    if not np.isfinite(values).all():
        raise MissingResidual(f'Residual lag {lags[~np.isfinite(values)][0]} unavailable at row {position}')
    coef = model.coefficients[hour]
    return float(base + coef[-1] + coef[:-1] @ values)


class IntradayAccumulator:
    """
    Running normal equations per hour, so the correction can be refitted every day
    on all residuals revealed so far.
    """
    def __init__(self):
        self.XtX = np.zeros((24, LAG_COUNT + 1, LAG_COUNT + 1))
        self.Xty = np.zeros((24, LAG_COUNT + 1))
        self.count = np.zeros(24, dtype=int)

    def add(self, residuals, rows, hours):
        for row, hour in zip(rows, hours):
            sources = row - np.array(residual_lags(hour))
            if (sources < 0).any():
                continue
            x = np.r_[residuals[sources], 1.0]
            y = residuals[row]
            if np.isfinite(x).all() and np.isfinite(y):
                self.XtX[hour] += np.outer(x, x)
                self.Xty[hour] += x * y
                self.count[hour] += 1

    def model(self):
        """
        Model of the hours with enough rows; other hours get zero coefficients.
        """
        coefficients = np.zeros((24, LAG_COUNT + 1))
        for hour in np.flatnonzero(self.count >= MIN_ROWS_PER_HOUR):
            coefficients[hour] = solve_normal_equations(self.XtX[hour], self.Xty[hour], f'(intraday, hour {hour})')
        return IntradayModel(coefficients)


def replay_intraday(base, actual, hours, reveal_rows, forecast_rows, days=None):
    """
    Corrected forecasts in causal order. For each day i, the residuals of
    reveal_rows[i] are added before correcting the rows of forecast_rows[i].
    Residuals are actual - base; rows without a full lag window keep the base forecast.
    A refit that fails raises BacktestError naming days[i] (or i).
    """
    base = np.asarray(base, dtype=float)
    residuals = np.asarray(actual, dtype=float) - base
    hours = np.asarray(hours)
    corrected = base.copy()
    accumulator = IntradayAccumulator()
    for index, (revealed, targets) in enumerate(zip(reveal_rows, forecast_rows)):
        accumulator.add(residuals, revealed, hours[revealed])
        try:
            model = accumulator.model()
        except ModelError as e:
            day = index if days is None else days[index]
            raise BacktestError(f'Intraday refit failed: {e}', day=day, cause=e) from e
        for row in targets:
            if not np.isfinite(base[row]):
                continue
            try:
                corrected[row] = apply_intraday(model, base[row], residuals, row, hours[row])
            except MissingResidual:
                logger.debug('No intraday correction for row %d', row)
    return corrected
