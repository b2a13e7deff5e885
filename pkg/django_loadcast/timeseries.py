"""
Hourly data model: ingestion, calendar/lag/smoothing features and the
availability rules of the day-ahead setting (forecast day d with data up to
8AM of day d-1).
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .errors import (
    DatasetTooShort, DayOutOfRange, GapTooLarge, InvalidSegmentation,
    InvalidValue, MissingColumn, NonMonotonicTimestamp,
)


logger = logging.getLogger(__name__)


HOUR = pd.Timedelta(hours=1)
DAY = pd.Timedelta(days=1)

VALUE_COLUMNS = (
    'load',
    'temp_fc', 'temp_obs',
    'cloud_fc', 'cloud_obs',
    'pressure_fc', 'pressure_obs',
    'wind_speed_fc', 'wind_speed_obs',
    'wind_dir_fc', 'wind_dir_obs',
)
CSV_COLUMNS = ('timestamp',) + VALUE_COLUMNS
DEFAULT_SCHEMA = {column: column for column in CSV_COLUMNS}

# variable id -> (observed column, forecast column)
WEATHER_VARIABLES = {
    'temperature': ('temp_obs', 'temp_fc'),
    'cloud': ('cloud_obs', 'cloud_fc'),
    'pressure': ('pressure_obs', 'pressure_fc'),
    'wind_speed': ('wind_speed_obs', 'wind_speed_fc'),
    'wind_dir': ('wind_dir_obs', 'wind_dir_fc'),
}
OBSERVED_COLUMNS = ('load',) + tuple(obs for obs, _ in WEATHER_VARIABLES.values())
PERCENT_COLUMNS = ('cloud_fc', 'cloud_obs')
DIRECTION_COLUMNS = ('wind_dir_fc', 'wind_dir_obs')

MAX_INTERPOLATED_GAP = 3
MIN_FEATURE_DAYS = 8
LOAD_D_EARLY_LAG = 24
LOAD_D_LATE_LAG = 48
LOAD_W_LAG = 168
LAST_EARLY_HOUR = 7  # forecasts for hours up to 7AM can use the previous day
CUTOFF_HOUR = 8


def to_utc(value):
    ts = pd.Timestamp(value)
    if ts.tzinfo is None:
        return ts.tz_localize('UTC')
    return ts.tz_convert('UTC')


def to_day(value):
    return to_utc(value).normalize()


@dataclass(frozen=True)
class HourlyDataset:
    """
    Aligned hourly records indexed by a gapless UTC DatetimeIndex.
    `frame` holds VALUE_COLUMNS plus a boolean `interpolated` flag.
    Treat as immutable: operations return new datasets.
    """
    frame: pd.DataFrame

    def __len__(self):
        return len(self.frame)

    @property
    def start(self):
        return self.frame.index[0]

    @property
    def end(self):
        return self.frame.index[-1]

    @property
    def timestamps(self):
        return self.frame.index

    def column(self, name):
        return self.frame[name].to_numpy(dtype=float, copy=True)

    def position(self, ts):
        """
        Integer row position of a timestamp (may lie outside the dataset).
        """
        return int((to_utc(ts) - self.start) // HOUR)

    def days(self):
        """
        Days fully covered by the dataset.
        """
        first = self.start.normalize()
        if self.start != first:
            first += DAY
        last = self.end.normalize()
        if self.end != last + 23 * HOUR:
            last -= DAY
        return pd.date_range(first, last, freq='D')


def ingest_csv(path, schema=None):
    """
    Read an hourly CSV. `schema` maps canonical column names to CSV headers.
    Gaps of up to MAX_INTERPOLATED_GAP hours are linearly interpolated and flagged.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [canonical for canonical, header in schema.items() if header not in raw.columns]
    if missing:
        raise MissingColumn(f'Missing columns in {path}: {", ".join(missing)}')
    raw = raw.rename(columns={header: canonical for canonical, header in schema.items()})

    try:
        timestamps = pd.to_datetime(raw['timestamp'], utc=True, format='ISO8601')
    except (ValueError, TypeError) as e:
        raise InvalidValue(f'Unparseable timestamp: {e}') from e
    values = {}
    for column in VALUE_COLUMNS:
        cells = raw[column].str.strip().replace('', np.nan)
        try:
            values[column] = pd.to_numeric(cells).astype(float)
        except (ValueError, TypeError) as e:
            raise InvalidValue(f'Non-numeric value in column {column}: {e}') from e
    frame = pd.DataFrame(values)
    frame.index = pd.DatetimeIndex(timestamps, name='timestamp')
    return from_frame(frame)


def from_frame(frame):
    """
    Validate and regularise a frame of VALUE_COLUMNS indexed by UTC timestamps.
    """
    if len(frame) == 0:
        raise DatasetTooShort('Dataset is empty')
    frame = frame[list(VALUE_COLUMNS)].astype(float)
    index = pd.DatetimeIndex(frame.index)
    if index.tz is None:
        index = index.tz_localize('UTC')
    frame = frame.set_axis(index.tz_convert('UTC'), axis=0)
    deltas = frame.index.to_series().diff().iloc[1:]
    if (deltas <= pd.Timedelta(0)).any():
        bad = deltas[deltas <= pd.Timedelta(0)].index[0]
        raise NonMonotonicTimestamp(f'Timestamps must be strictly increasing (at {bad})')
    if (deltas % HOUR != pd.Timedelta(0)).any():
        bad = deltas[deltas % HOUR != pd.Timedelta(0)].index[0]
        raise NonMonotonicTimestamp(f'Timestamps are off the hourly grid (at {bad})')
    missing_hours = deltas // HOUR - 1
    if (missing_hours > MAX_INTERPOLATED_GAP).any():
        bad = missing_hours[missing_hours > MAX_INTERPOLATED_GAP].index[0]
        raise GapTooLarge(f'{missing_hours[bad]} consecutive hours missing before {bad}')

    _check_ranges(frame)
    full_index = pd.date_range(frame.index[0], frame.index[-1], freq='h', name='timestamp')
    regular = frame.reindex(full_index)
    interpolated = np.zeros(len(regular), dtype=bool)
    for column in VALUE_COLUMNS:
        filled, mask = _interpolate_column(regular[column], column)
        regular[column] = filled
        interpolated |= mask
    regular['interpolated'] = interpolated
    if interpolated.any():
        logger.info('Interpolated %d rows', int(interpolated.sum()))
    return HourlyDataset(regular)


def _check_ranges(frame):
    for column in PERCENT_COLUMNS:
        values = frame[column].dropna()
        if ((values < 0) | (values > 100)).any():
            raise InvalidValue(f'{column} must be within [0, 100]')
    for column in DIRECTION_COLUMNS:
        values = frame[column].dropna()
        if ((values < 0) | (values > 360)).any():
            raise InvalidValue(f'{column} must be within [0, 360)')
        frame[column] = frame[column] % 360


def _interpolate_column(series, column):
    """
    Fill interior NaN runs. Leading and trailing NaNs (e.g. not yet observed load) are kept.
    """
    isnan = series.isna().to_numpy()
    if not isnan.any():
        return series, np.zeros(len(series), dtype=bool)
    valid = np.flatnonzero(~isnan)
    if len(valid) == 0:
        return series, np.zeros(len(series), dtype=bool)
    interior = isnan.copy()
    interior[:valid[0]] = False
    interior[valid[-1] + 1:] = False
    run_lengths = _run_lengths(interior)
    if run_lengths.size and run_lengths.max() > MAX_INTERPOLATED_GAP:
        raise GapTooLarge(f'{run_lengths.max()} consecutive missing values in {column}')
    if column in DIRECTION_COLUMNS:
        radians = np.deg2rad(series)
        sin = np.sin(radians).interpolate(limit_area='inside')
        cos = np.cos(radians).interpolate(limit_area='inside')
        filled = np.rad2deg(np.arctan2(sin, cos)) % 360
        filled[~interior & isnan] = np.nan
        filled[~isnan] = series[~isnan]
    else:
        filled = series.interpolate(limit_area='inside')
    return filled, interior


def _run_lengths(mask):
    padded = np.concatenate(([0], mask.astype(np.int8), [0]))
    edges = np.diff(padded)
    return np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)


def write_csv(ds, path):
    out = ds.frame[list(VALUE_COLUMNS)].copy()
    out.insert(0, 'timestamp', ds.frame.index.strftime('%Y-%m-%dT%H:%M:%SZ'))
    out.to_csv(path, index=False, na_rep='')


def time_of_year(timestamps):
    """
    0 at Jan 1st 00:00, 1 at Dec 31st 23:00 of the same year (leap years included).
    """
    timestamps = pd.DatetimeIndex(timestamps)
    year_start = timestamps.normalize() - pd.to_timedelta(timestamps.dayofyear - 1, unit='D')
    hours = (timestamps - year_start) / HOUR
    hours_in_year = np.where(timestamps.is_leap_year, 8784, 8760)
    return np.asarray(hours, dtype=float) / (hours_in_year - 1)


def exponential_smoothing(values, alpha):
    """
    s_t = alpha * s_{t-1} + (1 - alpha) * x_t with s_0 = x_0, starting at the first finite value.
    Interior NaNs are forward filled.
    """
    values = np.asarray(values, dtype=float)
    out = np.full(len(values), np.nan)
    finite = np.flatnonzero(np.isfinite(values))
    if len(finite) == 0:
        return out
    first = finite[0]
    tail = pd.Series(values[first:]).ffill().to_numpy()
    out[first:], _ = lfilter([1 - alpha], [1, -alpha], tail, zi=[alpha * tail[0]])
    return out


def shift(values, lag):
    """
    values[t - lag], NaN before the start.
    """
    values = np.asarray(values, dtype=float)
    out = np.full(len(values), np.nan)
    if lag < len(values):
        out[lag:] = values[:len(values) - lag]
    return out


def load_d_lag(hours):
    return np.where(np.asarray(hours) <= LAST_EARLY_HOUR, LOAD_D_EARLY_LAG, LOAD_D_LATE_LAG)


@dataclass(frozen=True)
class FeatureFrame:
    """
    Per-timestamp derived features aligned with the dataset rows.
    """
    frame: pd.DataFrame
    train_end: pd.Timestamp

    def __len__(self):
        return len(self.frame)

    @property
    def timestamps(self):
        return self.frame.index

    def column(self, name):
        return self.frame[name].to_numpy(copy=True)

    def rows(self, hour=None, start=None, end=None, fit_only=False):
        """
        Row positions, optionally restricted to an hour of day and an inclusive time window.
        """
        mask = np.ones(len(self.frame), dtype=bool)
        if hour is not None:
            mask &= self.frame['hour'].to_numpy() == hour
        if start is not None:
            mask &= self.frame.index >= to_utc(start)
        if end is not None:
            mask &= self.frame.index <= to_utc(end)
        if fit_only:
            mask &= self.frame['fit_ok'].to_numpy()
        return np.flatnonzero(mask)


LINEAR_WEATHER_FEATURES = ('temperature', 'cloud', 'pressure', 'wind_speed', 'wind_dir_sin', 'wind_dir_cos')


def build_features(ds, train_end=None, weather=None):
    """
    `weather` optionally maps variable ids to corrected forecast series replacing the raw forecasts.
    """
    if len(ds) < MIN_FEATURE_DAYS * 24:
        raise DatasetTooShort(f'Need at least {MIN_FEATURE_DAYS} days of data, got {len(ds)} hours')
    train_end = ds.end if train_end is None else to_utc(train_end)
    span_hours = (train_end - ds.start) / HOUR
    if span_hours <= 0:
        raise InvalidSegmentation('Training end must be after the start of the dataset')
    weather = dict(weather or {})

    index = ds.timestamps
    features = pd.DataFrame(index=index)
    hours = index.hour.to_numpy()
    features['hour'] = hours
    features['dow'] = index.dayofweek.to_numpy()
    features['toy'] = time_of_year(index)
    features['trend'] = np.arange(len(ds), dtype=float) / span_hours

    for variable, (_, forecast_column) in WEATHER_VARIABLES.items():
        if variable in weather:
            features[variable] = np.asarray(weather[variable], dtype=float)
        else:
            features[variable] = ds.column(forecast_column)
    radians = np.deg2rad(features['wind_dir'].to_numpy())
    features['wind_dir_sin'] = np.sin(radians)
    features['wind_dir_cos'] = np.cos(radians)
    features['temps95'] = exponential_smoothing(features['temperature'], 0.95)
    features['temps99'] = exponential_smoothing(features['temperature'], 0.99)

    load = ds.column('load')
    features['load'] = load
    features['load_d'] = np.where(
        hours <= LAST_EARLY_HOUR,
        shift(load, LOAD_D_EARLY_LAG),
        shift(load, LOAD_D_LATE_LAG),
    )
    features['load_w'] = shift(load, LOAD_W_LAG)

    required = ['load_d', 'load_w', 'temps95', 'temps99'] + list(LINEAR_WEATHER_FEATURES)
    forecastable = np.isfinite(features[required].to_numpy()).all(axis=1)
    features['forecastable'] = forecastable
    features['fit_ok'] = forecastable & np.isfinite(load) & ~ds.frame['interpolated'].to_numpy()
    return FeatureFrame(features, train_end)


def availability_cutoff(forecast_day):
    """
    Last timestamp whose observations are known when forecasting `forecast_day`.
    """
    return to_day(forecast_day) - DAY + CUTOFF_HOUR * HOUR


def available_history(ds, forecast_day):
    """
    Records visible when forecasting `forecast_day`: observations up to 8AM of the previous day,
    weather forecasts through the end of the forecast day.
    """
    day = to_day(forecast_day)
    cutoff = availability_cutoff(day)
    if cutoff.normalize() <= ds.start.normalize() or cutoff < ds.start:
        raise DayOutOfRange(f'No history available to forecast {day.date()}')
    if day + 23 * HOUR > ds.end:
        raise DayOutOfRange(f'{day.date()} is beyond the end of the dataset')
    frame = ds.frame.loc[:day + 23 * HOUR].copy()
    frame.loc[frame.index > cutoff, list(OBSERVED_COLUMNS)] = np.nan
    return HourlyDataset(frame)


@dataclass(frozen=True)
class Segmentation:
    """
    Time periods of a backtest. Windows are inclusive (start, end) timestamps.
    """
    train_end: pd.Timestamp
    adaptation_start: pd.Timestamp
    aggregation_start: pd.Timestamp
    validation_window: tuple
    test_window: tuple

    def __post_init__(self):
        validation_start, validation_end = self.validation_window
        test_start, test_end = self.test_window
        if validation_start > validation_end or test_start > test_end:
            raise InvalidSegmentation('Window start must not be after its end')
        if not self.adaptation_start < self.train_end:
            raise InvalidSegmentation('adaptation_start must be before train_end')
        if not (
            self.train_end <= self.aggregation_start <= validation_start <= test_start
        ):
            raise InvalidSegmentation(
                'Expected train_end <= aggregation_start <= validation start <= test start',
            )
        if validation_end >= test_start:
            raise InvalidSegmentation('Validation and test windows overlap')

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                train_end=to_utc(data['train_end']),
                adaptation_start=to_utc(data['adaptation_start']),
                aggregation_start=to_utc(data['aggregation_start']),
                validation_window=parse_window(data['validation']),
                test_window=parse_window(data['test']),
            )
        except KeyError as e:
            raise InvalidSegmentation(f'Missing segmentation key {e}') from e
        except ValueError as e:
            raise InvalidSegmentation(str(e)) from e

    def to_dict(self):
        return {
            'train_end': self.train_end.isoformat(),
            'adaptation_start': self.adaptation_start.isoformat(),
            'aggregation_start': self.aggregation_start.isoformat(),
            'validation': [ts.isoformat() for ts in self.validation_window],
            'test': [ts.isoformat() for ts in self.test_window],
        }


def parse_window(value):
    """
    Accepts [start, end] or "start:end" / "start/end". Date-only ends cover the whole day.
    """
    if isinstance(value, str):
        separator = '/' if '/' in value else ':'
        if value.count(separator) != 1:
            raise ValueError(f'Cannot parse window {value!r}, expected start:end with dates or start/end')
        value = value.split(separator)
    start, end = value
    end_ts = to_utc(end)
    if _is_date_only(end):
        end_ts += 23 * HOUR
    return to_utc(start), end_ts


def _is_date_only(value):
    return isinstance(value, str) and len(value.strip()) == 10
