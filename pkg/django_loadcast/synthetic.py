"""
Synthetic hourly datasets: generated weather, physical-style forecasts with
daily-autocorrelated errors and a load that is linear in the weather and
calendar covariates, with coefficients switching at an optional break date.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .errors import InvalidScenario
from .timeseries import (
    HOUR, MIN_FEATURE_DAYS, from_frame, time_of_year, to_utc,
)


logger = logging.getLogger(__name__)


LOAD_FEATURES = (
    'intercept',
    'temperature', 'heating',
    'cloud', 'pressure', 'wind_speed', 'wind_dir_sin', 'wind_dir_cos',
    'toy', 'toy_cos', 'trend',
    'dow_1', 'dow_2', 'dow_3', 'dow_4', 'dow_5', 'dow_6',
)
HEATING_THRESHOLD = 15.0

DEFAULT_COEFFICIENTS = {
    'intercept': 1000.0,
    'temperature': -6.0,
    'heating': 18.0,
    'cloud': 0.4,
    'pressure': 1.5,
    'wind_speed': 0.8,
    'wind_dir_sin': 4.0,
    'wind_dir_cos': -3.0,
    'toy_cos': 60.0,
    'trend': 40.0,
    'dow_5': -110.0,
    'dow_6': -140.0,
}
DEFAULT_HOUR_PROFILE = tuple(
    round(120 * np.sin(np.pi * (h - 5) / 14) if 5 <= h <= 19 else -60.0, 6)
    for h in range(24)
)

# mean, seasonal amplitude, hourly anomaly (AR coefficient, innovation scale)
WEATHER_SHAPES = {
    'temperature': (12.0, 9.0, 0.97, 0.6),
    'cloud': (55.0, 10.0, 0.95, 6.0),
    'pressure': (101.3, 0.3, 0.99, 0.08),
    'wind_speed': (14.0, 3.0, 0.9, 1.5),
    'wind_dir': (220.0, 0.0, 0.98, 6.0),
}
# typical forecast error magnitude per variable, scaled by forecast_error_scale
FORECAST_ERRORS = {
    'temperature': 1.5,
    'cloud': 12.0,
    'pressure': 0.15,
    'wind_speed': 2.5,
    'wind_dir': 20.0,
}


@dataclass(frozen=True)
class Scenario:
    start: pd.Timestamp
    days: int
    coefficients: dict = field(default_factory=lambda: dict(DEFAULT_COEFFICIENTS))
    hour_profile: tuple = DEFAULT_HOUR_PROFILE
    break_date: pd.Timestamp = None
    break_scale: float = 1.0
    coefficients_after: dict = None
    noise_scale: float = 10.0
    noise_ar: float = 0.0
    forecast_error_scale: float = 1.0
    forecast_error_ar: float = 0.9

    def __post_init__(self):
        if self.days < MIN_FEATURE_DAYS:
            raise InvalidScenario(f'Scenario must span at least {MIN_FEATURE_DAYS} days')
        for coefficients in (self.coefficients, self.coefficients_after or {}):
            unknown = set(coefficients) - set(LOAD_FEATURES)
            if unknown:
                raise InvalidScenario(f'Unknown load features: {", ".join(sorted(unknown))}')
        if len(self.hour_profile) != 24:
            raise InvalidScenario('hour_profile must have 24 values')
        if self.noise_scale < 0 or self.forecast_error_scale < 0:
            raise InvalidScenario('Noise scales must be non-negative')
        if not (-1 < self.noise_ar < 1 and -1 < self.forecast_error_ar < 1):
            raise InvalidScenario('AR coefficients must lie in (-1, 1)')
        if self.break_date is not None and not self.start < self.break_date < self.end:
            raise InvalidScenario('break_date must fall strictly inside the scenario span')

    @property
    def end(self):
        return self.start + pd.Timedelta(days=self.days) - HOUR

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        try:
            data['start'] = to_utc(data['start'])
            if data.get('break_date') is not None:
                data['break_date'] = to_utc(data['break_date'])
            if 'hour_profile' in data:
                data['hour_profile'] = tuple(float(v) for v in data['hour_profile'])
            return cls(**data)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidScenario(f'Invalid scenario: {e}') from e

    def to_dict(self):
        return {
            'start': self.start.isoformat(),
            'days': self.days,
            'coefficients': dict(self.coefficients),
            'hour_profile': list(self.hour_profile),
            'break_date': self.break_date.isoformat() if self.break_date is not None else None,
            'break_scale': self.break_scale,
            'coefficients_after': dict(self.coefficients_after) if self.coefficients_after else None,
            'noise_scale': self.noise_scale,
            'noise_ar': self.noise_ar,
            'forecast_error_scale': self.forecast_error_scale,
            'forecast_error_ar': self.forecast_error_ar,
        }


def gen_synthetic(scenario, seed):
    """
    Deterministic for a fixed seed. Returns an HourlyDataset.
    """
    rng = np.random.default_rng(seed)
    index = pd.date_range(scenario.start, scenario.end, freq='h', name='timestamp')
    n = len(index)
    toy = time_of_year(index)
    hours = index.hour.to_numpy()

    observed = {}
    for variable, (mean, amplitude, phi, scale) in WEATHER_SHAPES.items():
        anomaly = lfilter([scale], [1, -phi], rng.standard_normal(n))
        observed[variable] = mean - amplitude * np.cos(2 * np.pi * toy) + anomaly
    observed['temperature'] += 3.0 * np.sin(2 * np.pi * (hours - 9) / 24)
    observed['cloud'] = np.clip(observed['cloud'], 0, 100)
    observed['wind_speed'] = np.abs(observed['wind_speed'])
    observed['wind_dir'] = np.mod(observed['wind_dir'], 360)

    forecasts = {}
    daily_ar = np.r_[1, np.zeros(23), -scenario.forecast_error_ar]
    for variable, observed_values in observed.items():
        innovation_scale = FORECAST_ERRORS[variable] * scenario.forecast_error_scale
        innovation_scale *= np.sqrt(1 - scenario.forecast_error_ar ** 2)
        residual = lfilter([1], daily_ar, innovation_scale * rng.standard_normal(n))
        forecasts[variable] = observed_values - residual
    forecasts['cloud'] = np.clip(forecasts['cloud'], 0, 100)
    forecasts['wind_speed'] = np.abs(forecasts['wind_speed'])
    forecasts['wind_dir'] = np.mod(forecasts['wind_dir'], 360)

    design = load_design(index, observed, n)
    profile = np.asarray(scenario.hour_profile)[hours]
    before = design @ _coefficient_vector(scenario.coefficients) + profile
    if scenario.break_date is None:
        load = before
    else:
        after_mask = index >= scenario.break_date
        if scenario.coefficients_after is not None:
            after = design @ _coefficient_vector(scenario.coefficients_after) + profile
        else:
            after = before
        load = np.where(after_mask, scenario.break_scale * after, before)
    noise = lfilter([scenario.noise_scale], [1, -scenario.noise_ar], rng.standard_normal(n))
    load = load + noise

    frame = pd.DataFrame({
        'load': load,
        'temp_fc': forecasts['temperature'], 'temp_obs': observed['temperature'],
        'cloud_fc': forecasts['cloud'], 'cloud_obs': observed['cloud'],
        'pressure_fc': forecasts['pressure'], 'pressure_obs': observed['pressure'],
        'wind_speed_fc': forecasts['wind_speed'], 'wind_speed_obs': observed['wind_speed'],
        'wind_dir_fc': forecasts['wind_dir'], 'wind_dir_obs': observed['wind_dir'],
    }, index=index)
    logger.info(
        'Generated %d synthetic hours from %s (break %s)',
        n, scenario.start, scenario.break_date,
    )
    return from_frame(frame)


def load_design(index, observed, n=None):
    """
    Columns ordered as LOAD_FEATURES, computed from observed weather.
    """
    n = len(index) if n is None else n
    dow = index.dayofweek.to_numpy()
    radians = np.deg2rad(observed['wind_dir'])
    columns = {
        'intercept': np.ones(n),
        'temperature': observed['temperature'],
        'heating': np.maximum(HEATING_THRESHOLD - observed['temperature'], 0),
        'cloud': observed['cloud'],
        'pressure': observed['pressure'],
        'wind_speed': observed['wind_speed'],
        'wind_dir_sin': np.sin(radians),
        'wind_dir_cos': np.cos(radians),
        'toy': time_of_year(index),
        'toy_cos': np.cos(2 * np.pi * time_of_year(index)),
        'trend': np.arange(n) / max(n - 1, 1),
    }
    for day in range(1, 7):
        columns[f'dow_{day}'] = (dow == day).astype(float)
    return np.column_stack([columns[name] for name in LOAD_FEATURES])


def observed_weather(ds):
    return {
        'temperature': ds.column('temp_obs'),
        'cloud': ds.column('cloud_obs'),
        'pressure': ds.column('pressure_obs'),
        'wind_speed': ds.column('wind_speed_obs'),
        'wind_dir': ds.column('wind_dir_obs'),
    }


def _coefficient_vector(coefficients):
    return np.array([coefficients.get(name, 0.0) for name in LOAD_FEATURES])
