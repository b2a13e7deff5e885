import numpy as np
import pandas as pd
import pytest

from .errors import InvalidScenario
from .synthetic import (
    Scenario, _coefficient_vector, gen_synthetic, load_design,
    observed_weather,
)


@pytest.mark.parametrize('scenario', [{'noise_scale': 0.0}], indirect=True)
def test_noiseless_load_reproduces_linear_form(scenario):
    ds = gen_synthetic(scenario, seed=1)
    design = load_design(ds.timestamps, observed_weather(ds))
    profile = np.asarray(scenario.hour_profile)[ds.timestamps.hour]
    expected = design @ _coefficient_vector(scenario.coefficients) + profile
    np.testing.assert_allclose(ds.column('load'), expected, rtol=1e-12)


def test_same_seed_is_bit_identical(scenario):
    first = gen_synthetic(scenario, seed=5)
    second = gen_synthetic(scenario, seed=5)
    pd.testing.assert_frame_equal(first.frame, second.frame)


def test_other_seed_differs(scenario):
    assert not np.array_equal(
        gen_synthetic(scenario, seed=5).column('load'),
        gen_synthetic(scenario, seed=6).column('load'),
    )


@pytest.mark.parametrize('scenario', [{'noise_scale': 0.0}], indirect=True)
def test_break_scales_load(scenario):
    break_date = pd.Timestamp('2019-02-01', tz='UTC')
    broken = Scenario.from_dict({**scenario.to_dict(), 'break_date': break_date, 'break_scale': 0.8})
    plain = gen_synthetic(scenario, seed=2).column('load')
    scaled = gen_synthetic(broken, seed=2).column('load')
    after = gen_synthetic(broken, seed=2).timestamps >= break_date
    np.testing.assert_allclose(scaled[~after], plain[~after])
    np.testing.assert_allclose(scaled[after], 0.8 * plain[after])


def test_generated_weather_ranges(dataset):
    cloud = dataset.column('cloud_fc')
    assert ((cloud >= 0) & (cloud <= 100)).all()
    wind_dir = dataset.column('wind_dir_obs')
    assert ((wind_dir >= 0) & (wind_dir < 360)).all()
    assert (dataset.column('wind_speed_fc') >= 0).all()
    assert len(dataset) == 60 * 24


def test_forecast_errors_are_daily_correlated():
    scenario = Scenario.from_dict({'start': '2019-01-01', 'days': 400, 'forecast_error_ar': 0.9})
    ds = gen_synthetic(scenario, seed=0)
    residual = ds.column('temp_obs') - ds.column('temp_fc')
    correlation = np.corrcoef(residual[24:], residual[:-24])[0, 1]
    assert correlation > 0.7


@pytest.mark.parametrize('data', [
    {'start': '2019-01-01', 'days': 5},
    {'start': '2019-01-01', 'days': 30, 'coefficients': {'humidity': 1.0}},
    {'start': '2019-01-01', 'days': 30, 'break_date': '2020-01-01'},
    {'start': '2019-01-01', 'days': 30, 'noise_ar': 1.5},
    {'start': '2019-01-01', 'days': 30, 'hour_profile': [0.0] * 23},
    {'days': 30},
])
def test_invalid_scenario(data):
    with pytest.raises(InvalidScenario):
        Scenario.from_dict(data)
