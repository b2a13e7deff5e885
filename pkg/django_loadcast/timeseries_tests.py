import numpy as np
import pandas as pd
import pytest

from .errors import (
    DatasetTooShort, DayOutOfRange, GapTooLarge, InvalidSegmentation,
    InvalidValue, MissingColumn, NonMonotonicTimestamp,
)
from .timeseries import (
    CSV_COLUMNS, HOUR, Segmentation, availability_cutoff, available_history,
    build_features, exponential_smoothing, from_frame, ingest_csv,
    parse_window, time_of_year,
)


def hourly_frame(start='2019-01-01', hours=24 * 10, **columns):
    index = pd.date_range(start, periods=hours, freq='h', tz='UTC', name='timestamp')
    values = {
        'load': np.arange(hours, dtype=float),
        'temp_fc': np.full(hours, 10.0), 'temp_obs': np.full(hours, 11.0),
        'cloud_fc': np.full(hours, 50.0), 'cloud_obs': np.full(hours, 40.0),
        'pressure_fc': np.full(hours, 101.0), 'pressure_obs': np.full(hours, 101.2),
        'wind_speed_fc': np.full(hours, 10.0), 'wind_speed_obs': np.full(hours, 12.0),
        'wind_dir_fc': np.full(hours, 180.0), 'wind_dir_obs': np.full(hours, 190.0),
    }
    values.update(columns)
    return pd.DataFrame(values, index=index)


def write_rows(path, timestamps, header=CSV_COLUMNS, cloud='50'):
    lines = [','.join(header)]
    for i, timestamp in enumerate(timestamps):
        lines.append(f'{timestamp},{1000 + i},10,11,{cloud},40,101,101,10,12,180,190')
    path.write_text('\n'.join(lines) + '\n')
    return path


def test_ingest_well_formed(tmp_path):
    path = write_rows(tmp_path / 'data.csv', [
        '2019-01-01T00:00:00Z', '2019-01-01T01:00:00Z', '2019-01-01T02:00:00Z',
    ])
    ds = ingest_csv(path)
    assert len(ds) == 3
    assert not ds.frame['interpolated'].any()
    assert list(ds.column('load')) == [1000, 1001, 1002]


def test_ingest_interpolates_single_gap(tmp_path):
    path = write_rows(tmp_path / 'data.csv', ['2019-01-01T00:00:00Z', '2019-01-01T02:00:00Z'])
    ds = ingest_csv(path)
    assert len(ds) == 3
    assert ds.column('load')[1] == pytest.approx(1000.5)
    assert list(ds.frame['interpolated']) == [False, True, False]


def test_ingest_gap_too_large(tmp_path):
    path = write_rows(tmp_path / 'data.csv', ['2019-01-01T00:00:00Z', '2019-01-01T06:00:00Z'])
    with pytest.raises(GapTooLarge):
        ingest_csv(path)


def test_ingest_missing_column(tmp_path):
    header = tuple(column for column in CSV_COLUMNS if column != 'wind_dir_obs') + ('other',)
    path = write_rows(tmp_path / 'data.csv', ['2019-01-01T00:00:00Z'], header=header)
    with pytest.raises(MissingColumn):
        ingest_csv(path)


def test_ingest_schema_renames_columns(tmp_path):
    header = ('time',) + CSV_COLUMNS[1:]
    path = write_rows(tmp_path / 'data.csv', ['2019-01-01T00:00:00Z'], header=header)
    ds = ingest_csv(path, {'timestamp': 'time'})
    assert ds.start == pd.Timestamp('2019-01-01', tz='UTC')


def test_ingest_rejects_unordered_timestamps(tmp_path):
    path = write_rows(tmp_path / 'data.csv', ['2019-01-01T01:00:00Z', '2019-01-01T00:00:00Z'])
    with pytest.raises(NonMonotonicTimestamp):
        ingest_csv(path)


def test_ingest_rejects_percent_out_of_range(tmp_path):
    path = write_rows(tmp_path / 'data.csv', ['2019-01-01T00:00:00Z'], cloud='120')
    with pytest.raises(InvalidValue):
        ingest_csv(path)


def test_interpolated_wind_direction_wraps():
    frame = hourly_frame(hours=3, wind_dir_fc=[350.0, np.nan, 10.0])
    value = from_frame(frame).column('wind_dir_fc')[1]
    assert min(value, 360 - value) == pytest.approx(0, abs=1e-6)


def test_constant_temperature_is_smoothing_fixed_point():
    features = build_features(from_frame(hourly_frame()))
    assert np.allclose(features.column('temps95'), 10.0)
    assert np.allclose(features.column('temps99'), 10.0)


def test_smoothing_recursion():
    temperature = np.array([0.0, 10.0, 20.0, 5.0])
    smoothed = exponential_smoothing(temperature, 0.95)
    assert smoothed[0] == 0.0
    assert smoothed[1] == pytest.approx(0.5)
    assert smoothed[2] == pytest.approx(0.95 * 0.5 + 0.05 * 20)


def test_smoothing_stays_within_prefix_range():
    temperature = np.random.default_rng(0).normal(10, 5, size=500)
    smoothed = exponential_smoothing(temperature, 0.99)
    assert (smoothed >= np.minimum.accumulate(temperature) - 1e-9).all()
    assert (smoothed <= np.maximum.accumulate(temperature) + 1e-9).all()


def test_load_lags_honor_availability():
    ds = from_frame(hourly_frame())
    features = build_features(ds)
    load = ds.column('load')
    day = pd.Timestamp('2019-01-09', tz='UTC')
    early = ds.position(day + 3 * HOUR)
    late = ds.position(day + 15 * HOUR)
    assert features.column('load_d')[early] == load[ds.position(day - pd.Timedelta(days=1) + 3 * HOUR)]
    assert features.column('load_d')[late] == load[ds.position(day - pd.Timedelta(days=2) + 15 * HOUR)]
    assert features.column('load_w')[late] == load[late - 168]


def test_rows_without_lags_are_not_forecastable():
    features = build_features(from_frame(hourly_frame()))
    forecastable = features.column('forecastable')
    assert not forecastable[:168].any()
    assert forecastable[168:].all()


def test_interpolated_rows_are_not_fitted():
    load = np.arange(240, dtype=float)
    load[200] = np.nan
    features = build_features(from_frame(hourly_frame(load=load)))
    fit_ok = features.column('fit_ok')
    assert not fit_ok[200]
    assert fit_ok[201]


def test_build_features_needs_eight_days():
    with pytest.raises(DatasetTooShort):
        build_features(from_frame(hourly_frame(hours=24 * 7)))


def test_time_of_year_bounds():
    toy = time_of_year(pd.DatetimeIndex(['2019-01-01 00:00', '2019-12-31 23:00', '2020-12-31 23:00'], tz='UTC'))
    assert toy[0] == 0
    assert toy[1] == pytest.approx(1)
    assert toy[2] == pytest.approx(1)


def test_time_of_year_is_yearly_periodic():
    first = time_of_year(pd.DatetimeIndex(['2018-03-05 13:00'], tz='UTC'))
    second = time_of_year(pd.DatetimeIndex(['2019-03-05 13:00'], tz='UTC'))
    assert abs(first[0] - second[0]) < 1 / 8760


def test_trend_scaled_by_training_span():
    ds = from_frame(hourly_frame())
    features = build_features(ds, train_end=ds.start + 100 * HOUR)
    assert features.column('trend')[100] == pytest.approx(1.0)
    assert features.column('trend')[-1] > 1


def test_available_history_masks_late_load():
    ds = from_frame(hourly_frame())
    day = pd.Timestamp('2019-01-05', tz='UTC')
    history = available_history(ds, day)
    load = history.frame['load'].dropna()
    assert load.index[-1] == pd.Timestamp('2019-01-04 08:00', tz='UTC')
    assert (history.frame.index[history.frame['load'].notna()] <= availability_cutoff(day)).all()


def test_available_history_keeps_weather_forecasts():
    ds = from_frame(hourly_frame())
    day = pd.Timestamp('2019-01-05', tz='UTC')
    history = available_history(ds, day)
    assert history.end == day + 23 * HOUR
    assert np.isfinite(history.frame.loc[day + 23 * HOUR, 'temp_fc'])
    assert np.isnan(history.frame.loc[day + 23 * HOUR, 'temp_obs'])


@pytest.mark.parametrize('day', ['2019-01-02', '2019-01-11'])
def test_available_history_out_of_range(day):
    ds = from_frame(hourly_frame())
    with pytest.raises(DayOutOfRange):
        available_history(ds, day)


def test_parse_window_date_only_end_covers_day():
    start, end = parse_window('2019-04-01:2019-04-30')
    assert start == pd.Timestamp('2019-04-01', tz='UTC')
    assert end == pd.Timestamp('2019-04-30 23:00', tz='UTC')


def test_segmentation_order_is_checked():
    with pytest.raises(InvalidSegmentation):
        Segmentation.from_dict({
            'train_end': '2019-03-31',
            'adaptation_start': '2019-01-01',
            'aggregation_start': '2019-03-01',
            'validation': '2019-04-01:2019-04-30',
            'test': '2019-05-01:2019-05-20',
        })


def test_segmentation_rejects_overlapping_windows():
    with pytest.raises(InvalidSegmentation):
        Segmentation.from_dict({
            'train_end': '2019-03-31',
            'adaptation_start': '2019-01-01',
            'aggregation_start': '2019-04-01',
            'validation': '2019-04-01:2019-05-05',
            'test': '2019-05-01:2019-05-20',
        })
