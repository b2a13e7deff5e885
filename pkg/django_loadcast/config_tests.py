import json

import pandas as pd
import pytest

from .config import (
    OFFLINE, PipelineConfig, RosterEntry, config_from_dict, load_config,
    member_name,
)
from .errors import ConfigError, InvalidScenario, InvalidSegmentation
from .factories import config_data


def test_parse_config():
    cfg = config_from_dict(config_data())
    assert cfg.dataset is None
    assert cfg.scenario.days == 240
    assert cfg.seed == 7
    assert cfg.segmentation.train_end == pd.Timestamp('2019-03-31 23:00', tz='UTC')
    assert cfg.segmentation.test_window[1] == pd.Timestamp('2019-05-20 23:00', tz='UTC')
    assert cfg.roster == (RosterEntry('Lin', (OFFLINE, 'static', 'dynamic_big')),)
    assert cfg.weather.correct is False
    assert cfg.kalman.grid_min_exponent == -20
    assert cfg.aggregation.enabled is True
    assert cfg.mlp.hidden == (15, 10)


def test_config_survives_its_lock_file():
    cfg = config_from_dict(config_data(
        kalman={'break_date': '2019-03-17', 'grid_step': 2},
        roster=[{'family': 'GAM', 'settings': ['static_break', 'viking'], 'quantiles': [0.6], 'intraday': True}],
    ))
    assert config_from_dict(json.loads(cfg.dumps())).dumps() == cfg.dumps()


@pytest.mark.parametrize('family, setting, quantile, corrected, expected', [
    ('GAM', OFFLINE, None, False, 'GAM'),
    ('Lin', 'dynamic_big', None, True, 'Lin_dynamic_big_corr'),
    ('MLP', 'dynamic', 0.6, False, 'MLP_dynamic60'),
    ('MLP', 'dynamic', 0.99, False, 'MLP_dynamic99'),
])
def test_member_name(family, setting, quantile, corrected, expected):
    assert member_name(family, setting, quantile, corrected) == expected


def test_roster_entry_members():
    entry = RosterEntry('Lin', (OFFLINE, 'dynamic'), intraday=True, quantiles=(0.5, 0.9))
    assert [name for name, *_ in entry.members()] == [
        'Lin', 'Lin_corr', 'Lin_dynamic', 'Lin_dynamic_corr', 'Lin_dynamic50', 'Lin_dynamic90',
    ]


@pytest.mark.parametrize('roster', [
    [{'family': 'RF'}],
    [{'family': 'Lin', 'settings': ['wobbly']}],
    [{'family': 'Lin', 'settings': ['dynamic'], 'quantiles': [1.5]}],
    [{'family': 'Lin'}, {'family': 'Lin'}],
    [{'settings': ['static']}],
    [{'family': 'Lin', 'settings': ['static_break']}],
])
def test_invalid_roster(roster):
    with pytest.raises(ConfigError):
        config_from_dict(config_data(roster=roster))


def test_break_date_is_parsed():
    cfg = config_from_dict(config_data(
        kalman={'break_date': '2019-03-17'},
        roster=[{'family': 'Lin', 'settings': ['dynamic_break']}],
    ))
    assert cfg.kalman.break_date == pd.Timestamp('2019-03-17', tz='UTC')


@pytest.mark.parametrize('overrides, error', [
    ({'dataset': 'load.csv'}, ConfigError),
    ({'scenario': None}, ConfigError),
    ({'kalman': {'break_date': 'soon'}}, ConfigError),
    ({'kalman': {'grid_size': 3}}, ConfigError),
    ({'mlp': {'layers': 3}}, ConfigError),
    ({'scenario': {'start': '2019-01-01', 'days': 0}}, InvalidScenario),
    ({'segmentation': {'train_end': '2019-03-31'}}, InvalidSegmentation),
])
def test_invalid_config(overrides, error):
    with pytest.raises(error):
        config_from_dict(config_data(**overrides))


def test_invalid_segmentation_is_a_config_error():
    assert issubclass(InvalidSegmentation, ConfigError)
    assert issubclass(InvalidScenario, ConfigError)


def test_missing_segmentation():
    data = config_data()
    del data['segmentation']
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_load_config(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps(config_data(seed=11)), encoding='utf-8')
    assert isinstance(load_config(path), PipelineConfig)
    assert load_config(path).seed == 11


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'missing.json')
    path = tmp_path / 'broken.json'
    path.write_text('{"seed": ', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(path)
