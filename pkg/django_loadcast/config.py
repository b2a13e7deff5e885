"""
Backtest configuration: a JSON document parsed into frozen dataclasses.
"""
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .kalman import MIN_EXPONENT, SETTINGS
from .mlp import MLPConfig
from .synthetic import Scenario
from .timeseries import Segmentation, to_utc
from .viking import DEFAULT_ITERS, DEFAULT_PRIOR_VARIANCE, DEFAULT_RHO
from .weather import (
    CORRECTABLE_VARIABLES, DEFAULT_DAILY_ORDERS, DEFAULT_HOURLY_ORDERS,
)


OFFLINE = 'offline'
VIKING = 'viking'
ADAPTIVE_SETTINGS = SETTINGS + (VIKING,)
ALL_SETTINGS = (OFFLINE,) + ADAPTIVE_SETTINGS

# roster family tag -> expert family
FAMILIES = {
    'AR': 'AR',
    'Lin': 'Linear',
    'GAM': 'SplineAdditive',
    'GAM_SAT': 'GamSat',
    'MLP': 'MLP',
}


def member_name(family, setting=OFFLINE, quantile=None, corrected=False):
    """
    <Family>[_<setting>][<q%>][_corr], e.g. Lin_dynamic_big_corr or MLP_dynamic60.
    """
    name = family if setting == OFFLINE else f'{family}_{setting}'
    if quantile is not None:
        name += f'{round(quantile * 100):d}'
    if corrected:
        name += '_corr'
    return name


@dataclass(frozen=True)
class RosterEntry:
    family: str
    settings: tuple = (OFFLINE,)
    intraday: bool = False
    quantiles: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f'Unknown expert family {self.family!r}, expected one of {", ".join(FAMILIES)}')
        for setting in self.settings:
            if setting not in ALL_SETTINGS:
                raise ConfigError(f'Unknown adaptation setting {setting!r} for {self.family}')
        for level in self.quantiles:
            if not 0 < level < 1:
                raise ConfigError(f'Quantile levels must lie in (0, 1), got {level}')

    def members(self):
        """
        (name, setting, quantile, corrected) for every roster member of this entry.
        """
        out = []
        for setting in self.settings:
            out.append((member_name(self.family, setting), setting, None, False))
            if self.intraday:
                out.append((member_name(self.family, setting, corrected=True), setting, None, True))
            if setting != OFFLINE:
                for level in self.quantiles:
                    out.append((member_name(self.family, setting, level), setting, level, False))
        return out

    def to_dict(self):
        return {
            'family': self.family,
            'settings': list(self.settings),
            'intraday': self.intraday,
            'quantiles': list(self.quantiles),
        }


@dataclass(frozen=True)
class KalmanConfig:
    break_date: object = None
    grid_min_exponent: int = MIN_EXPONENT
    grid_step: int = 1
    big_window_days: int = 182

    def to_dict(self):
        return {
            'break_date': self.break_date.isoformat() if self.break_date is not None else None,
            'grid_min_exponent': self.grid_min_exponent,
            'grid_step': self.grid_step,
            'big_window_days': self.big_window_days,
        }


@dataclass(frozen=True)
class VikingConfig:
    rho_a: float = DEFAULT_RHO
    rho_b: float = DEFAULT_RHO
    s0: float = DEFAULT_PRIOR_VARIANCE
    Sigma0: float = DEFAULT_PRIOR_VARIANCE
    iters: int = DEFAULT_ITERS

    def to_dict(self):
        return {'rho_a': self.rho_a, 'rho_b': self.rho_b, 's0': self.s0, 'Sigma0': self.Sigma0, 'iters': self.iters}


@dataclass(frozen=True)
class WeatherConfig:
    correct: bool = True
    variables: tuple = CORRECTABLE_VARIABLES
    p: tuple = DEFAULT_HOURLY_ORDERS
    P: tuple = DEFAULT_DAILY_ORDERS
    use_observed: bool = False

    def to_dict(self):
        return {
            'correct': self.correct,
            'variables': list(self.variables),
            'p': list(self.p),
            'P': list(self.P),
            'use_observed': self.use_observed,
        }


@dataclass(frozen=True)
class AggregationConfig:
    enabled: bool = True
    per_family: bool = False
    select_max_size: int = None

    def to_dict(self):
        return {'enabled': self.enabled, 'per_family': self.per_family, 'select_max_size': self.select_max_size}


@dataclass(frozen=True)
class PipelineConfig:
    segmentation: Segmentation
    roster: tuple = ()
    dataset: str = None
    schema: dict = None
    scenario: Scenario = None
    seed: int = 0
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    viking: VikingConfig = field(default_factory=VikingConfig)
    weather: WeatherConfig = field(default_factory=WeatherConfig)
    mlp: MLPConfig = field(default_factory=MLPConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    output_dir: str = 'loadcast-report'
    record_history: bool = False

    def __post_init__(self):
        if (self.dataset is None) == (self.scenario is None):
            raise ConfigError('Exactly one of "dataset" and "scenario" must be given')
        names = [name for entry in self.roster for name, *_ in entry.members()]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ConfigError(f'Duplicate roster members: {", ".join(duplicates)}')
        needs_break = any(
            setting in ('static_break', 'dynamic_break') for entry in self.roster for setting in entry.settings
        )
        if needs_break and self.kalman.break_date is None:
            raise ConfigError('Break settings need "kalman.break_date"')

    def members(self):
        return [(entry, *member) for entry in self.roster for member in entry.members()]

    def to_dict(self):
        return {
            'dataset': self.dataset,
            'schema': self.schema,
            'scenario': self.scenario.to_dict() if self.scenario is not None else None,
            'seed': self.seed,
            'segmentation': self.segmentation.to_dict(),
            'roster': [entry.to_dict() for entry in self.roster],
            'kalman': self.kalman.to_dict(),
            'viking': self.viking.to_dict(),
            'weather': self.weather.to_dict(),
            'mlp': self.mlp.to_dict(),
            'aggregation': self.aggregation.to_dict(),
            'output_dir': self.output_dir,
            'record_history': self.record_history,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _section(data, key, factory, convert=None):
    section = dict(data.get(key) or {})
    if convert:
        section = convert(section)
    try:
        return factory(**section)
    except TypeError as e:
        raise ConfigError(f'Invalid "{key}" section: {e}') from e


def _kalman(section):
    if section.get('break_date') is not None:
        section['break_date'] = _timestamp(section['break_date'], 'kalman.break_date')
    return section


def _tuples(*keys):
    def convert(section):
        for key in keys:
            if key in section:
                section[key] = tuple(section[key])
        return section
    return convert


def _timestamp(value, key):
    try:
        return to_utc(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f'Invalid timestamp for {key}: {value!r}') from e


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError('Configuration must be a JSON object')
    if 'segmentation' not in data:
        raise ConfigError('Missing "segmentation"')
    roster = []
    for item in data.get('roster', []):
        try:
            roster.append(RosterEntry(
                family=item['family'],
                settings=tuple(item.get('settings', (OFFLINE,))),
                intraday=bool(item.get('intraday', False)),
                quantiles=tuple(item.get('quantiles', ())),
            ))
        except KeyError as e:
            raise ConfigError(f'Roster entry without {e}') from e
    scenario = Scenario.from_dict(data['scenario']) if data.get('scenario') else None
    try:
        mlp = MLPConfig.from_dict(data.get('mlp'))
    except TypeError as e:
        raise ConfigError(f'Invalid "mlp" section: {e}') from e
    return PipelineConfig(
        segmentation=Segmentation.from_dict(data['segmentation']),
        roster=tuple(roster),
        dataset=data.get('dataset'),
        schema=data.get('schema'),
        scenario=scenario,
        seed=int(data.get('seed', 0)),
        kalman=_section(data, 'kalman', KalmanConfig, _kalman),
        viking=_section(data, 'viking', VikingConfig),
        weather=_section(data, 'weather', WeatherConfig, _tuples('variables', 'p', 'P')),
        mlp=mlp,
        aggregation=_section(data, 'aggregation', AggregationConfig),
        output_dir=data.get('output_dir', 'loadcast-report'),
        record_history=bool(data.get('record_history', False)),
    )


def load_config(path):
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f'{path} is not valid JSON: {e}') from e
    except OSError as e:
        raise ConfigError(f'Cannot read configuration {path}: {e}') from e
    return config_from_dict(data)
