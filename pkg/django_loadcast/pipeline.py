"""
Day-ahead backtest. For every forecast day d, the adaptive streams absorb the
load observed up to 8AM of day d-1 and then forecast the 24 hours of day d.
Offline experts, intraday corrections and aggregations are derived from the
recorded forecasts in the same causal order.
"""
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from django.conf import settings

from .aggregation import (
    Selection, greedy_select, mean_absolute_error, replay_mlpoly,
    weights_frame,
)
from .config import FAMILIES, OFFLINE, VIKING, member_name
from .errors import (
    BacktestError, ConfigError, DayOutOfRange, EmptyWindow, ModelError,
)
from .experts import expert_from_dict, fit_family, gam_sat
from .intraday import replay_intraday
from .kalman import (
    KalmanBank, gaussian_quantile, greedy_q_searches, make_setting,
    select_big_qs, variance_grid,
)
from .synthetic import gen_synthetic, observed_weather
from .timeseries import (
    DAY, HOUR, availability_cutoff, build_features, ingest_csv, parse_window,
    to_day, to_utc,
)
from .viking import VikingBank, init_viking
from .weather import (
    WeatherCorrectionModel, compare_weather_forecasts, corrected_weather,
    fit_corrections,
)


logger = logging.getLogger(__name__)


AGGREGATION = 'aggregation'
SELECTED = 'aggregation_selected'
TIMESTAMP_FORMAT = '%Y-%m-%dT%H:%M:%SZ'


def _threads():
    return max(1, int(getattr(settings, 'LOADCAST_THREADS', 1)))


def _map(func, items):
    items = list(items)
    threads = _threads()
    if threads == 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _floats(values):
    return [float(v) if np.isfinite(v) else None for v in np.asarray(values, dtype=float)]


def _json_float(value):
    return float(value) if np.isfinite(value) else None


def load_dataset(cfg):
    if cfg.dataset is not None:
        return ingest_csv(cfg.dataset, cfg.schema)
    return gen_synthetic(cfg.scenario, cfg.seed)


class Stream:
    """
    One adaptive copy of an expert: 24 hourly filters over the expert's feature map,
    with the predictive mean and variance recorded for every forecast row.
    """
    def __init__(self, name, family, setting, bank, n):
        self.name = name
        self.family = family
        self.setting = setting
        self.bank = bank
        self.mean = np.full(n, np.nan)
        self.variance = np.full(n, np.nan)
        self.history = []

    def to_dict(self):
        return {
            'family': self.family,
            'setting': self.setting,
            'bank': self.bank.to_dict(),
            'mean': _floats(self.mean),
            'variance': _floats(self.variance),
            'history': [[day.isoformat(), thetas.tolist()] for day, thetas in self.history],
        }

    @classmethod
    def from_dict(cls, name, data):
        bank_data = data['bank']
        bank = KalmanBank.from_dict(bank_data) if bank_data['kind'] == 'kalman' else VikingBank.from_dict(bank_data)
        stream = cls(name, data['family'], data['setting'], bank, len(data['mean']))
        stream.mean = np.array(data['mean'], dtype=float)
        stream.variance = np.array(data['variance'], dtype=float)
        stream.history = [(to_utc(day), np.asarray(thetas, dtype=float)) for day, thetas in data['history']]
        return stream


@dataclass
class BacktestReport:
    """
    Hourly forecasts of every roster member (and aggregations) over the test window.
    """
    timestamps: pd.DatetimeIndex
    actual: np.ndarray
    forecasts: dict
    weights: pd.DataFrame = None
    selection: Selection = None
    weather: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)
    config: object = None

    @property
    def test_window(self):
        return self.timestamps[0], self.timestamps[-1]


class BacktestSession:
    """
    A backtest that can be advanced day by day, checkpointed and restored.

        session = BacktestSession(cfg).prepare()
        session.run()
        report = session.finalize()
    """
    def __init__(self, cfg, dataset=None):
        self.cfg = cfg
        self.dataset = dataset
        self.frame = None
        self.days = None
        self.next_day = 0
        self.weather_models = {}
        self.experts = {}
        self.features = {}
        self.offline = {}
        self.streams = {}
        self.timings = {'prepare': 0.0, 'days': 0.0}

    @property
    def finished(self):
        return self.next_day >= len(self.days)

    def prepare(self):
        started = time.monotonic()
        self._load()
        self._fit_experts()
        self._derive()
        self._start_streams()
        self.timings['prepare'] += time.monotonic() - started
        logger.info(
            'Backtest prepared: %d experts, %d adaptive streams, %d days from %s',
            len(self.experts), len(self.streams), len(self.days), self.days[0].date(),
        )
        return self

    def _load(self):
        seg = self.cfg.segmentation
        if self.dataset is None:
            self.dataset = load_dataset(self.cfg)
        ds = self.dataset
        first_day = to_day(seg.adaptation_start) + DAY
        last_day = to_day(seg.test_window[1])
        if seg.adaptation_start < ds.start or last_day + 23 * HOUR > ds.end:
            raise DayOutOfRange(
                f'Dataset {ds.start} .. {ds.end} does not cover the backtest '
                f'{seg.adaptation_start} .. {last_day + 23 * HOUR}',
            )
        self.days = pd.date_range(first_day, last_day, freq='D')

        weather = self.cfg.weather
        if weather.use_observed:
            series = observed_weather(ds)
        elif weather.correct and weather.variables:
            if not self.weather_models:
                self.weather_models = fit_corrections(
                    ds, seg.train_end, weather.variables, {'p': weather.p, 'P': weather.P},
                )
            series = corrected_weather(self.weather_models, ds)
        else:
            series = None
        self.frame = build_features(ds, seg.train_end, series)
        self.hours = self.frame.column('hour').astype(int)
        self.load = ds.column('load')
        self.fit_load = np.where(self.frame.column('fit_ok').astype(bool), self.load, np.nan)

    def _fit_experts(self):
        fitted = {}
        train_end = self.cfg.segmentation.train_end
        for entry in self.cfg.roster:
            if entry.family in self.experts:
                continue
            family = FAMILIES[entry.family]
            base = 'SplineAdditive' if family == 'GamSat' else family
            try:
                if base not in fitted:
                    fitted[base] = fit_family(base, self.frame, train_end, self.cfg.mlp)
            except ModelError as e:
                raise BacktestError(f'Fitting {entry.family} failed: {e}', cause=e) from e
            self.experts[entry.family] = gam_sat(fitted[base]) if family == 'GamSat' else fitted[base]

    def _derive(self):
        for family, expert in self.experts.items():
            X = expert.features(self.frame)
            self.features[family] = X
            self.offline[family] = np.einsum('ij,ij->i', X, expert.thetas()[self.hours])

    def _start_streams(self):
        seg = self.cfg.segmentation
        rows = self.frame.rows(start=seg.adaptation_start, end=seg.train_end, fit_only=True)
        recent = self.frame.timestamps[rows] > seg.train_end - pd.Timedelta(days=self.cfg.kalman.big_window_days)
        hours = self.hours[rows]
        for entry in self.cfg.roster:
            adaptive = [setting for setting in entry.settings if setting != OFFLINE]
            if not adaptive:
                continue
            X = self.features[entry.family][rows]
            y = self.load[rows]
            streams = [
                (X[hours == hour], y[hours == hour], None, recent[hours == hour]) for hour in range(24)
            ]
            per_hour = self._initial_states(entry.family, adaptive, streams)
            for setting in adaptive:
                states = [states_by_setting[setting] for states_by_setting in per_hour]
                if setting == VIKING:
                    bank = VikingBank(states, iters=self.cfg.viking.iters)
                else:
                    bank = KalmanBank(states)
                name = member_name(entry.family, setting)
                self.streams[name] = Stream(name, entry.family, setting, bank, len(self.frame))

    def _initial_states(self, family, adaptive, streams):
        """
        Initial filters of every adaptive setting of one family, one dict per hour. The
        dynamic variance searches are shared by dynamic and dynamic_break and run for the
        24 hours at once, the dynamic_big values seed the variance-tracking filter.
        """
        kalman = self.cfg.kalman
        grid = variance_grid(kalman.grid_min_exponent, kalman.grid_step)
        searches = None
        big = None
        setting = None
        per_hour = [{} for _ in streams]
        try:
            for setting in adaptive:
                if setting in ('dynamic', 'dynamic_break') and searches is None:
                    searches = greedy_q_searches([(X, y) for X, y, *_ in streams], grid)
                if setting in ('dynamic_big', VIKING) and big is None:
                    big = [
                        make_setting('dynamic_big', X, y, big_q=q)
                        for (X, y, *_), q in zip(streams, select_big_qs(streams, grid))
                    ]
                for hour, (X, y, *_) in enumerate(streams):
                    if setting == VIKING:
                        viking = self.cfg.viking
                        per_hour[hour][setting] = init_viking(
                            big[hour].theta, big[hour].P, big[hour].sigma2, big[hour].Q,
                            viking.rho_a, viking.rho_b, viking.s0, viking.Sigma0,
                        )
                    elif setting == 'dynamic_big':
                        per_hour[hour][setting] = big[hour]
                    else:
                        per_hour[hour][setting] = make_setting(
                            setting, X, y, break_time=kalman.break_date, grid=grid,
                            search=None if searches is None else searches[hour],
                        )
        except ModelError as e:
            raise BacktestError(f'Initialising {family} {setting} failed: {e}', cause=e) from e
        return per_hour

    def _position(self, ts):
        return self.dataset.position(ts)

    def _rows_between(self, after, until):
        """
        Rows with after < timestamp <= until.
        """
        return np.arange(self._position(after) + 1, self._position(until) + 1)

    def _day_rows(self, day):
        start = self._position(day)
        return np.arange(start, start + 24)

    def _reveal_rows(self, index):
        """
        Observations newly visible on forecast day `index`: (cutoff(d-1), cutoff(d)],
        never before the start of adaptation.
        """
        start = self.cfg.segmentation.adaptation_start
        after = start - HOUR
        if index > 0:
            after = max(after, availability_cutoff(self.days[index - 1]))
        return self._rows_between(after, availability_cutoff(self.days[index]))

    def run_day(self):
        started = time.monotonic()
        day = self.days[self.next_day]
        reveal = self._reveal_rows(self.next_day)
        target = self._day_rows(day)
        try:
            _map(lambda stream: self._advance(stream, reveal, target, day), self.streams.values())
        except ModelError as e:
            raise BacktestError(str(e), day=day.date(), cause=e) from e
        self.next_day += 1
        self.timings['days'] += time.monotonic() - started
        logger.debug('Backtest day %s done (%d observations revealed)', day.date(), len(reveal))

    def _advance(self, stream, reveal, target, day):
        X = self.features[stream.family]
        timestamps = self.frame.timestamps
        stream.bank.update(self.hours[reveal], X[reveal], self.fit_load[reveal], list(timestamps[reveal]))
        mean, variance = stream.bank.predict(self.hours[target], X[target], list(timestamps[target]))
        stream.mean[target] = mean
        stream.variance[target] = variance
        if self.cfg.record_history:
            stream.history.append((day, stream.bank.theta.copy()))

    def run(self, max_days=None, until=None, stop=None):
        """
        Advance up to `max_days` days, not beyond the day of `until`. `stop` is polled
        after every day but the first and ends the run when it returns True.
        Returns the number of days run.
        """
        done = 0
        last = to_day(until) if until is not None else None
        while not self.finished and (max_days is None or done < max_days):
            if last is not None and self.days[self.next_day] > last:
                break
            if done and stop is not None and stop():
                logger.info('Backtest stopped early after %d days', done)
                break
            self.run_day()
            done += 1
        if done:
            logger.info('Backtest advanced %d days to %s', done, self.days[self.next_day - 1].date())
        return done

    def state_history(self, stream, hour):
        """
        Filter mean of one hour after every backtest day, one row per day.
        """
        history = self.streams[stream].history
        if not history:
            return pd.DataFrame()
        thetas = np.array([values[hour] for _, values in history])
        return pd.DataFrame(
            thetas,
            index=pd.DatetimeIndex([day for day, _ in history], name='day'),
            columns=[f'theta_{i}' for i in range(thetas.shape[1])],
        )

    def _span_rows(self):
        """
        Whole forecast days processed so far.
        """
        if self.next_day == 0:
            return np.arange(0)
        return np.arange(self._position(self.days[0]), self._position(self.days[self.next_day - 1]) + 24)

    def _intraday(self, base):
        days = self.days[:self.next_day]
        if len(days) == 0:
            return base.copy()
        reveal = [np.arange(0, self._position(availability_cutoff(days[0])) + 1)]
        reveal += [
            self._rows_between(availability_cutoff(previous), availability_cutoff(day))
            for previous, day in zip(days[:-1], days[1:])
        ]
        targets = [self._day_rows(day) for day in days]
        return replay_intraday(base, self.load, self.hours, reveal, targets, [day.date() for day in days])

    def member_forecasts(self):
        """
        Full-length forecast arrays of every roster member, in roster order.
        """
        out = {}
        for entry, name, setting, level, corrected in self.cfg.members():
            if corrected:
                try:
                    out[name] = self._intraday(out[member_name(entry.family, setting)])
                except BacktestError as e:
                    raise BacktestError(
                        f'Intraday correction of {name} failed: {e.cause}', day=e.day, cause=e.cause,
                    ) from e
            elif setting == OFFLINE:
                out[name] = self.offline[entry.family].copy()
            else:
                stream = self.streams[member_name(entry.family, setting)]
                if level is None:
                    out[name] = stream.mean.copy()
                else:
                    out[name] = gaussian_quantile(stream.mean, stream.variance, level)
        return out

    def _aggregate(self, forecasts, names):
        """
        ML-Poly replay of `names` over the processed days; weights start updating at aggregation_start.
        """
        rows = self._span_rows()
        matrix = np.column_stack([forecasts[name][rows] for name in names])
        update_mask = self.frame.timestamps[rows] >= self.cfg.segmentation.aggregation_start
        predictions, weights = replay_mlpoly(matrix, self.load[rows], update_mask)
        full = np.full(len(self.frame), np.nan)
        full[rows] = predictions
        return full, weights

    def select(self, max_size, stop_early=True, forecasts=None):
        """
        Greedy expert selection scored on the validation window.
        """
        forecasts = self.member_forecasts() if forecasts is None else forecasts
        rows = self._span_rows()
        timestamps = self.frame.timestamps[rows]
        start, end = self.cfg.segmentation.validation_window
        eval_mask = np.asarray((timestamps >= start) & (timestamps <= end))
        if not eval_mask.any():
            raise EmptyWindow('The validation window has not been backtested')
        update_mask = np.asarray(timestamps >= self.cfg.segmentation.aggregation_start)
        return greedy_select(
            {name: values[rows] for name, values in forecasts.items()},
            self.load[rows], update_mask, eval_mask, max_size, stop_early,
        )

    def finalize(self):
        if not self.finished:
            raise ValueError(f'Backtest stopped at day {self.next_day} of {len(self.days)}')
        started = time.monotonic()
        forecasts = self.member_forecasts()
        names = list(forecasts)
        aggregation = self.cfg.aggregation
        weights = None
        selection = None
        seg = self.cfg.segmentation
        test = np.arange(self._position(seg.test_window[0]), self._position(seg.test_window[1]) + 1)
        timestamps = self.frame.timestamps[test]

        if not names:
            logger.warning('The roster is empty, the report holds no forecasts')
        elif aggregation.enabled:
            forecasts[AGGREGATION], matrix = self._aggregate(forecasts, names)
            offset = self._span_rows()[0]
            weights = weights_frame(timestamps, names, matrix[test - offset])
            if aggregation.per_family:
                for family in dict.fromkeys(entry.family for entry in self.cfg.roster):
                    members = [name for entry, name, *_ in self.cfg.members() if entry.family == family]
                    forecasts[f'{AGGREGATION}_{family}'], _ = self._aggregate(forecasts, members)
            if aggregation.select_max_size:
                selection = self.select(aggregation.select_max_size, forecasts={n: forecasts[n] for n in names})
                if selection.order:
                    forecasts[SELECTED], _ = self._aggregate(forecasts, selection.order)
                else:
                    logger.warning('Greedy selection kept no expert')

        weather = {
            variable: compare_weather_forecasts(self.dataset, model, *seg.test_window)
            for variable, model in self.weather_models.items()
        }
        self.timings['finalize'] = time.monotonic() - started
        return BacktestReport(
            timestamps=timestamps,
            actual=self.load[test],
            forecasts={name: values[test] for name, values in forecasts.items()},
            weights=weights,
            selection=selection,
            weather=weather,
            runtime={**{f'{phase}_seconds': round(value, 3) for phase, value in self.timings.items()},
                     'days': len(self.days)},
            config=self.cfg,
        )

    def checkpoint(self):
        return {
            'next_day': self.next_day,
            'weather': {variable: model.to_dict() for variable, model in self.weather_models.items()},
            'experts': {family: expert.to_dict() for family, expert in self.experts.items()},
            'streams': {name: stream.to_dict() for name, stream in self.streams.items()},
        }

    @classmethod
    def restore(cls, cfg, data, dataset=None):
        session = cls(cfg, dataset)
        session.weather_models = {
            variable: WeatherCorrectionModel.from_dict(model) for variable, model in data['weather'].items()
        }
        session._load()
        session.experts = {family: expert_from_dict(expert) for family, expert in data['experts'].items()}
        session._derive()
        session.streams = {name: Stream.from_dict(name, stream) for name, stream in data['streams'].items()}
        session.next_day = data['next_day']
        return session


def run_backtest(cfg, dataset=None):
    session = BacktestSession(cfg, dataset).prepare()
    session.run()
    return session.finalize()


def _window(window, report):
    if window is None:
        return report.test_window
    try:
        if isinstance(window, str):
            return parse_window(window)
        start, end = window
        return to_utc(start), to_utc(end)
    except ValueError as e:
        raise ConfigError(f'Invalid window {window!r}: {e}') from e


def evaluate(report, window=None):
    """
    MAE of every forecast over the hours of `window` where both forecast and actual exist.
    """
    start, end = _window(window, report)
    mask = np.asarray((report.timestamps >= start) & (report.timestamps <= end)) & np.isfinite(report.actual)
    if not mask.any():
        raise EmptyWindow(f'No observed load between {start} and {end}')
    return {
        name: mean_absolute_error(values, report.actual, mask)
        for name, values in report.forecasts.items()
    }


def report_metrics(report):
    try:
        mae = evaluate(report)
    except EmptyWindow:
        logger.warning('No observed load in the test window')
        mae = {}
    start, end = report.test_window
    selection = None
    if report.selection is not None:
        selection = {
            'order': report.selection.order,
            'curve': [_json_float(value) for value in report.selection.curve],
            'best_size': report.selection.best_size,
        }
    return {
        'mae': {name: _json_float(value) for name, value in sorted(mae.items())},
        'test_window': [start.isoformat(), end.isoformat()],
        'selection': selection,
        'weather': report.weather,
    }


def emit_report(report, directory):
    os.makedirs(directory, exist_ok=True)
    stamps = report.timestamps.strftime(TIMESTAMP_FORMAT)
    blocks = [
        pd.DataFrame({'timestamp': stamps, 'expert': name, 'value': values})
        for name, values in report.forecasts.items()
    ]
    forecasts = (
        pd.concat(blocks, ignore_index=True) if blocks
        else pd.DataFrame(columns=['timestamp', 'expert', 'value'])
    )
    forecasts.to_csv(os.path.join(directory, 'forecasts.csv'), index=False, na_rep='')
    pd.DataFrame({'timestamp': stamps, 'load': report.actual}).to_csv(
        os.path.join(directory, 'actuals.csv'), index=False, na_rep='',
    )
    weights = report.weights
    if weights is None:
        weights = pd.DataFrame(columns=['timestamp', 'hour', 'expert', 'weight'])
    weights.to_csv(os.path.join(directory, 'weights.csv'), index=False)
    with open(os.path.join(directory, 'metrics.json'), 'w', encoding='utf-8') as f:
        json.dump(report_metrics(report), f, indent=2, sort_keys=True)
    if report.config is not None:
        with open(os.path.join(directory, 'config.lock.json'), 'w', encoding='utf-8') as f:
            f.write(report.config.dumps())
    with open(os.path.join(directory, 'runtime.json'), 'w', encoding='utf-8') as f:
        json.dump(report.runtime, f, indent=2, sort_keys=True)
    logger.info('Report with %d forecast series written to %s', len(report.forecasts), directory)


def load_report(directory):
    """
    Forecasts and actuals of an emitted report, enough to evaluate other windows.
    """
    try:
        forecasts = pd.read_csv(os.path.join(directory, 'forecasts.csv'))
        actuals = pd.read_csv(os.path.join(directory, 'actuals.csv'))
    except FileNotFoundError as e:
        raise ConfigError(f'{directory} does not hold a backtest report: {e}') from e
    timestamps = pd.DatetimeIndex(pd.to_datetime(actuals['timestamp'], utc=True))
    series = {}
    for name in dict.fromkeys(forecasts['expert']):
        values = forecasts.loc[forecasts['expert'] == name, 'value'].to_numpy(dtype=float)
        series[name] = values
    return BacktestReport(
        timestamps=timestamps,
        actual=actuals['load'].to_numpy(dtype=float),
        forecasts=series,
    )
