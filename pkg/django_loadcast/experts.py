"""
Offline experts fitted independently for each hour of the day.

Every expert exposes a feature map x_t and per-hour offline coefficients theta
such that its forecast is x_t @ theta. The feature maps are the inputs of the
state-space adaptation.
"""
import logging

import numpy as np

from .errors import InsufficientHistory, NotForecastable
from .mlp import MLPConfig, TanhNetwork, train
from .regression import least_squares
from .splines import (
    CubicBSplineBasis, CyclicBSplineBasis, Smooth, fit_penalized,
)
from .timeseries import LAST_EARLY_HOUR, shift, to_utc


logger = logging.getLogger(__name__)


HOURS = range(24)
SATURDAY = 5
AR_WEEKLY_LAGS = tuple(168 * k for k in range(1, 7))
AR_MIN_TRAINING_HOURS = 7 * 168
GAM_MIN_TRAINING_HOURS = 365 * 24
LINEAR_COLUMNS = (
    'temperature', 'cloud', 'pressure', 'wind_dir_sin', 'wind_dir_cos', 'wind_speed',
)


def ar_daily_lags(hour):
    return (24, 48, 72) if hour <= LAST_EARLY_HOUR else (48, 72, 96)


def day_dummies(dow, first=1):
    """
    One column per day of week from `first` to Sunday (Monday is 0).
    """
    return (np.asarray(dow)[:, None] == np.arange(first, 7)[None, :]).astype(float)


class ExpertModel:
    family = None
    dimension = None

    def __init__(self, blocks):
        if len(blocks) != 24:
            raise ValueError(f'{self.family} expects 24 hourly blocks, got {len(blocks)}')
        self.blocks = tuple(blocks)

    def design(self, frame, rows, hour):
        """
        Feature matrix (len(rows), dimension) for rows of one hour. NaN where inputs are missing.
        """
        raise NotImplementedError

    def theta(self, hour):
        raise NotImplementedError

    def features(self, frame, rows=None):
        """
        Feature matrix for arbitrary rows (all rows by default).
        """
        rows = np.arange(len(frame)) if rows is None else np.asarray(rows)
        hours = frame.frame['hour'].to_numpy()[rows]
        out = np.full((len(rows), self.dimension), np.nan)
        for hour in HOURS:
            selected = hours == hour
            if selected.any():
                out[selected] = self.design(frame, rows[selected], hour)
        forecastable = frame.frame['forecastable'].to_numpy()[rows]
        out[~forecastable] = np.nan
        return out

    def thetas(self):
        return np.array([self.theta(hour) for hour in HOURS])

    def predict(self, frame, rows=None):
        rows = np.arange(len(frame)) if rows is None else np.asarray(rows)
        X = self.features(frame, rows)
        hours = frame.frame['hour'].to_numpy()[rows]
        return np.einsum('ij,ij->i', X, self.thetas()[hours])

    def feature_map(self, frame, t):
        position = _position(frame, t)
        x = self.features(frame, np.array([position]))[0]
        if not np.isfinite(x).all():
            raise NotForecastable(f'{self.family} cannot forecast {t}')
        return x

    def predict_at(self, frame, t):
        x = self.feature_map(frame, t)
        return float(x @ self.theta(frame.frame['hour'].iloc[_position(frame, t)]))

    def to_dict(self):
        return {'family': self.family, 'blocks': [self.block_to_dict(block) for block in self.blocks]}

    @classmethod
    def from_dict(cls, data):
        model_class = EXPERT_CLASSES[data['family']]
        return model_class.from_blocks(data)

    @classmethod
    def from_blocks(cls, data):
        return cls([cls.block_from_dict(block) for block in data['blocks']])

    @staticmethod
    def block_to_dict(block):
        return {key: np.asarray(value).tolist() for key, value in block.items()}

    @staticmethod
    def block_from_dict(data):
        return {key: np.asarray(value, dtype=float) for key, value in data.items()}


def _position(frame, t):
    position = int(frame.timestamps.get_indexer([to_utc(t)])[0])
    if position < 0:
        raise NotForecastable(f'{t} is outside the feature frame')
    return position


def _training_rows(frame, train_end, hour):
    return frame.rows(hour=hour, end=train_end, fit_only=True)


def _fit_linear_blocks(model_class, frame, train_end):
    thetas = []
    load = frame.column('load')
    template = model_class([{'theta': np.zeros(model_class.dimension)}] * 24)
    for hour in HOURS:
        rows = _training_rows(frame, train_end, hour)
        X = template.design(frame, rows, hour)
        usable = np.isfinite(X).all(axis=1)
        if usable.sum() <= model_class.dimension:
            raise InsufficientHistory(
                f'{model_class.family} has {usable.sum()} usable rows at hour {hour}',
            )
        theta, _ = least_squares(
            X[usable], load[rows[usable]],
            on_singular='min_norm',
            context=f'({model_class.family}, hour {hour})',
        )
        thetas.append({'theta': theta})
    return model_class(thetas)


class ARExpert(ExpertModel):
    """
    Seasonal autoregression on three daily lags, six weekly lags and an intercept.
    """
    family = 'AR'
    dimension = 10

    def design(self, frame, rows, hour):
        load = frame.column('load')
        lags = ar_daily_lags(hour) + AR_WEEKLY_LAGS
        return np.column_stack([shift(load, lag)[rows] for lag in lags] + [np.ones(len(rows))])

    def theta(self, hour):
        return self.blocks[hour]['theta']


def fit_ar(frame, train_end):
    if len(frame.rows(end=train_end)) < AR_MIN_TRAINING_HOURS:
        raise InsufficientHistory('The autoregressive expert needs at least 7 weeks of training data')
    model = _fit_linear_blocks(ARExpert, frame, train_end)
    logger.info('Fitted AR expert up to %s', train_end)
    return model


class LinearExpert(ExpertModel):
    family = 'Linear'
    dimension = 17

    def design(self, frame, rows, hour):
        columns = [frame.column(name)[rows] for name in LINEAR_COLUMNS]
        columns.append(day_dummies(frame.column('dow')[rows]))
        columns += [frame.column(name)[rows] for name in ('toy', 'trend', 'load_w', 'load_d')]
        columns.append(np.ones(len(rows)))
        return np.column_stack(columns)

    def theta(self, hour):
        return self.blocks[hour]['theta']


def fit_linear(frame, train_end):
    model = _fit_linear_blocks(LinearExpert, frame, train_end)
    logger.info('Fitted linear expert up to %s', train_end)
    return model


class SplineAdditiveExpert(ExpertModel):
    """
    beta0 + day effect + gamma * Temps95 + f1(Toy) + f2(LoadD) + f3(LoadW) + alpha * trend.
    Feature map: [1, day effect, gamma * Temps95, f1, f2, f3, alpha * trend].
    """
    family = 'SplineAdditive'
    dimension = 7
    forced_day = None

    def design(self, frame, rows, hour):
        block = self.blocks[hour]
        dow = frame.column('dow')[rows]
        if self.forced_day is not None:
            dow = np.full(len(rows), self.forced_day)
        out = np.full((len(rows), self.dimension), np.nan)
        inputs = np.column_stack([
            frame.column(name)[rows] for name in ('temps95', 'toy', 'load_d', 'load_w', 'trend')
        ])
        valid = np.isfinite(inputs).all(axis=1)
        temps95, toy, load_d, load_w, trend = inputs[valid].T
        f1, f2, f3 = block['smooths']
        out[valid] = np.column_stack([
            np.ones(valid.sum()),
            block['day_effects'][dow[valid].astype(int)],
            block['gamma'] * temps95,
            f1(toy),
            f2(load_d),
            f3(load_w),
            block['alpha'] * trend,
        ])
        return out

    def theta(self, hour):
        return np.r_[self.blocks[hour]['intercept'], np.ones(self.dimension - 1)]

    @staticmethod
    def block_to_dict(block):
        return {
            'intercept': float(block['intercept']),
            'day_effects': np.asarray(block['day_effects']).tolist(),
            'gamma': float(block['gamma']),
            'alpha': float(block['alpha']),
            'smooths': [smooth.to_dict() for smooth in block['smooths']],
            'lambdas': list(block['lambdas']),
        }

    @staticmethod
    def block_from_dict(data):
        return {
            'intercept': data['intercept'],
            'day_effects': np.asarray(data['day_effects'], dtype=float),
            'gamma': data['gamma'],
            'alpha': data['alpha'],
            'smooths': [Smooth.from_dict(smooth) for smooth in data['smooths']],
            'lambdas': tuple(data['lambdas']),
        }


class GamSatExpert(SplineAdditiveExpert):
    """
    The spline additive model evaluated as if every day were a Saturday.
    """
    family = 'GamSat'
    forced_day = SATURDAY


def fit_spline_additive(frame, train_end, lambdas=None, n_cyclic=10, n_interior=5):
    """
    Per-hour penalized regression with smoothing parameters selected by GCV
    (or fixed to `lambdas`, one per smooth).
    """
    if len(frame.rows(end=train_end)) < GAM_MIN_TRAINING_HOURS:
        raise InsufficientHistory('The spline additive expert needs at least one year of training data')
    columns = ('dow', 'temps95', 'trend', 'toy', 'load_d', 'load_w', 'load')
    blocks = []
    for hour in HOURS:
        rows = _training_rows(frame, train_end, hour)
        data = np.column_stack([frame.column(name)[rows] for name in columns])
        data = data[np.isfinite(data).all(axis=1)]
        if len(data) < 50:
            raise InsufficientHistory(f'Spline additive expert has {len(data)} usable rows at hour {hour}')
        dow, temps95, trend, toy, load_d, load_w, load = data.T
        parametric = np.column_stack([np.ones(len(data)), day_dummies(dow), temps95, trend])
        bases = [
            CyclicBSplineBasis(n_cyclic),
            CubicBSplineBasis.from_data(load_d, n_interior),
            CubicBSplineBasis.from_data(load_w, n_interior),
        ]
        fit, smooths = fit_penalized(parametric, bases, [toy, load_d, load_w], load, lambdas=lambdas)
        blocks.append({
            'intercept': fit.coef[0],
            'day_effects': np.r_[0.0, fit.coef[1:7]],
            'gamma': fit.coef[7],
            'alpha': fit.coef[8],
            'smooths': smooths,
            'lambdas': fit.lambdas,
        })
        logger.debug('Spline additive hour %d: lambdas %s, edf %.1f', hour, fit.lambdas, fit.edf)
    logger.info('Fitted spline additive expert up to %s', train_end)
    return SplineAdditiveExpert(blocks)


def gam_sat(model):
    return GamSatExpert(model.blocks)


def predict_gam_sat(model, frame, t):
    return gam_sat(model).predict_at(frame, t)


class MLPExpert(ExpertModel):
    """
    Feature map: last hidden layer activations and 1. The offline theta is the
    unstandardized output layer.
    """
    family = 'MLP'
    dimension = 11
    input_columns = ('trend', 'toy', 'temps95', 'load_d', 'load_w')

    @classmethod
    def inputs(cls, frame, rows):
        return np.column_stack(
            [frame.column(name)[rows] for name in cls.input_columns[:2]]
            + [day_dummies(frame.column('dow')[rows], first=0)]
            + [frame.column(name)[rows] for name in cls.input_columns[2:]],
        )

    def design(self, frame, rows, hour):
        block = self.blocks[hour]
        X = (self.inputs(frame, rows) - block['x_mean']) / block['x_std']
        out = np.full((len(rows), self.dimension), np.nan)
        valid = np.isfinite(X).all(axis=1)
        out[valid] = np.column_stack([block['network'].hidden(X[valid]), np.ones(valid.sum())])
        return out

    def theta(self, hour):
        block = self.blocks[hour]
        params = block['network'].params
        theta = block['y_std'] * np.r_[params['W3'], params['b3']]
        theta[-1] += block['y_mean']
        return theta

    @staticmethod
    def block_to_dict(block):
        return {
            'network': block['network'].to_dict(),
            'x_mean': block['x_mean'].tolist(),
            'x_std': block['x_std'].tolist(),
            'y_mean': float(block['y_mean']),
            'y_std': float(block['y_std']),
        }

    @staticmethod
    def block_from_dict(data):
        return {
            'network': TanhNetwork.from_dict(data['network']),
            'x_mean': np.asarray(data['x_mean'], dtype=float),
            'x_std': np.asarray(data['x_std'], dtype=float),
            'y_mean': data['y_mean'],
            'y_std': data['y_std'],
        }


def _standardization(values):
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def fit_mlp(frame, train_end, cfg=None):
    """
    One network per hour, seeded with cfg.seed + hour, on z-scored inputs and target.
    """
    cfg = cfg or MLPConfig()
    load = frame.column('load')
    blocks = []
    for hour in HOURS:
        rows = _training_rows(frame, train_end, hour)
        raw = MLPExpert.inputs(frame, rows)
        usable = np.isfinite(raw).all(axis=1)
        if usable.sum() < 2:
            raise InsufficientHistory(f'MLP expert has {usable.sum()} usable rows at hour {hour}')
        raw, y = raw[usable], load[rows[usable]]
        x_mean, x_std = _standardization(raw)
        y_mean, y_std = _standardization(y)
        network, history = train((raw - x_mean) / x_std, (y - y_mean) / y_std, cfg, seed=cfg.seed + hour)
        if history:
            logger.debug('MLP hour %d: final loss %.4g', hour, history[-1])
        blocks.append({
            'network': network,
            'x_mean': x_mean,
            'x_std': x_std,
            'y_mean': float(y_mean),
            'y_std': float(y_std),
        })
    logger.info('Fitted MLP expert up to %s (%d epochs)', train_end, cfg.epochs)
    return MLPExpert(blocks)


def feature_map(model, frame, t):
    return model.feature_map(frame, t)


EXPERT_CLASSES = {
    model_class.family: model_class
    for model_class in (ARExpert, LinearExpert, SplineAdditiveExpert, GamSatExpert, MLPExpert)
}


def expert_from_dict(data):
    return ExpertModel.from_dict(data)


def fit_family(family, frame, train_end, mlp_config=None):
    if family == 'AR':
        return fit_ar(frame, train_end)
    if family == 'Linear':
        return fit_linear(frame, train_end)
    if family == 'SplineAdditive':
        return fit_spline_additive(frame, train_end)
    if family == 'MLP':
        return fit_mlp(frame, train_end, mlp_config)
    raise ValueError(f'Unknown expert family {family}')
