import numpy as np
import pandas as pd
import pytest

from .aggregation import (
    AggregationState, MLPolyState, availability_delay, greedy_select,
    mean_absolute_error, mlpoly_predict, mlpoly_update, mlpoly_weights,
    replay_mlpoly, weights_frame,
)
from .errors import EmptyCandidates, NonFiniteForecast


def scalar_mlpoly(forecasts, ys):
    """
    Plain-python ML-Poly recursion, returns the prediction of every step.
    """
    k = len(forecasts[0])
    regrets = [0.0] * k
    squared = [0.0] * k
    weights = [1 / k] * k
    predictions = []
    for f, y in zip(forecasts, ys):
        prediction = sum(w * value for w, value in zip(weights, f))
        predictions.append(prediction)
        g = (prediction > y) - (prediction < y)
        for i in range(k):
            r = g * (prediction - f[i])
            regrets[i] += r
            squared[i] += r * r
        positive = [max(regrets[i], 0) / (1 + squared[i]) for i in range(k)]
        total = sum(positive)
        weights = [p / total for p in positive] if total > 0 else [1 / k] * k
    return predictions


def run_state(forecasts, ys):
    state = MLPolyState(tuple(f'e{i}' for i in range(forecasts.shape[1])))
    predictions = []
    for f, y in zip(forecasts, ys):
        predictions.append(mlpoly_predict(state, f))
        state = mlpoly_update(state, f, y)
        assert state.weights.sum() == pytest.approx(1.0)
        assert (state.weights >= 0).all()
    return state, np.array(predictions)


def test_single_expert_is_followed():
    rng = np.random.default_rng(0)
    forecasts = rng.normal(size=(50, 1))
    _, predictions = run_state(forecasts, rng.normal(size=50))
    np.testing.assert_allclose(predictions, forecasts[:, 0])


def test_first_prediction_is_the_mean():
    state = MLPolyState(('a', 'b'))
    assert mlpoly_predict(state, [10.0, 20.0]) == 15.0


def test_identical_experts_keep_uniform_weights():
    rng = np.random.default_rng(1)
    column = rng.normal(size=(100, 1))
    state, predictions = run_state(np.hstack([column] * 3), rng.normal(size=100))
    np.testing.assert_allclose(state.weights, 1 / 3)
    np.testing.assert_allclose(predictions, column[:, 0])


@pytest.mark.parametrize('seed', range(100))
def test_matches_scalar_recursion(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 6))
    forecasts = rng.normal(100, 10, size=(30, k))
    ys = rng.normal(100, 10, size=30)
    _, predictions = run_state(forecasts, ys)
    np.testing.assert_allclose(predictions, scalar_mlpoly(forecasts.tolist(), ys.tolist()), rtol=0, atol=1e-10)


def test_exact_hit_leaves_regrets_unchanged():
    state = mlpoly_update(MLPolyState(('a', 'b')), [10.0, 20.0], 12.0)
    prediction = mlpoly_predict(state, [10.0, 30.0])
    updated = mlpoly_update(state, [10.0, 30.0], prediction)
    np.testing.assert_array_equal(updated.regrets, state.regrets)
    np.testing.assert_array_equal(updated.squared, state.squared)
    np.testing.assert_array_equal(updated.weights, state.weights)
    assert updated.steps == state.steps + 1


def test_negative_regrets_give_uniform_weights():
    np.testing.assert_array_equal(mlpoly_weights([-1.0, -2.0, 0.0], [1.0, 4.0, 0.0]), [1 / 3] * 3)


def test_weights_follow_positive_regrets():
    np.testing.assert_allclose(mlpoly_weights([3.0, -1.0, 1.0], [2.0, 1.0, 0.0]), [0.5, 0.0, 0.5])


@pytest.mark.parametrize('seed', range(5))
def test_regret_bound_on_adversarial_sequences(seed):
    rng = np.random.default_rng(seed)
    T, k = 1000, 4
    forecasts = rng.uniform(0, 10, size=(T, k))
    ys = np.where(rng.random(T) < 0.5, 0.0, 10.0)
    _, predictions = run_state(forecasts, ys)
    aggregated = np.abs(predictions - ys).sum()
    best = np.abs(forecasts - ys[:, None]).sum(axis=0).min()
    assert aggregated <= best + 5 * np.sqrt(T * np.log(k)) * 10


def test_non_finite_forecast_is_rejected():
    state = MLPolyState(('a', 'b'))
    with pytest.raises(NonFiniteForecast):
        mlpoly_predict(state, [1.0, np.nan])
    with pytest.raises(NonFiniteForecast):
        mlpoly_predict(state, [1.0])


def test_hours_are_independent():
    aggregation = AggregationState.start(['a', 'b'])
    aggregation.update(3, [10.0, 20.0], 10.0)
    assert aggregation.predict(3, [10.0, 20.0]) == pytest.approx(10.0)
    assert aggregation.predict(4, [10.0, 20.0]) == 15.0


@pytest.mark.parametrize('hour, delay', [(0, 1), (8, 1), (9, 2), (23, 2)])
def test_availability_delay(hour, delay):
    assert availability_delay(hour) == delay


def test_replay_respects_availability():
    days = 5
    forecasts = np.tile([[10.0, 20.0]], (24 * days, 1))
    actual = np.full(24 * days, 10.0)
    predictions, weights = replay_mlpoly(forecasts, actual, np.ones(24 * days, dtype=bool))
    by_day = predictions.reshape(days, 24)
    np.testing.assert_array_equal(by_day[0], 15.0)
    np.testing.assert_array_equal(by_day[1, :9], 10.0)
    np.testing.assert_array_equal(by_day[1, 9:], 15.0)
    np.testing.assert_array_equal(by_day[2:], 10.0)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0)


def test_replay_matches_hourly_states():
    rng = np.random.default_rng(2)
    days = 6
    forecasts = rng.normal(100, 10, size=(24 * days, 3))
    actual = rng.normal(100, 10, size=24 * days)
    predictions, _ = replay_mlpoly(forecasts, actual, np.ones(24 * days, dtype=bool))
    hour = 2
    rows = np.arange(hour, 24 * days, 24)
    expected = scalar_mlpoly(forecasts[rows].tolist(), actual[rows].tolist())
    np.testing.assert_allclose(predictions[rows], expected, atol=1e-10)


def test_replay_without_updates_stays_uniform():
    forecasts = np.tile([[10.0, 20.0]], (48, 1))
    predictions, _ = replay_mlpoly(forecasts, np.full(48, 10.0), np.zeros(48, dtype=bool))
    np.testing.assert_array_equal(predictions, 15.0)


def test_replay_needs_whole_days():
    with pytest.raises(ValueError):
        replay_mlpoly(np.zeros((30, 2)), np.zeros(30), np.ones(30, dtype=bool))


def test_mean_absolute_error():
    assert mean_absolute_error([1.0, 2.0, np.nan], [2.0, 4.0, 1.0]) == 1.5
    assert mean_absolute_error([1.0], [np.nan]) == np.inf


def selection_data(days=10, seed=3):
    rng = np.random.default_rng(seed)
    n = 24 * days
    actual = 100 + rng.normal(size=n)
    forecasts = {
        'good': actual + rng.normal(scale=1.0, size=n),
        'biased': actual + 5.0,
        'bad': actual + rng.normal(scale=20.0, size=n),
    }
    update = np.ones(n, dtype=bool)
    evaluation = np.arange(n) >= n // 2
    return forecasts, actual, update, evaluation


def test_greedy_selection_starts_with_best_expert():
    forecasts, actual, update, evaluation = selection_data()
    selection = greedy_select(forecasts, actual, update, evaluation, max_size=3, stop_early=False)
    single = {
        name: mean_absolute_error(replay_mlpoly(values[:, None], actual, update)[0], actual, evaluation)
        for name, values in forecasts.items()
    }
    assert selection.order[0] == min(single, key=single.get)
    assert selection.curve[0] == pytest.approx(min(single.values()))
    assert len(selection.order) == 3
    assert selection.best_size == int(np.argmin(selection.curve)) + 1


def test_greedy_selection_skips_duplicates():
    forecasts, actual, update, evaluation = selection_data()
    candidates = {'good': forecasts['good'], 'good_copy': forecasts['good'].copy()}
    selection = greedy_select(candidates, actual, update, evaluation, max_size=2)
    assert selection.order == ['good']
    assert selection.best_size == 1


def test_greedy_selection_needs_candidates():
    with pytest.raises(EmptyCandidates):
        greedy_select({}, np.zeros(24), np.ones(24, dtype=bool), np.ones(24, dtype=bool), 3)


def test_weights_frame():
    timestamps = pd.date_range('2020-01-01', periods=2, freq='h', tz='UTC')
    frame = weights_frame(timestamps, ['b', 'a'], [[0.25, 0.75], [np.nan, np.nan]])
    assert list(frame.columns) == ['timestamp', 'hour', 'expert', 'weight']
    assert frame.to_dict('records') == [
        {'timestamp': '2020-01-01T00:00:00Z', 'hour': 0, 'expert': 'a', 'weight': 0.75},
        {'timestamp': '2020-01-01T00:00:00Z', 'hour': 0, 'expert': 'b', 'weight': 0.25},
    ]
