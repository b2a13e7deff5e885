import numpy as np
import pandas as pd
import pytest

from .errors import DimensionMismatch, InvalidHyperparameter
from .kalman import KalmanBank, KalmanState
from .viking import (
    VikingBank, VikingState, init_viking, laplace_update, viking_step,
)


def drifting_stream(n=300, d=2, seed=0, noise=1.0, jump_at=None, jump=10.0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, d - 1))])
    theta = np.tile(np.arange(1.0, d + 1), (n, 1))
    if jump_at is not None:
        theta[jump_at:] += jump
    y = np.einsum('ij,ij->i', X, theta) + noise * rng.normal(size=n)
    return X, y


def run(state, X, y, iters=2):
    trajectory = []
    for x, value in zip(X, y):
        state, mean, variance = viking_step(state, x, value, iters)
        trajectory.append((state, mean, variance))
    return trajectory


def test_frozen_variances_reduce_to_kalman_filter():
    X, y = drifting_stream(n=1000)
    state = init_viking(np.zeros(2), np.eye(2), sigma2=2.0, q=0.01, rho_a=0.0, rho_b=0.0, s0=0.0, Sigma0=0.0)
    viking = VikingBank([state])
    kalman = KalmanBank([KalmanState(theta=np.zeros(2), P=np.eye(2), sigma2=2.0, Q=[0.01, 0.01])])
    for x, value in zip(X, y):
        viking_mean, viking_variance = viking.step(np.array([0]), x[None], [value], [None])
        kalman_mean, kalman_variance = kalman.step(np.array([0]), x[None], [value], [None])
        np.testing.assert_allclose(viking_mean, kalman_mean, rtol=1e-6)
        np.testing.assert_allclose(viking_variance, kalman_variance, rtol=1e-6)
        np.testing.assert_allclose(viking.theta, kalman.theta, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(viking.P, kalman.P, rtol=1e-6, atol=1e-12)
    assert viking.a_hat[0] == pytest.approx(np.log(2.0))


def test_observation_variance_tracks_down():
    X, y = drifting_stream(n=300, noise=1.0)
    state = init_viking([1.0, 2.0], 0.01 * np.eye(2), sigma2=100.0, q=1e-6)
    final = run(state, X, y)[-1][0]
    assert final.a_hat < np.log(100.0) - 1


def break_response(seed):
    X, y = drifting_stream(n=350, seed=seed, jump_at=300)
    state = init_viking([1.0, 2.0], 0.01 * np.eye(2), sigma2=1.0, q=1e-4)
    process = np.exp([updated.b_hat for updated, _, _ in run(state, X, y)])
    return process[300:].mean() > process[250:300].mean()


def test_process_variance_rises_after_break():
    assert sum(break_response(seed) for seed in range(10)) >= 9


def test_variances_stay_positive():
    X, y = drifting_stream(n=200, jump_at=100)
    state = init_viking(np.zeros(2), np.eye(2), sigma2=1.0, q=1e-3)
    for updated, _, variance in run(state, X, y):
        assert variance > 0
        assert updated.s > 0
        assert updated.Sigma > 0
        assert np.linalg.eigvalsh(updated.P).min() > -1e-10


def test_init_viking_from_kalman_start():
    state = init_viking([1.0, 2.0], np.eye(2), sigma2=4.0, q=0.25)
    assert state.a_hat == pytest.approx(np.log(4.0))
    assert state.b_hat == pytest.approx(np.log(0.25))
    assert state.s == 0.1
    assert state.Sigma == 0.1
    assert state.rho_a == state.rho_b == 1e-5


def test_init_viking_floors_zero_process_variance():
    state = init_viking([0.0], [[1.0]], sigma2=1.0, q=0.0)
    assert state.b_hat == pytest.approx(np.log(1e-12))


@pytest.mark.parametrize('kwargs', [
    {'rho_a': -1.0},
    {'rho_b': float('nan')},
    {'s0': -0.1},
    {'sigma2': 0.0},
    {'q': -1.0},
    {'q': [0.1, 0.2]},
])
def test_invalid_hyperparameters(kwargs):
    arguments = {'theta': [0.0, 0.0], 'P': np.eye(2), 'sigma2': 1.0, 'q': 0.1}
    arguments.update(kwargs)
    with pytest.raises(InvalidHyperparameter):
        init_viking(**arguments)


def test_laplace_update_finds_the_mode():
    rng = np.random.default_rng(1)
    prior_mean = rng.normal(size=20)
    prior_variance = rng.uniform(0.01, 1.0, size=20)
    scale = rng.uniform(0.1, 100.0, size=20)
    mode, variance = laplace_update(prior_mean, prior_variance, scale, 1.0)

    def objective(z):
        return -0.5 * (z + scale * np.exp(-z)) - (z - prior_mean) ** 2 / (2 * prior_variance)

    assert (objective(mode) >= objective(prior_mean)).all()
    assert (objective(mode) >= objective(mode + 1e-3)).all()
    assert (objective(mode) >= objective(mode - 1e-3)).all()
    assert (variance > 0).all()
    assert (variance < prior_variance).all()


def test_laplace_update_freezes_without_prior_variance():
    mode, variance = laplace_update([0.5], [0.0], [10.0], 1.0)
    assert mode[0] == 0.5
    assert variance[0] == 0.0


def test_step_checks_dimension():
    state = init_viking([0.0, 0.0], np.eye(2), sigma2=1.0, q=0.1)
    with pytest.raises(DimensionMismatch):
        viking_step(state, [1.0], 1.0)


def test_bank_survives_serialization():
    X, y = drifting_stream(n=50)
    bank = VikingBank([init_viking(np.zeros(2), np.eye(2), sigma2=1.0, q=1e-3) for _ in range(2)], iters=3)
    hours = np.arange(50) % 2
    bank.update(hours, X, y, list(pd.date_range('2020-01-01', periods=50, freq='h', tz='UTC')))
    restored = VikingBank.from_dict(bank.to_dict())
    assert restored.iters == 3
    np.testing.assert_array_equal(restored.theta, bank.theta)
    np.testing.assert_array_equal(restored.b_hat, bank.b_hat)
    assert isinstance(restored.state(1), VikingState)
