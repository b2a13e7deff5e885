"""
Small numpy multilayer perceptron: two tanh hidden layers and a linear output,
trained on squared error with mini-batch Adam.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NonFiniteLoss


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MLPConfig:
    hidden: tuple = (15, 10)
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        if 'hidden' in data:
            data['hidden'] = tuple(data['hidden'])
        return cls(**data)

    def to_dict(self):
        data = asdict(self)
        data['hidden'] = list(self.hidden)
        return data


PARAMETER_NAMES = ('W1', 'b1', 'W2', 'b2', 'W3', 'b3')


class TanhNetwork:
    """
    y = tanh(tanh(X W1 + b1) W2 + b2) W3 + b3.
    The output layer starts at zero, so an untrained network predicts its bias.
    """
    def __init__(self, params):
        self.params = {name: np.asarray(params[name], dtype=float) for name in PARAMETER_NAMES}

    @classmethod
    def initialize(cls, n_inputs, hidden, rng):
        first, second = hidden
        return cls({
            'W1': _glorot(rng, n_inputs, first),
            'b1': np.zeros(first),
            'W2': _glorot(rng, first, second),
            'b2': np.zeros(second),
            'W3': np.zeros(second),
            'b3': np.zeros(()),
        })

    def hidden(self, X):
        """
        Activations of the last hidden layer.
        """
        p = self.params
        return np.tanh(np.tanh(X @ p['W1'] + p['b1']) @ p['W2'] + p['b2'])

    def __call__(self, X):
        return self.hidden(X) @ self.params['W3'] + self.params['b3']

    def loss(self, X, y):
        error = self(X) - y
        return 0.5 * float(np.mean(error ** 2))

    def gradients(self, X, y):
        p = self.params
        h1 = np.tanh(X @ p['W1'] + p['b1'])
        h2 = np.tanh(h1 @ p['W2'] + p['b2'])
        out = h2 @ p['W3'] + p['b3']
        d_out = (out - y) / len(y)
        d_h2 = np.outer(d_out, p['W3']) * (1 - h2 ** 2)
        d_h1 = (d_h2 @ p['W2'].T) * (1 - h1 ** 2)
        return {
            'W3': h2.T @ d_out,
            'b3': np.asarray(d_out.sum()),
            'W2': h1.T @ d_h2,
            'b2': d_h2.sum(axis=0),
            'W1': X.T @ d_h1,
            'b1': d_h1.sum(axis=0),
        }

    def to_dict(self):
        return {name: value.tolist() for name, value in self.params.items()}

    @classmethod
    def from_dict(cls, data):
        return cls(data)


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def train(X, y, config, seed=None):
    """
    Returns the trained network and the full-data loss after each epoch.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    network = TanhNetwork.initialize(X.shape[1], config.hidden, rng)
    first = {name: np.zeros_like(value) for name, value in network.params.items()}
    second = {name: np.zeros_like(value) for name, value in network.params.items()}
    step = 0
    history = []
    n = len(y)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            grads = network.gradients(X[batch], y[batch])
            step += 1
            for name, grad in grads.items():
                first[name] = config.beta1 * first[name] + (1 - config.beta1) * grad
                second[name] = config.beta2 * second[name] + (1 - config.beta2) * grad ** 2
                first_hat = first[name] / (1 - config.beta1 ** step)
                second_hat = second[name] / (1 - config.beta2 ** step)
                network.params[name] = network.params[name] - (
                    config.learning_rate * first_hat / (np.sqrt(second_hat) + config.epsilon)
                )
        loss = network.loss(X, y)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f'Training loss is {loss} after epoch {epoch + 1}')
        history.append(loss)
    return network, history
