import factory

from .models import BacktestRun, RunProgress


def config_data(**overrides):
    """
    A small synthetic backtest: about seven months of data, a linear expert
    and two of its adaptive variants.
    """
    data = {
        'scenario': {'start': '2018-10-01', 'days': 240, 'noise_scale': 5.0},
        'seed': 7,
        'segmentation': {
            'adaptation_start': '2018-10-15T00:00:00Z',
            'train_end': '2019-03-31T23:00:00Z',
            'aggregation_start': '2019-04-01T00:00:00Z',
            'validation': '2019-04-01:2019-04-30',
            'test': '2019-05-01:2019-05-20',
        },
        'roster': [
            {'family': 'Lin', 'settings': ['offline', 'static', 'dynamic_big']},
        ],
        'weather': {'correct': False},
        'kalman': {'grid_min_exponent': -20, 'grid_step': 4},
        'output_dir': 'loadcast-report',
    }
    data.update(overrides)
    return data


class BacktestRunFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = BacktestRun

    config = factory.LazyFunction(config_data)


class RunProgressFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = RunProgress

    run = factory.SubFactory(BacktestRunFactory)
    success = True
