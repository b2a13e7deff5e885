import pytest

from .config import config_from_dict
from .factories import BacktestRunFactory, config_data
from .synthetic import Scenario, gen_synthetic


@pytest.fixture(name='run')
def run_fixture(request):
    return BacktestRunFactory(
        **getattr(request, 'param', {}),
    )


@pytest.fixture(name='scenario')
def scenario_fixture(request):
    data = {'start': '2019-01-01', 'days': 60, 'noise_scale': 5.0}
    data.update(getattr(request, 'param', {}))
    return Scenario.from_dict(data)


@pytest.fixture(name='dataset')
def dataset_fixture(scenario):
    return gen_synthetic(scenario, seed=3)


@pytest.fixture(name='pipeline_config')
def pipeline_config_fixture(request, tmp_path):
    overrides = {'output_dir': str(tmp_path / 'report')}
    overrides.update(getattr(request, 'param', {}))
    return config_from_dict(config_data(**overrides))
