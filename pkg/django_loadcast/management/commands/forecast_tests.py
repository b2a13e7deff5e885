import io
import json
from unittest import mock

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from django.db import connection

from django_loadcast.factories import BacktestRunFactory, config_data
from django_loadcast.models import BacktestRun, RunProgress, RunState


def write_json(path, data):
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


def forecast(*args):
    stdout = io.StringIO()
    stderr = io.StringIO()
    call_command('forecast', *args, stdout=stdout, stderr=stderr)
    return stdout.getvalue(), stderr.getvalue()


def test_synth(tmp_path):
    scenario = write_json(tmp_path / 'scenario.json', {'start': '2019-01-01', 'days': 30})
    out = tmp_path / 'data.csv'
    stdout, _ = forecast('synth', '--scenario', scenario, '--seed', '3', '--out', str(out))
    assert 'Wrote 720 hours' in stdout
    assert out.read_text(encoding='utf-8').startswith('timestamp,')


@pytest.mark.parametrize('scenario', [
    {'start': '2019-01-01', 'days': 3},
    {'days': 30},
    'not json',
])
def test_synth_invalid_scenario(tmp_path, scenario):
    path = tmp_path / 'scenario.json'
    if isinstance(scenario, str):
        path.write_text(scenario, encoding='utf-8')
    else:
        write_json(path, scenario)
    with pytest.raises(CommandError) as e:
        forecast('synth', '--scenario', str(path), '--out', str(tmp_path / 'data.csv'))
    assert e.value.returncode == 2


def test_run_and_evaluate(tmp_path):
    config = write_json(tmp_path / 'config.json', config_data(output_dir=str(tmp_path / 'report')))
    stdout, _ = forecast('run', '--config', config)
    assert 'Lin_dynamic_big' in stdout
    assert 'aggregation' in stdout
    assert (tmp_path / 'report' / 'metrics.json').exists()

    stdout, _ = forecast('evaluate', '--report', str(tmp_path / 'report'), '--window', '2019-05-10:2019-05-12')
    names = [line.split()[0] for line in stdout.splitlines()]
    assert names == sorted(['Lin', 'Lin_static', 'Lin_dynamic_big', 'aggregation'])


def test_run_with_empty_roster(tmp_path):
    config = write_json(tmp_path / 'config.json', config_data(roster=[], output_dir=str(tmp_path / 'report')))
    stdout, stderr = forecast('run', '--config', config, '--output', str(tmp_path / 'other'))
    assert 'roster is empty' in stderr
    metrics = json.loads((tmp_path / 'other' / 'metrics.json').read_text(encoding='utf-8'))
    assert metrics['mae'] == {}
    assert 'Report written' in stdout


@pytest.mark.django_db
def test_run_enqueue(tmp_path):
    config = write_json(tmp_path / 'config.json', config_data())
    stdout, _ = forecast('run', '--config', config, '--enqueue')
    run = BacktestRun.objects.get()
    assert run.state == RunState.WAITING_FOR_WORKER
    assert str(run.id) in stdout


def test_run_invalid_config(tmp_path):
    config = write_json(tmp_path / 'config.json', config_data(roster=[{'family': 'RF'}]))
    with pytest.raises(CommandError) as e:
        forecast('run', '--config', config)
    assert e.value.returncode == 2


def test_run_invalid_dataset(tmp_path):
    dataset = tmp_path / 'load.csv'
    dataset.write_text('timestamp,load\n2019-01-01T00:00:00Z,1000\n', encoding='utf-8')
    config = write_json(tmp_path / 'config.json', config_data(scenario=None, dataset=str(dataset)))
    with pytest.raises(CommandError) as e:
        forecast('run', '--config', config)
    assert e.value.returncode == 3


def test_evaluate_missing_report(tmp_path):
    with pytest.raises(CommandError) as e:
        forecast('evaluate', '--report', str(tmp_path / 'nothing'))
    assert e.value.returncode == 2


def test_select(tmp_path):
    config = write_json(tmp_path / 'config.json', config_data())
    stdout, _ = forecast('select', '--config', config, '--max-size', '3', '--no-early-stop')
    lines = stdout.splitlines()
    assert len(lines) == 3
    assert sum(line.endswith(' *') for line in lines) == 1


@pytest.mark.django_db
def test_work_max_progress_count():
    run = BacktestRunFactory()
    with mock.patch('django_loadcast.models.advance_run') as advance_run:
        advance_run.return_value = False
        forecast('work', '--max-progress-count', '10')
    assert run.progress.count() == 10


@pytest.mark.django_db
def test_work_max_progress_count_in_single_turn():
    BacktestRunFactory.create_batch(10)
    with mock.patch('django_loadcast.models.advance_run') as advance_run:
        advance_run.return_value = True
        forecast('work', '--max-progress-count', '5')
    assert BacktestRun.objects.filter(state=RunState.COMPLETED).count() == 5
    assert RunProgress.objects.count() == 5


@pytest.mark.django_db
def test_work_once_exits_without_work():
    forecast('work', '--once')
    assert not RunProgress.objects.exists()


@pytest.mark.django_db(transaction=True)
def test_work_completes_runs_from_threads(settings):
    settings.LOADCAST_TIME_LIMIT_SECONDS = 60
    runs = BacktestRunFactory.create_batch(2)
    # sqlite rejects concurrent writers
    threads = 2 if connection.vendor == 'postgresql' else 1
    with mock.patch('django_loadcast.models.advance_run') as advance_run:
        advance_run.return_value = True
        forecast('work', '--threads', str(threads), '--once')
    for run in runs:
        run.refresh_from_db()
        assert run.state == RunState.COMPLETED


@pytest.mark.parametrize('args', [
    ('--threads', '0'),
    ('--threads', '2', '--max-progress-count', '3'),
])
def test_work_invalid_arguments(args):
    with pytest.raises(CommandError) as e:
        forecast('work', *args)
    assert e.value.returncode == 2
