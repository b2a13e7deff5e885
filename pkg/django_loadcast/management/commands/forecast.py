import contextlib
import json
import logging
import signal
import threading
from dataclasses import replace

from django.core.management.base import BaseCommand, CommandError

from django_loadcast.config import load_config
from django_loadcast.errors import ConfigError, DataError, LoadcastError
from django_loadcast.limits import worker_memory_limit
from django_loadcast.models import schedule_run, worker
from django_loadcast.pipeline import (
    BacktestSession, emit_report, evaluate, load_report, run_backtest,
)
from django_loadcast.synthetic import Scenario, gen_synthetic
from django_loadcast.timeseries import write_csv


logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run, evaluate and inspect day-ahead load forecasting backtests'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='subcommand', required=True)

        run = subparsers.add_parser('run', help='Run a backtest and write its report')
        run.add_argument('--config', required=True)
        run.add_argument('--output', help='Report directory, overrides output_dir of the config')
        run.add_argument(
            '--enqueue',
            action='store_true',
            help='Store the run for background workers instead of running it now',
        )

        evaluate_parser = subparsers.add_parser('evaluate', help='MAE of a written report over a window')
        evaluate_parser.add_argument('--report', required=True)
        evaluate_parser.add_argument('--window', help='start:end, defaults to the whole test window')

        synth = subparsers.add_parser('synth', help='Generate a synthetic dataset')
        synth.add_argument('--scenario', required=True)
        synth.add_argument('--seed', type=int, default=0)
        synth.add_argument('--out', required=True)

        select = subparsers.add_parser('select', help='Greedy expert selection on the validation window')
        select.add_argument('--config', required=True)
        select.add_argument('--max-size', type=int, default=30)
        select.add_argument(
            '--no-early-stop',
            action='store_true',
            help='Keep adding the best remaining expert up to --max-size',
        )

        work = subparsers.add_parser('work', help='Advance stored runs until stopped')
        work.add_argument('--threads', type=int, default=1, help='Runs advanced at the same time')
        work.add_argument('--once', action='store_true', help='Exit when no work is available')
        work.add_argument(
            '--max-progress-count',
            type=int,
            default=None,
            help='Exit when this many turns are done (single thread only)',
        )

    def handle(self, *args, subcommand, **options):
        try:
            getattr(self, f'handle_{subcommand}')(**options)
        except ConfigError as e:
            raise CommandError(str(e), returncode=2) from e
        except DataError as e:
            raise CommandError(str(e), returncode=3) from e
        except LoadcastError as e:
            raise CommandError(str(e)) from e

    def handle_run(self, config, output=None, enqueue=False, **options):
        cfg = load_config(config)
        if output:
            cfg = replace(cfg, output_dir=output)
        if not cfg.roster:
            self.stderr.write('Warning: the roster is empty')
        if enqueue:
            run = schedule_run(cfg)
            self.stdout.write(f'Scheduled run {run.id}')
            return
        report = run_backtest(cfg)
        emit_report(report, cfg.output_dir)
        self._write_mae(evaluate(report) if report.forecasts else {})
        self.stdout.write(f'Report written to {cfg.output_dir}')

    def handle_evaluate(self, report, window=None, **options):
        self._write_mae(evaluate(load_report(report), window))

    def handle_synth(self, scenario, seed, out, **options):
        try:
            with open(scenario, encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f'Cannot read scenario {scenario}: {e}') from e
        ds = gen_synthetic(Scenario.from_dict(data), seed)
        write_csv(ds, out)
        self.stdout.write(f'Wrote {len(ds)} hours to {out}')

    def handle_select(self, config, max_size, no_early_stop=False, **options):
        cfg = load_config(config)
        session = BacktestSession(cfg).prepare()
        session.run(until=cfg.segmentation.validation_window[1])
        selection = session.select(max_size, stop_early=not no_early_stop)
        for size, (name, mae) in enumerate(zip(selection.order, selection.curve), start=1):
            marker = ' *' if size == selection.best_size else ''
            self.stdout.write(f'{size:3d} {name:40s} {mae:.4f}{marker}')

    def handle_work(self, threads, once=False, max_progress_count=None, **options):
        if threads < 1:
            raise ConfigError('--threads must be at least 1')
        if threads > 1 and max_progress_count is not None:
            raise ConfigError('--max-progress-count needs a single thread')
        with worker_memory_limit(), stop_signal_handler() as stop_event:
            if threads == 1:
                limit = float('inf') if max_progress_count is None else max_progress_count
                worker(stop_event, max_progress_count=limit, once=once)
            else:
                threaded_worker(threads, stop_event=stop_event, once=once)

    def _write_mae(self, mae):
        for name, value in sorted(mae.items()):
            self.stdout.write(f'{name:40s} {value:.4f}')


def threaded_worker(thread_count, stop_event=None, once=False):
    threads = [
        threading.Thread(
            target=run_worker_thread,
            kwargs={'stop_event': stop_event, 'once': once},
            name=f'loadcast-worker-{index}',
        )
        for index in range(thread_count)
    ]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()


def run_worker_thread(stop_event=None, once=False):
    while stop_event is None or not stop_event.is_set():
        try:
            worker(stop_event=stop_event, once=once)
        except Exception:  # pylint: disable=broad-except
            logger.exception('Worker thread %s crashed', threading.current_thread().name)
        if once:
            break


@contextlib.contextmanager
def stop_signal_handler():
    """
    Event set by SIGINT or SIGTERM; workers finish their current turn and exit.
    """
    stop_event = threading.Event()

    def handler(signum, frame):
        logger.info('Received signal %s, stopping after the current turn', signal.Signals(signum).name)
        stop_event.set()

    previous = {signum: signal.signal(signum, handler) for signum in (signal.SIGINT, signal.SIGTERM)}
    try:
        yield stop_event
    finally:
        for signum, old_handler in previous.items():
            signal.signal(signum, old_handler)
