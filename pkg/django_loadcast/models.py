import datetime
import logging
import time
import uuid

from django.conf import settings
from django.db import models, transaction
from django.utils import timezone
from django.utils.translation import gettext_lazy as _

from .config import config_from_dict
from .limits import TurnDeadline
from .pipeline import BacktestSession, emit_report, report_metrics


logger = logging.getLogger(__name__)


class RunState(models.TextChoices):
    # Run is explicitly marked not to be advanced
    BLOCKED = 'blocked'
    # Run cannot be advanced yet, because it is allowed only after future date (retry delay)
    WAITING_FOR_DATE = 'waiting_for_date'
    # Run is ready to be advanced. We are waiting for a worker to pick it up
    WAITING_FOR_WORKER = 'waiting_for_worker'
    # All backtest days are done and the report is written
    COMPLETED = 'completed'
    # Too many failed attempts when advancing the run
    GIVEN_UP = 'given_up'


FAILED_STATES = (
    RunState.BLOCKED,
    RunState.GIVEN_UP,
)


WAITING_STATES = (
    RunState.WAITING_FOR_DATE,
    RunState.WAITING_FOR_WORKER,
)


class BacktestRun(models.Model):
    """
    A stored backtest, advanced by workers a few days per turn.
    Between turns the session state lives in `checkpoint`.
    """
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    state = models.CharField(
        max_length=30,
        db_index=True,
        choices=RunState.choices,
        default=RunState.WAITING_FOR_WORKER,
    )
    config = models.JSONField()
    checkpoint = models.JSONField(null=True, blank=True)
    metrics = models.JSONField(null=True, blank=True)
    days_done = models.IntegerField(default=0)
    days_total = models.IntegerField(null=True, blank=True)
    precondition_date = models.DateTimeField(
        default=timezone.now,
        help_text=_('Run will not be advanced before this date.'),
    )
    created_at = models.DateTimeField(default=timezone.now, db_index=True)

    class Meta:
        ordering = ('-created_at',)
        indexes = [
            models.Index(
                fields=['precondition_date'],
                condition=models.Q(state=RunState.WAITING_FOR_DATE),
                name='loadcast_waiting_for_date_idx',
            ),
            models.Index(
                fields=['created_at'],
                condition=models.Q(state=RunState.WAITING_FOR_WORKER),
                name='loadcast_waiting_worker_idx',
            ),
        ]

    def __str__(self):
        return f'{self.config.get("output_dir", "backtest")} ({self.state})'


class RunProgress(models.Model):
    """
    RunProgress represents a single worker turn on a run.
    """
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    run = models.ForeignKey(BacktestRun, on_delete=models.CASCADE, related_name='progress')
    success = models.BooleanField()
    created_at = models.DateTimeField(default=timezone.now)
    time_taken = models.DurationField(null=True)
    message = models.CharField(max_length=200, blank=True)
    days_done = models.IntegerField(default=0)

    class Meta:
        ordering = ('run', '-created_at')


def schedule_run(cfg, precondition_date=None, blocked=False):
    """
    Store a backtest to be advanced by workers.
    """
    state = RunState.WAITING_FOR_WORKER
    if precondition_date is None:
        precondition_date = timezone.now()
    elif precondition_date > timezone.now():
        state = RunState.WAITING_FOR_DATE
    if blocked:
        state = RunState.BLOCKED
    return BacktestRun.objects.create(
        state=state,
        config=cfg.to_dict(),
        precondition_date=precondition_date,
    )


@transaction.atomic
def block_run(run_id):
    """
    Mark the run as blocked, so it will not be advanced.
    """
    run = BacktestRun.objects.select_for_update().get(id=run_id)
    if run.state not in WAITING_STATES:
        raise ValueError(f'Cannot block run in state {run.state}')
    run.state = RunState.BLOCKED
    run.save(update_fields=['state'])
    return run


@transaction.atomic
def unblock_retry_run(run_id):
    """
    Mark the run as unblocked, so it can be advanced again from its last checkpoint.
    """
    run = BacktestRun.objects.select_for_update().get(id=run_id)
    if run.state not in FAILED_STATES:
        raise ValueError(f'Cannot unblock/retry run in state {run.state}')
    run.state = RunState.WAITING_FOR_DATE
    run.precondition_date = timezone.now()
    run.save(update_fields=['state', 'precondition_date'])
    return run


def worker(stop_event=None, max_progress_count=float('inf'), once=False):
    """
    Busy-wait loop advancing stored runs until stop_event is set.
    Process:
    1. Release runs whose retry date has come.
    2. Advance runs waiting for a worker, one turn each.
    3. If nothing could be done, sleep for a bit.
    """
    logger.info('Busy-wait worker started')
    progress_count = 0
    while (
        stop_event is None or
        not stop_event.is_set()
    ):
        if progress_count >= max_progress_count:
            logger.info('Max progress count reached, exiting')
            break

        transitions_done, local_progress_count = worker_turn(
            stop_event=stop_event,
            max_progress_count=max_progress_count - progress_count,
        )
        progress_count += local_progress_count

        if transitions_done == 0 and local_progress_count == 0:
            if once:
                logger.info('Nothing to do, exiting because of `once` flag')
                break
            logger.debug('Nothing to do, sleeping for a bit')
            time.sleep(1)

    logger.info('Busy-wait worker exiting')


def worker_turn(now=None, stop_event=None, max_progress_count=float('inf')):
    """
    Returns a number of transitions done (all state changes)
    and a number of progress records created (backtest turns).
    """
    if now is None:
        now = timezone.now()
    transitions_done = handle_waiting_for_date(now)
    progress_count = 0
    while (
        stop_event is None or
        not stop_event.is_set()
    ):
        if progress_count >= max_progress_count:
            break
        did_a_thing = handle_waiting_for_worker()
        if not did_a_thing:
            break
        transitions_done += 1
        progress_count += 1
    return transitions_done, progress_count


@transaction.atomic
def handle_waiting_for_date(now):
    qs = BacktestRun.objects.filter(
        state=RunState.WAITING_FOR_DATE,
        precondition_date__lte=now,
    ).select_for_update(
        skip_locked=True,
        no_key=True,
    )
    ids = list(qs.values_list('id', flat=True))
    return BacktestRun.objects.filter(
        id__in=ids,
    ).update(state=RunState.WAITING_FOR_WORKER)


@transaction.atomic
def handle_waiting_for_worker():
    """
    Advance the oldest run waiting for a worker by one turn.
    """
    now = timezone.now()
    run = BacktestRun.objects.filter(state=RunState.WAITING_FOR_WORKER).order_by(
        'created_at',
    ).select_for_update(
        skip_locked=True,
        no_key=True,
    ).first()
    if run is None:
        return None

    logger.info('Just about to advance run %s (%s of %s days done)', run.id, run.days_done, run.days_total)
    start_time = time.monotonic()
    try:
        finished = advance_run(run)

    except Exception as e:  # pylint: disable=broad-except
        logger.exception('Run %s failed', run.id)
        success = False
        message = str(e)[:200]
        failure_index = run.progress.filter(success=False).count()
        retry_delay = get_retry_delay(failure_index)
        if retry_delay is None:
            run.state = RunState.GIVEN_UP
        else:
            run.state = RunState.WAITING_FOR_DATE
            run.precondition_date = now + retry_delay

    else:
        success = True
        if finished:
            logger.info('Run %s completed', run.id)
            message = 'Report written'
            run.state = RunState.COMPLETED
        else:
            message = f'{run.days_done} of {run.days_total} days'

    time_taken = time.monotonic() - start_time

    progress = run.progress.create(
        success=success,
        created_at=now,
        time_taken=datetime.timedelta(seconds=time_taken),
        message=message,
        days_done=run.days_done,
    )

    max_progress_count = getattr(settings, 'LOADCAST_MAX_PROGRESS_COUNT', 1000)
    if (
        max_progress_count is not None and
        run.state != RunState.COMPLETED and
        run.progress.count() >= max_progress_count
    ):
        logger.warning('Run %s reached max progress count, giving up', run.id)
        run.state = RunState.GIVEN_UP

    run.save(update_fields=[
        'state', 'precondition_date', 'checkpoint', 'metrics', 'days_done', 'days_total',
    ])
    return progress


# Savepoint, so that a failure inside still lets the worker record progress.
@transaction.atomic
def advance_run(run):
    """
    Restore the session, run up to LOADCAST_DAYS_PER_TURN days and store a checkpoint,
    or write the report when the last day is done. The turn stops early at a day
    boundary once LOADCAST_TIME_LIMIT_SECONDS have passed. Returns True when done.
    """
    deadline = TurnDeadline.from_settings()
    cfg = config_from_dict(run.config)
    if run.checkpoint is None:
        session = BacktestSession(cfg).prepare()
    else:
        session = BacktestSession.restore(cfg, run.checkpoint)
    session.run(max_days=getattr(settings, 'LOADCAST_DAYS_PER_TURN', 30), stop=deadline.expired)
    if session.finished:
        report = session.finalize()
        emit_report(report, cfg.output_dir)
        run.metrics = report_metrics(report)
        run.checkpoint = None
    else:
        run.checkpoint = session.checkpoint()
    run.days_done = session.next_day
    run.days_total = len(session.days)
    return session.finished


def get_retry_delay(failure_index):
    """
    Get the delay before retrying the run.
    """
    max_failures = 3
    if failure_index >= max_failures:
        return None
    return datetime.timedelta(seconds=10) * (2 ** failure_index)
