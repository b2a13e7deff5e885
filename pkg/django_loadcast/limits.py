"""
Resource limits of stored-run workers. A turn stops at the first backtest day
boundary after LOADCAST_TIME_LIMIT_SECONDS and keeps its checkpoint; the address
space of a worker process is capped at LOADCAST_MEMORY_LIMIT_MIB.
"""
import logging
import resource
import time
from contextlib import contextmanager

from django.conf import settings


logger = logging.getLogger(__name__)


class TurnDeadline:
    """
    Wall-clock budget of one worker turn, polled between backtest days.
    """
    def __init__(self, seconds=None, clock=time.monotonic):
        self.seconds = seconds
        self.clock = clock
        self.expires_at = None if seconds is None else clock() + seconds

    @classmethod
    def from_settings(cls):
        return cls(getattr(settings, 'LOADCAST_TIME_LIMIT_SECONDS', None))

    def expired(self):
        return self.expires_at is not None and self.clock() >= self.expires_at

    def __repr__(self):
        return f'TurnDeadline(seconds={self.seconds})'


@contextmanager
def worker_memory_limit():
    """
    Cap the address space of the whole worker process while it advances runs.
    A turn running out of memory fails and is retried like any other failure.
    """
    limit_mib = getattr(settings, 'LOADCAST_MEMORY_LIMIT_MIB', None)
    if limit_mib is None:
        yield
        return
    soft, hard = resource.getrlimit(resource.RLIMIT_AS)
    limit = limit_mib * 1024 * 1024
    if hard != resource.RLIM_INFINITY:
        limit = min(limit, hard)
    resource.setrlimit(resource.RLIMIT_AS, (limit, hard))
    logger.info('Worker address space limited to %d MiB', limit // (1024 * 1024))
    try:
        yield
    finally:
        resource.setrlimit(resource.RLIMIT_AS, (soft, hard))
