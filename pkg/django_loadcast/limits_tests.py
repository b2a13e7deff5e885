import pytest

from .limits import TurnDeadline, worker_memory_limit


class FakeClock:
    def __init__(self):
        self.now = 100.0

    def __call__(self):
        return self.now


def test_deadline_expires_after_its_seconds():
    clock = FakeClock()
    deadline = TurnDeadline(30, clock=clock)
    assert not deadline.expired()
    clock.now += 29.5
    assert not deadline.expired()
    clock.now += 0.5
    assert deadline.expired()


def test_deadline_without_limit_never_expires():
    clock = FakeClock()
    deadline = TurnDeadline(clock=clock)
    clock.now += 1e9
    assert not deadline.expired()


@pytest.mark.parametrize(('seconds', 'expired'), [(None, False), (0, True), (3600, False)])
def test_deadline_from_settings(settings, seconds, expired):
    settings.LOADCAST_TIME_LIMIT_SECONDS = seconds
    assert TurnDeadline.from_settings().expired() == expired


@pytest.mark.parametrize(
    ('memory_limit', 'expected_success'),
    [
        (None, True),
        (1, False),
        (64 * 1024, True),
    ],
)
def test_worker_memory_limit(settings, memory_limit, expected_success):
    settings.LOADCAST_MEMORY_LIMIT_MIB = memory_limit
    try:
        with worker_memory_limit():
            _unused = b'x' * 1024 * 1024 * 128  # noqa
    except MemoryError:
        success = False
    else:
        success = True
    assert success == expected_success
