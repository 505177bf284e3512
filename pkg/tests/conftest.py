import pytest

from pulselab import eventbus
from pulselab.centralclock import SimScheduler
from pulselab.shottree import ShotStore


class LocalSink:
    """In-process event sink recording (name, payload) posts."""

    def __init__(self):
        self.events = []

    def post(self, name, payload):
        self.events.append((name, bytes(payload)))

    def named(self, name):
        return [p for n, p in self.events if n == name]


@pytest.fixture
def sink():
    return LocalSink()


@pytest.fixture
def store(tmp_path):
    return ShotStore(tmp_path / "lab")


@pytest.fixture
def scheduler():
    return SimScheduler()


@pytest.fixture
def broker():
    b = eventbus.Broker().start()
    yield b
    b.stop()


@pytest.fixture
def bus_pair(broker):
    a = eventbus.connect(broker.address)
    b = eventbus.connect(broker.address)
    yield a, b
    a.close()
    b.close()
