"""Facility master clock: simulated microsecond timeline and timing events.

All time is integer microseconds; nothing here ever rounds.  A clock
program holds up to fifteen named events with signed offsets from T0.
When started, each event is broadcast on the bus as ``CLOCK`` with a
9-byte payload: one encoded code byte followed by the absolute simulated
time as a little-endian uint64.

The code byte packs the event code in the low nibble and its ones
complement (15 - code) in the high nibble, so any single corrupted nibble
is detectable.  Code 0 is reserved as "no event" and never valid on the
wire.

The scheduler is single-threaded by contract: one driver advances it, and
actions run inline on that driver.  Actions must not re-enter advance_to.
"""

import heapq
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

MAX_EVENTS = 15

EVENT_CLOCK = "CLOCK"

_CLOCK_PAYLOAD = struct.Struct("<Q")


class ClockError(Exception):
    pass


class TooManyEvents(ClockError):
    pass


class DuplicateCode(ClockError):
    pass


class DuplicateName(ClockError):
    pass


class ClockRunning(ClockError):
    pass


class NoProgram(ClockError):
    pass


class TimeInPast(ClockError):
    pass


class BadCode(ClockError):
    pass


class BadCheck(ClockError):
    pass


class TimeReversal(ClockError):
    pass


def encode_event(code: int) -> int:
    """Pack a timing-event code 1..15 into its checked wire byte."""
    if not 1 <= code <= MAX_EVENTS:
        raise BadCode(f"event code must be 1..{MAX_EVENTS}, got {code}")
    return ((MAX_EVENTS - code) << 4) | code


def decode_event(byte: int) -> int:
    """Validate a wire byte and return its event code."""
    if not 0 <= byte <= 0xFF:
        raise BadCheck(f"not a byte: {byte}")
    code = byte & 0x0F
    check = (byte >> 4) & 0x0F
    if check != MAX_EVENTS - code:
        raise BadCheck(f"corrupt event byte 0x{byte:02X}")
    if code == 0:
        raise BadCode("code 0 is reserved")
    return code


@dataclass(frozen=True)
class TimingEvent:
    code: int
    name: str
    offset_us: int


@dataclass
class ClockProgram:
    """Up to fifteen timing events, kept sorted by (offset, code)."""

    events: list = field(default_factory=list)

    def add(self, code: int, name: str, offset_us: int) -> "ClockProgram":
        self.events.append(TimingEvent(code, name.upper(), int(offset_us)))
        return self

    def validate(self):
        if len(self.events) > MAX_EVENTS:
            raise TooManyEvents(f"{len(self.events)} events > {MAX_EVENTS}")
        codes, names = set(), set()
        for ev in self.events:
            if not 1 <= ev.code <= MAX_EVENTS:
                raise BadCode(f"event code {ev.code} out of range")
            if ev.code in codes:
                raise DuplicateCode(f"code {ev.code} appears twice")
            if ev.name in names:
                raise DuplicateName(f"name {ev.name} appears twice")
            codes.add(ev.code)
            names.add(ev.name)

    def sorted_events(self) -> list:
        return sorted(self.events, key=lambda ev: (ev.offset_us, ev.code))

    def find(self, name: str) -> Optional[TimingEvent]:
        for ev in self.events:
            if ev.name == name.upper():
                return ev
        return None

    def min_offset_us(self) -> int:
        return min((ev.offset_us for ev in self.events), default=0)

    def to_json(self) -> list:
        return [{"code": ev.code, "name": ev.name, "offset_us": ev.offset_us}
                for ev in self.events]

    @classmethod
    def from_json(cls, data: list) -> "ClockProgram":
        prog = cls()
        for item in data:
            prog.add(item["code"], item["name"], item["offset_us"])
        return prog


def default_program(pulse_len_us: int = 500_000) -> ClockProgram:
    """ARM one second before T0, T0 itself, and PULSE_END."""
    return (ClockProgram()
            .add(1, "ARM", -1_000_000)
            .add(2, "T0", 0)
            .add(3, "PULSE_END", pulse_len_us))


# --------------------------------------------------------------------------
# Discrete-event scheduler
# --------------------------------------------------------------------------

class Handle:
    """Token for a scheduled action; cancel via SimScheduler.cancel."""

    __slots__ = ("due_us", "cancelled")

    def __init__(self, due_us: int):
        self.due_us = due_us
        self.cancelled = False


class SimScheduler:
    """Time-ordered action queue over a simulated microsecond clock.

    Actions fire in (due time, insertion order).  now_us never decreases.
    """

    def __init__(self, start_us: int = 0):
        self._now = int(start_us)
        self._seq = 0
        self._heap = []  # (due_us, seq, handle, action)

    @property
    def now_us(self) -> int:
        return self._now

    def schedule(self, due_us: int, action: Callable) -> Handle:
        due = int(due_us)
        if due < self._now:
            raise TimeReversal(f"cannot schedule at {due} before now {self._now}")
        handle = Handle(due)
        heapq.heappush(self._heap, (due, self._seq, handle, action))
        self._seq += 1
        return handle

    def cancel(self, handle: Handle):
        handle.cancelled = True

    def peek_due(self) -> Optional[int]:
        """Due time of the next live action, or None."""
        self._prune()
        return self._heap[0][0] if self._heap else None

    def _prune(self):
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)

    def run_next(self) -> bool:
        """Execute the next live action, advancing now to its due time."""
        self._prune()
        if not self._heap:
            return False
        due, _, _, action = heapq.heappop(self._heap)
        self._now = due
        action()
        return True

    def advance_to(self, t_us: int):
        """Run everything due at or before t_us, then set now = t_us."""
        t = int(t_us)
        if t < self._now:
            raise TimeReversal(f"advance_to({t}) before now {self._now}")
        while True:
            due = self.peek_due()
            if due is None or due > t:
                break
            self.run_next()
        self._now = t

    def pending(self) -> int:
        self._prune()
        return len(self._heap)


# --------------------------------------------------------------------------
# Central clock
# --------------------------------------------------------------------------

class CentralClock:
    """Runs a loaded program against a scheduler, broadcasting each event.

    Broadcasts go to the event sink (anything with post(name, payload)) as
    ``CLOCK`` events, and to in-process callbacks registered with
    on_event(fn); callbacks receive (code, name, absolute_us).
    """

    def __init__(self, scheduler: SimScheduler, sink=None):
        self.scheduler = scheduler
        self.sink = sink
        self._program = None
        self._handles = []
        self._live = 0
        self._callbacks = []

    def on_event(self, fn: Callable):
        self._callbacks.append(fn)

    @property
    def running(self) -> bool:
        return self._live > 0

    @property
    def program(self) -> Optional[ClockProgram]:
        return self._program

    def load_program(self, program: ClockProgram):
        if self.running:
            raise ClockRunning("cannot load a program while events are pending")
        program.validate()
        self._program = program

    def start(self, t0_at_us: int):
        """Schedule every program event relative to t0_at_us."""
        if self._program is None:
            raise NoProgram("no program loaded")
        if self.running:
            raise ClockRunning("program already running")
        first = t0_at_us + self._program.min_offset_us()
        if first < self.scheduler.now_us:
            raise TimeInPast(
                f"earliest event at {first} is before now "
                f"{self.scheduler.now_us}")
        self._handles = []
        for ev in self._program.sorted_events():
            abs_us = t0_at_us + ev.offset_us
            self._handles.append(
                self.scheduler.schedule(abs_us, self._fire(ev, abs_us)))
        self._live = len(self._handles)

    def _fire(self, ev: TimingEvent, abs_us: int):
        def action():
            self._live -= 1
            if self.sink is not None:
                payload = bytes([encode_event(ev.code)]) + _CLOCK_PAYLOAD.pack(abs_us)
                self.sink.post(EVENT_CLOCK, payload)
            for fn in self._callbacks:
                fn(ev.code, ev.name, abs_us)
        return action

    def stop(self):
        """Cancel any not-yet-fired events."""
        for h in self._handles:
            self.scheduler.cancel(h)
        self._handles = []
        self._live = 0


def decode_clock_payload(payload: bytes):
    """Inverse of the CLOCK broadcast payload: (code, absolute_us)."""
    if len(payload) != 1 + _CLOCK_PAYLOAD.size:
        raise BadCheck(f"CLOCK payload must be 9 bytes, got {len(payload)}")
    code = decode_event(payload[0])
    (abs_us,) = _CLOCK_PAYLOAD.unpack(payload[1:])
    return code, abs_us


def save_program(program: ClockProgram, path):
    with open(path, "w") as f:
        json.dump(program.to_json(), f, indent=2)
        f.write("\n")


def load_program_file(path) -> ClockProgram:
    with open(path) as f:
        return ClockProgram.from_json(json.load(f))
