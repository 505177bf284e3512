"""Plug-in framework for simulated diagnostics.

A diagnostic declares its channels, a sample period and a generator: a
pure function ``(t_us, plant, seed) -> per-channel values`` with no side
effects.  During a pulse the generator is sampled on the simulated clock
into per-channel ring buffers; after the pulse everything is deposited
into the shot tree at ``\\TOP.<NAME>:<CHANNEL>``.

PASSIVE diagnostics only observe the plant.  FEEDBACK diagnostics also
expose their most recent sample through ``latest`` for consumers that
want a live value mid-pulse (sampled with zero latency here).

Diagnostics are registered once and participate in every subsequent shot.
A laggard with a deposit delay beyond the sequencer's patience is skipped
and reported rather than allowed to wedge the shot cycle.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from pulselab.centralclock import SimScheduler
from pulselab.rtcontrol import PlantState
from pulselab.shottree import Signal, UniformTimebase


class DaqError(Exception):
    pass


class DuplicateName(DaqError):
    pass


class EmptyChannels(DaqError):
    pass


class NotFeedback(DaqError):
    pass


class NoSampleYet(DaqError):
    pass


class UnknownDiagnostic(DaqError):
    pass


class Kind(str, Enum):
    PASSIVE = "PASSIVE"
    FEEDBACK = "FEEDBACK"


@dataclass
class DiagnosticSpec:
    name: str
    channels: list
    sample_dt_us: int
    kind: Kind
    generator: Callable  # (t_us, plant, seed) -> sequence of channel values
    seed: Optional[int] = None
    buffer_capacity: Optional[int] = None  # default: exact expected count
    deposit_delay_us: int = 0              # simulated lag at deposit time
    generator_name: Optional[str] = None   # set when built from JSON

    def validate(self):
        if not self.channels:
            raise EmptyChannels(f"diagnostic {self.name} declares no channels")
        if self.sample_dt_us < 1:
            raise DaqError(f"sample_dt_us must be >= 1, got {self.sample_dt_us}")
        self.kind = Kind(self.kind)


class RingBuffer:
    """Fixed-capacity (t_us, value) buffer; oldest samples evict first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise DaqError(f"ring buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._buf = deque(maxlen=capacity)

    def push(self, t_us: int, value: float):
        self._buf.append((t_us, value))

    def latest(self):
        return self._buf[-1] if self._buf else None

    def snapshot(self) -> list:
        return list(self._buf)

    def __len__(self):
        return len(self._buf)


@dataclass
class DepositReport:
    deposited: dict = field(default_factory=dict)  # name -> samples/channel
    timeouts: list = field(default_factory=list)
    failures: list = field(default_factory=list)   # (name, reason)
    elapsed_us: int = 0


class DaqSystem:
    """Registry plus per-shot buffering and deposit for all diagnostics."""

    def __init__(self):
        self._specs = {}
        self._buffers = {}   # name -> {channel: RingBuffer}
        self._handles = []

    def register(self, spec: DiagnosticSpec):
        spec.validate()
        key = spec.name.upper()
        if key in self._specs:
            raise DuplicateName(f"diagnostic {key} already registered")
        self._specs[key] = spec

    def names(self) -> list:
        return sorted(self._specs)

    def spec(self, name: str) -> DiagnosticSpec:
        key = name.upper()
        if key not in self._specs:
            raise UnknownDiagnostic(f"no diagnostic named {key}")
        return self._specs[key]

    def arm_all(self, pulse_len_us: int):
        """Clear and size every buffer for the coming pulse."""
        self._buffers = {}
        self._handles = []
        for key, spec in self._specs.items():
            expected = max(1, pulse_len_us // spec.sample_dt_us)
            cap = spec.buffer_capacity or expected
            self._buffers[key] = {ch: RingBuffer(cap) for ch in spec.channels}

    def schedule_sampling(self, scheduler: SimScheduler, t0_us: int,
                          pulse_len_us: int, plant_provider: Callable):
        """Register sampling actions from T0 up to the end of the pulse."""
        for key, spec in self._specs.items():
            count = pulse_len_us // spec.sample_dt_us
            for k in range(count):
                t_rel = k * spec.sample_dt_us
                self._handles.append(scheduler.schedule(
                    t0_us + t_rel,
                    self._sample_action(spec, t_rel, plant_provider)))

    def cancel_scheduled(self, scheduler: SimScheduler):
        for h in self._handles:
            scheduler.cancel(h)
        self._handles = []

    def _sample_action(self, spec: DiagnosticSpec, t_rel_us: int,
                       plant_provider: Callable):
        def action():
            plant = plant_provider()
            values = spec.generator(t_rel_us, plant, spec.seed)
            buffers = self._buffers[spec.name.upper()]
            for ch, v in zip(spec.channels, values):
                buffers[ch].push(t_rel_us, float(v))
        return action

    def latest(self, name: str, channel: str):
        """(t_us, value) of the newest sample of a FEEDBACK channel."""
        spec = self.spec(name)
        if spec.kind is not Kind.FEEDBACK:
            raise NotFeedback(f"{spec.name} is {spec.kind.value}, not FEEDBACK")
        buffers = self._buffers.get(spec.name.upper(), {})
        buf = buffers.get(channel)
        if buf is None:
            raise UnknownDiagnostic(f"{spec.name} has no channel {channel}")
        sample = buf.latest()
        if sample is None:
            raise NoSampleYet(f"{spec.name}:{channel} has not sampled yet")
        return sample

    def sample_counts(self) -> dict:
        return {name: {ch: len(buf) for ch, buf in chans.items()}
                for name, chans in self._buffers.items()}

    def deposit_all(self, tree, *, timeout_us: Optional[int] = None) -> DepositReport:
        """Write every buffered channel into the tree as uniform signals.

        Per-diagnostic failures are recorded in the report, never raised:
        one broken instrument must not block the others or the shot cycle.
        """
        report = DepositReport()
        for key in sorted(self._buffers):
            spec = self._specs[key]
            if timeout_us is not None and spec.deposit_delay_us > timeout_us:
                report.timeouts.append(key)
                report.elapsed_us = max(report.elapsed_us, timeout_us)
                continue
            report.elapsed_us = max(report.elapsed_us, spec.deposit_delay_us)
            try:
                counts = {}
                for ch, buf in self._buffers[key].items():
                    samples = buf.snapshot()
                    if not samples:
                        counts[ch] = 0
                        continue
                    tb = UniformTimebase(samples[0][0], spec.sample_dt_us,
                                         len(samples))
                    tree.put_signal(f"\\TOP.{key}:{ch}",
                                    Signal(tb, [v for _, v in samples]))
                    counts[ch] = len(samples)
                report.deposited[key] = counts
            except Exception as e:  # noqa: BLE001 - cycle must survive
                report.failures.append((key, str(e)))
        return report


# --------------------------------------------------------------------------
# Built-in diagnostics
# --------------------------------------------------------------------------

def magnetics_generator(t_us: int, plant: PlantState, seed):
    """Four pickup coils reading the vertical position at scaled gains."""
    return [plant.z * (1.0 + 0.1 * i) for i in range(1, 5)]


def interferometer_generator(t_us: int, plant: PlantState, seed):
    """Single-chord line density readout."""
    return [plant.n]


GENERATORS = {
    "MAGNETICS": magnetics_generator,
    "INTERF": interferometer_generator,
}


def magnetics_spec(sample_dt_us: int = 1000) -> DiagnosticSpec:
    return DiagnosticSpec(
        name="MAGNETICS",
        channels=["BDOT1", "BDOT2", "BDOT3", "BDOT4"],
        sample_dt_us=sample_dt_us,
        kind=Kind.PASSIVE,
        generator=magnetics_generator,
        generator_name="MAGNETICS",
    )


def interferometer_spec(sample_dt_us: int = 1000) -> DiagnosticSpec:
    return DiagnosticSpec(
        name="INTERF",
        channels=["DENSITY"],
        sample_dt_us=sample_dt_us,
        kind=Kind.FEEDBACK,
        generator=interferometer_generator,
        generator_name="INTERF",
    )


def spec_to_json(spec: DiagnosticSpec) -> dict:
    if spec.generator_name is None:
        raise DaqError(
            f"diagnostic {spec.name} has a code-only generator and cannot "
            f"be serialized; register it through the library API instead")
    return {
        "name": spec.name,
        "channels": list(spec.channels),
        "sample_dt_us": spec.sample_dt_us,
        "kind": spec.kind.value,
        "generator": spec.generator_name,
        "seed": spec.seed,
        "deposit_delay_us": spec.deposit_delay_us,
    }


def spec_from_json(data: dict) -> DiagnosticSpec:
    gen_name = data["generator"].upper()
    if gen_name not in GENERATORS:
        raise UnknownDiagnostic(
            f"unknown generator {gen_name}; built-ins: {sorted(GENERATORS)}")
    return DiagnosticSpec(
        name=data["name"],
        channels=list(data["channels"]),
        sample_dt_us=data["sample_dt_us"],
        kind=Kind(data["kind"]),
        generator=GENERATORS[gen_name],
        seed=data.get("seed"),
        deposit_delay_us=data.get("deposit_delay_us", 0),
        generator_name=gen_name,
    )
