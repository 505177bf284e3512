"""Shot-cycle state machine: configure, arm, pulse, acquire, archive, cool.

    IDLE -> CONFIGURED -> ARMED -> PULSING -> ACQUIRING -> ARCHIVING
                                      |                        |
                                      +------- abort ------> COOLDOWN -> IDLE

Any internal error drops the machine into FAULT, which only a manual
reset() leaves.  Every state change posts one ``SEQ_STATE`` bus event
with payload ``<STATE>:<shot or ->``.

The sequencer owns the simulation driver: ``trigger`` runs the whole
cycle synchronously on the caller's thread, stepping the scheduler one
action at a time and honoring abort requests between steps.  Operator
threads may call ``abort`` and ``state`` concurrently; everything else
belongs to the owning thread (the service wrapper serializes commands
for the networked case).

Timing of a defaulted shot, in simulated microseconds from trigger:

    +0          ARM clock event (one second of pre-pulse lead)
    +1_000_000  T0: PULSING begins, control cycles every 1000 us
    +1_500_000  PULSE_END: ACQUIRING, deposits, then ARCHIVING/finalize
    ...         COOLDOWN for cooldown_us (default 2 s, scaled for desk runs)
    then        IDLE

A deliberate, reproducible mid-pulse abort can be injected with
``schedule_abort_at``; it takes effect before any action scheduled at or
after the given pulse-relative time, so an abort at 250_000 us leaves
exactly 250 completed 1 ms cycles.
"""

import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from pulselab import rtcontrol
from pulselab.centralclock import CentralClock, ClockProgram, SimScheduler, default_program
from pulselab.daq import DaqSystem, DiagnosticSpec, interferometer_spec, magnetics_spec, spec_from_json, spec_to_json
from pulselab.eventbus import EVENT_SEQ_STATE
from pulselab.rtcontrol import ControllerConfig, ControlLoop, PlantParams, PlantState
from pulselab.shottree import ModelTree, Parameter, ShotStore, Usage


class SequencerError(Exception):
    pass


class WrongState(SequencerError):
    pass


class InvalidConfig(SequencerError):
    pass


class SeqState(str, Enum):
    IDLE = "IDLE"
    CONFIGURED = "CONFIGURED"
    ARMED = "ARMED"
    PULSING = "PULSING"
    ACQUIRING = "ACQUIRING"
    ARCHIVING = "ARCHIVING"
    COOLDOWN = "COOLDOWN"
    FAULT = "FAULT"


# reachable targets from each state; shared verbatim with the operator
# console, which disables buttons outside these edges
LEGAL_EDGES = {
    SeqState.IDLE: {SeqState.CONFIGURED},
    SeqState.CONFIGURED: {SeqState.CONFIGURED, SeqState.ARMED},
    SeqState.ARMED: {SeqState.PULSING, SeqState.COOLDOWN, SeqState.FAULT},
    SeqState.PULSING: {SeqState.ACQUIRING, SeqState.COOLDOWN, SeqState.FAULT},
    SeqState.ACQUIRING: {SeqState.ARCHIVING, SeqState.FAULT},
    SeqState.ARCHIVING: {SeqState.COOLDOWN, SeqState.FAULT},
    SeqState.COOLDOWN: {SeqState.IDLE},
    SeqState.FAULT: {SeqState.IDLE},
}

# which operator commands are legal in which source states; the console's
# button-enablement map mirrors this table exactly
COMMAND_SOURCES = {
    "configure": [SeqState.IDLE.value, SeqState.CONFIGURED.value,
                  SeqState.COOLDOWN.value],
    "arm": [SeqState.CONFIGURED.value],
    "trigger": [SeqState.ARMED.value],
    "abort": [SeqState.ARMED.value, SeqState.PULSING.value],
    "reset": [SeqState.FAULT.value],
}


class Outcome(str, Enum):
    COMPLETED = "COMPLETED"
    ABORTED = "ABORTED"
    FAULTED = "FAULTED"


@dataclass
class ShotRecord:
    shot_number: Optional[int]
    trace: list = field(default_factory=list)   # (SeqState, t_us)
    outcome: Optional[Outcome] = None


# parameters every shot carries
PATH_PULSE_LEN = "\\TOP.SEQ:PULSE_LEN"
PATH_OUTCOME = "\\TOP.SEQ:OUTCOME"
PATH_DAQ_TIMEOUTS = "\\TOP.SEQ:DAQ_TIMEOUTS"
PATH_NEVENTS = "\\TOP.CLOCK:NEVENTS"

DEFAULT_PULSE_LEN_US = 500_000
DEFAULT_COOLDOWN_US = 2_000_000      # ten real minutes, scaled for the desk
DEFAULT_DEPOSIT_TIMEOUT_US = 1_000_000


def default_model(diagnostics=()) -> ModelTree:
    """Node skeleton covering the sequencer, clock, control loop and the
    given diagnostics."""
    m = ModelTree()
    m.declare("\\TOP", Usage.STRUCTURE)
    m.declare("\\TOP.SEQ", Usage.STRUCTURE)
    m.declare(PATH_PULSE_LEN, Usage.PARAMETER)
    m.declare(PATH_OUTCOME, Usage.PARAMETER)
    m.declare(PATH_DAQ_TIMEOUTS, Usage.PARAMETER)
    m.declare("\\TOP.CLOCK", Usage.STRUCTURE)
    m.declare(PATH_NEVENTS, Usage.PARAMETER)
    m.declare("\\TOP.RTCTRL", Usage.STRUCTURE)
    m.declare(rtcontrol.PATH_Z, Usage.SIGNAL)
    m.declare(rtcontrol.PATH_N, Usage.SIGNAL)
    m.declare("\\TOP.RTCTRL.COIL", Usage.STRUCTURE)
    m.declare(rtcontrol.PATH_COIL, Usage.SIGNAL)
    m.declare("\\TOP.RTCTRL.GAS", Usage.STRUCTURE)
    m.declare(rtcontrol.PATH_GAS, Usage.SIGNAL)
    for spec in diagnostics:
        name = spec.name.upper()
        m.declare(f"\\TOP.{name}", Usage.STRUCTURE)
        for ch in spec.channels:
            m.declare(f"\\TOP.{name}:{ch}", Usage.SIGNAL)
    return m


@dataclass
class ShotConfig:
    pulse_len_us: int = DEFAULT_PULSE_LEN_US
    cooldown_us: int = DEFAULT_COOLDOWN_US
    clock_program: ClockProgram = None
    control: ControllerConfig = field(default_factory=ControllerConfig)
    plant: PlantParams = field(default_factory=PlantParams)
    initial: PlantState = field(default_factory=lambda: PlantState(z=0.001, n=0.0))
    diagnostics: list = field(default_factory=list)
    model: ModelTree = None

    def __post_init__(self):
        if self.clock_program is None:
            self.clock_program = default_program(self.pulse_len_us)
        if self.model is None:
            self.model = default_model(self.diagnostics)

    def validate(self):
        if self.pulse_len_us < 1000:
            raise InvalidConfig(f"pulse_len_us must be >= 1000, "
                                f"got {self.pulse_len_us}")
        if self.cooldown_us < 0:
            raise InvalidConfig("cooldown_us must be >= 0")
        try:
            self.clock_program.validate()
            self.control.validate()
            self.plant.validate()
            self.model.validate()
        except Exception as e:
            raise InvalidConfig(str(e)) from e
        t0 = self.clock_program.find("T0")
        if t0 is None or t0.offset_us != 0:
            raise InvalidConfig("clock program needs a T0 event at offset 0")
        end = self.clock_program.find("PULSE_END")
        if end is None or end.offset_us != self.pulse_len_us:
            raise InvalidConfig(
                f"clock program needs PULSE_END at +{self.pulse_len_us} us")
        declared = {d.path for d in self.model.nodes}
        required = [rtcontrol.PATH_Z, rtcontrol.PATH_N, rtcontrol.PATH_COIL,
                    rtcontrol.PATH_GAS, PATH_PULSE_LEN, PATH_OUTCOME,
                    PATH_DAQ_TIMEOUTS, PATH_NEVENTS]
        names = set()
        for spec in self.diagnostics:
            spec.validate()
            if spec.name.upper() in names:
                raise InvalidConfig(f"duplicate diagnostic {spec.name}")
            names.add(spec.name.upper())
            for ch in spec.channels:
                required.append(f"\\TOP.{spec.name.upper()}:{ch}")
        missing = [p for p in required if p not in declared]
        if missing:
            raise InvalidConfig(f"model is missing nodes: {missing}")

    def to_json(self) -> dict:
        return {
            "pulse_len_us": self.pulse_len_us,
            "cooldown_us": self.cooldown_us,
            "clock_program": self.clock_program.to_json(),
            "control": self.control.to_json(),
            "plant": vars(self.plant),
            "initial": vars(self.initial),
            "diagnostics": [spec_to_json(s) for s in self.diagnostics],
            "model": self.model.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ShotConfig":
        """Build a config from a (possibly partial) JSON object.

        Missing sections fall back to defaults; the model, when omitted,
        is rebuilt to cover whatever diagnostics were given.
        """
        diags = [spec_from_json(d) for d in data.get("diagnostics", [])] \
            if "diagnostics" in data else [magnetics_spec(), interferometer_spec()]
        pulse = data.get("pulse_len_us", DEFAULT_PULSE_LEN_US)
        cfg = cls(
            pulse_len_us=pulse,
            cooldown_us=data.get("cooldown_us", DEFAULT_COOLDOWN_US),
            clock_program=(ClockProgram.from_json(data["clock_program"])
                           if "clock_program" in data else default_program(pulse)),
            control=(ControllerConfig.from_json(data["control"])
                     if "control" in data else ControllerConfig()),
            diagnostics=diags,
            model=(ModelTree.from_json(data["model"])
                   if "model" in data else None),
        )
        if "plant" in data:
            cfg.plant = PlantParams(**data["plant"])
        if "initial" in data:
            cfg.initial = PlantState(**data["initial"])
        return cfg


def default_config(**overrides) -> ShotConfig:
    """The canonical desk-scale shot: 0.5 s pulse, both built-in
    diagnostics."""
    cfg = ShotConfig(diagnostics=[magnetics_spec(), interferometer_spec()],
                     **overrides)
    return cfg


def save_config_file(config: ShotConfig, path):
    with open(path, "w") as f:
        json.dump(config.to_json(), f, indent=2)
        f.write("\n")


def load_config_file(path) -> ShotConfig:
    with open(path) as f:
        return ShotConfig.from_json(json.load(f))


class Sequencer:
    """Drives the shot cycle against a store, scheduler and event sink."""

    def __init__(self, store: ShotStore, scheduler: SimScheduler, sink=None,
                 *, deposit_timeout_us: int = DEFAULT_DEPOSIT_TIMEOUT_US,
                 pace: float = 0.0):
        self.store = store
        self.scheduler = scheduler
        self.sink = sink
        self.clock = CentralClock(scheduler, sink)
        self.daq = DaqSystem()
        self.deposit_timeout_us = deposit_timeout_us
        # wall seconds per simulated second; 0 = free run
        self.pace = pace
        self.config: Optional[ShotConfig] = None
        self.record: Optional[ShotRecord] = None
        self.last_record: Optional[ShotRecord] = None
        self.last_shot: Optional[int] = None
        self._state = SeqState.IDLE
        self._shot: Optional[int] = None
        self._tree = None
        self._staged_config: Optional[ShotConfig] = None
        self._lock = threading.RLock()
        self._halt = threading.Event()     # shuts pacing sleeps down early
        self._abort_req = threading.Event()
        self._abort_rel_us: Optional[int] = None
        self._pulse_t0: Optional[int] = None

    # -- observers -----------------------------------------------------------

    def state(self):
        """(current state, current shot number or None)."""
        with self._lock:
            return self._state, self._shot

    @property
    def tree(self):
        return self._tree

    # -- transitions ---------------------------------------------------------

    def _enter(self, state: SeqState):
        with self._lock:
            prev = self._state
            if state not in LEGAL_EDGES[prev]:
                raise WrongState(f"illegal transition {prev.value} -> {state.value}")
            self._state = state
            shot = self._shot
        if self.record is not None:
            self.record.trace.append((state, self.scheduler.now_us))
        self._post_state(state, shot)

    def _post_state(self, state: SeqState, shot):
        if self.sink is not None:
            payload = f"{state.value}:{shot if shot is not None else '-'}"
            self.sink.post(EVENT_SEQ_STATE, payload.encode())

    def _require(self, *states):
        with self._lock:
            if self._state not in states:
                allowed = "/".join(s.value for s in states)
                raise WrongState(
                    f"command needs state {allowed}, but sequencer is "
                    f"{self._state.value}")
            return self._state

    # -- operator commands ----------------------------------------------------

    def configure(self, config: ShotConfig):
        """Validate and adopt the next shot's configuration.

        Allowed while IDLE or CONFIGURED.  During COOLDOWN the config is
        staged and applied the moment the machine returns to IDLE.
        """
        st = self._require(SeqState.IDLE, SeqState.CONFIGURED, SeqState.COOLDOWN)
        config.validate()
        if st is SeqState.COOLDOWN:
            self._staged_config = config
            return
        self.config = config
        if st is SeqState.IDLE:
            self.record = ShotRecord(None, [(SeqState.IDLE, self.scheduler.now_us)])
        self._enter(SeqState.CONFIGURED)

    def arm(self) -> int:
        """Allocate the next shot number and stand everything up."""
        self._require(SeqState.CONFIGURED)
        cfg = self.config
        shot = self.store.next_shot_number()
        tree = self.store.create_shot(cfg.model, shot,
                                      created_at_us=self.scheduler.now_us,
                                      sink=self.sink)
        tree.put_parameter(PATH_PULSE_LEN,
                           Parameter(cfg.pulse_len_us / 1e6, "s"))
        tree.put_parameter(PATH_NEVENTS,
                           Parameter(len(cfg.clock_program.events)))
        self.clock.load_program(cfg.clock_program)
        self.daq = DaqSystem()
        for spec in cfg.diagnostics:
            self.daq.register(spec)
        self.daq.arm_all(cfg.pulse_len_us)
        with self._lock:
            self._shot = shot
            self._tree = tree
        if self.record is not None:
            self.record.shot_number = shot
        self._enter(SeqState.ARMED)
        return shot

    def trigger(self):
        """Run the whole shot cycle; returns once the machine is IDLE again.

        The pulse window is [T0, T0 + pulse_len]; T0 sits one lead time
        after "now" so that pre-T0 clock events (ARM) still fire.
        """
        self._require(SeqState.ARMED)
        cfg = self.config
        lead = max(0, -cfg.clock_program.min_offset_us())
        t0 = self.scheduler.now_us + lead
        t_end = t0 + cfg.pulse_len_us
        self._pulse_t0 = t0
        control = ControlLoop(cfg.control, cfg.plant, cfg.initial)
        self.scheduler.schedule(t0, lambda: self._enter(SeqState.PULSING))
        self.clock.start(t0)
        self.daq.schedule_sampling(self.scheduler, t0, cfg.pulse_len_us,
                                   lambda: control.plant)
        control.schedule(self.scheduler, t0, cfg.pulse_len_us)
        try:
            completed = self._drive_pulse(control, t_end)
            if completed:
                self._finish_shot(control)
        except Exception:
            self._fault(control)
            raise
        finally:
            self._abort_req.clear()
            self._abort_rel_us = None
            self._pulse_t0 = None

    def abort(self):
        """Stop the shot: immediately when ARMED, at the next safe point
        when PULSING (callable from any thread in that case)."""
        st = self._require(SeqState.ARMED, SeqState.PULSING)
        if st is SeqState.PULSING:
            self._abort_req.set()
        else:
            self._abort_now(None)

    def schedule_abort_at(self, rel_us: int):
        """Arrange an abort effective at a pulse-relative simulated time.

        Actions scheduled at or after T0 + rel_us never run.  Intended for
        reproducible abort injection in tests and demos; call while ARMED.
        """
        self._require(SeqState.ARMED, SeqState.PULSING)
        self._abort_rel_us = int(rel_us)
        self._abort_req.set()

    def reset(self):
        """Manual recovery from FAULT back to IDLE."""
        self._require(SeqState.FAULT)
        with self._lock:
            self._shot = None
            self._tree = None
        self._enter(SeqState.IDLE)

    # -- cycle internals -------------------------------------------------------

    def _abort_deadline(self) -> Optional[int]:
        if not self._abort_req.is_set():
            return None
        if self._abort_rel_us is None:
            return self.scheduler.now_us
        return self._pulse_t0 + self._abort_rel_us

    def _pace_sleep(self, sim_dt_us: int):
        if self.pace <= 0 or sim_dt_us <= 0:
            return
        remaining = sim_dt_us * self.pace / 1e6
        while remaining > 0 and not self._halt.is_set():
            step = min(remaining, 0.05)
            time.sleep(step)
            remaining -= step

    def _drive_pulse(self, control: ControlLoop, t_end: int) -> bool:
        """Step the scheduler through the pulse; False when aborted."""
        while True:
            due = self.scheduler.peek_due()
            upcoming = t_end if due is None or due > t_end else due
            deadline = self._abort_deadline()
            if deadline is not None and deadline <= upcoming:
                self._abort_now(control, at_us=max(deadline, self.scheduler.now_us))
                return False
            if due is None or due > t_end:
                break
            self._pace_sleep(due - self.scheduler.now_us)
            self.scheduler.run_next()
        self._pace_sleep(t_end - self.scheduler.now_us)
        self.scheduler.advance_to(t_end)
        return True

    def _deposit(self, control: Optional[ControlLoop]):
        tree = self._tree
        if control is not None and control.records:
            rtcontrol.deposit(control.records, tree)
        report = self.daq.deposit_all(tree, timeout_us=self.deposit_timeout_us)
        tree.put_parameter(PATH_DAQ_TIMEOUTS,
                           Parameter(",".join(report.timeouts)))
        return report

    def _finish_shot(self, control: ControlLoop):
        self._enter(SeqState.ACQUIRING)
        report = self._deposit(control)
        if report.elapsed_us:
            self._pace_sleep(report.elapsed_us)
            self.scheduler.advance_to(self.scheduler.now_us + report.elapsed_us)
        self._enter(SeqState.ARCHIVING)
        self._tree.put_parameter(PATH_OUTCOME, Parameter(Outcome.COMPLETED.value))
        self._tree.finalize(at_us=self.scheduler.now_us)
        self._cooldown_and_idle(Outcome.COMPLETED)

    def _abort_now(self, control: Optional[ControlLoop], at_us: Optional[int] = None):
        """Tear down the pulse, deposit what exists, archive as ABORTED."""
        self.clock.stop()
        if control is not None:
            control.cancel(self.scheduler)
        self.daq.cancel_scheduled(self.scheduler)
        if at_us is not None and at_us > self.scheduler.now_us:
            self.scheduler.advance_to(at_us)
        self._abort_req.clear()
        self._abort_rel_us = None
        self._deposit(control)
        self._tree.put_parameter(PATH_OUTCOME, Parameter(Outcome.ABORTED.value))
        self._tree.finalize(at_us=self.scheduler.now_us)
        self._cooldown_and_idle(Outcome.ABORTED)

    def _cooldown_and_idle(self, outcome: Outcome):
        self._enter(SeqState.COOLDOWN)
        self._pace_sleep(self.config.cooldown_us)
        self.scheduler.advance_to(self.scheduler.now_us + self.config.cooldown_us)
        with self._lock:
            self.last_shot = self._shot
            self._shot = None
            self._tree = None
        self._enter(SeqState.IDLE)
        if self.record is not None:
            self.record.outcome = outcome
            self.last_record = self.record
            self.record = None
        if self._staged_config is not None:
            staged, self._staged_config = self._staged_config, None
            self.configure(staged)

    def _fault(self, control: Optional[ControlLoop]):
        self.clock.stop()
        if control is not None:
            control.cancel(self.scheduler)
        self.daq.cancel_scheduled(self.scheduler)
        try:
            if self._tree is not None and self._tree.state.value == "OPEN":
                self._tree.put_parameter(PATH_OUTCOME,
                                         Parameter(Outcome.FAULTED.value))
                self._tree.finalize(at_us=self.scheduler.now_us)
        except Exception:
            pass  # storage may be the thing that failed
        self._enter(SeqState.FAULT)
        if self.record is not None:
            self.record.outcome = Outcome.FAULTED
            self.last_record = self.record
            self.record = None

    def halt(self):
        """Stop pacing sleeps promptly (service shutdown)."""
        self._halt.set()
