"""Millisecond feedback control over a toy plasma-like plant.

The plant has two decoupled states driven by two actuators:

    vertical position   dz/dt = gamma*z + b*u_coil     (unstable: gamma > 0)
    line density        dn/dt = (g*q_gas - n) / tau    (first-order lag)

Both are discretized with an exact zero-order hold over each control
period dt, i.e. the actuator command is held constant across the cycle:

    z' = exp(gamma*dt)*z + (b/gamma)*(exp(gamma*dt) - 1)*u_coil
    n' = n*exp(-dt/tau) + g*q_gas*(1 - exp(-dt/tau))

Because the hold is exact, composing k single steps equals one analytic
step of k*dt, which is what the tests lean on.

The controller is a pair of PID loops with conditional integration: the
integral only accumulates while the command is inside its clamp, so a
saturated actuator does not wind up.  The loop runs at a fixed 1 ms period
and snapshots a configurable number of input channels each cycle; channels
beyond the two physical sensors are synthetic wideners, present to give
the acquisition path a realistic width.

``closed_loop_matrix`` builds the 3-state transition matrix of the
position loop (z, integral, previous error) in its unsaturated regime;
gains are acceptable when its spectral radius is below one.  Validate
gains with it before trusting time-domain runs.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from pulselab.centralclock import SimScheduler
from pulselab.shottree import Signal, UniformTimebase


class NonFiniteError(ValueError):
    """An input or state stopped being a finite number."""


@dataclass
class PlantParams:
    gamma: float = 20.0   # 1/s, vertical growth rate
    b: float = 1.0        # m/(s * command unit), coil gain
    tau: float = 0.05     # s, density time constant
    g: float = 1.0        # density units at full gas feed

    def validate(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


@dataclass
class PlantState:
    z: float = 0.0
    n: float = 0.0


def step_plant(state: PlantState, u_coil: float, q_gas: float,
               params: PlantParams, dt_s: float) -> PlantState:
    """One exact zero-order-hold step of the plant over dt_s seconds."""
    if dt_s <= 0:
        raise ValueError(f"dt_s must be positive, got {dt_s}")
    if not (math.isfinite(state.z) and math.isfinite(state.n)
            and math.isfinite(u_coil) and math.isfinite(q_gas)):
        raise NonFiniteError("non-finite plant input")
    q = min(max(q_gas, 0.0), 1.0)
    ez = math.exp(params.gamma * dt_s)
    z = ez * state.z + (params.b / params.gamma) * (ez - 1.0) * u_coil
    en = math.exp(-dt_s / params.tau)
    n = state.n * en + params.g * q * (1.0 - en)
    if not (math.isfinite(z) and math.isfinite(n)):
        raise NonFiniteError("plant state diverged to non-finite")
    return PlantState(z, n)


@dataclass
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    u_min: float = -1.0
    u_max: float = 1.0

    def validate(self):
        if not self.u_min < self.u_max:
            raise ValueError(f"need u_min < u_max, got [{self.u_min}, {self.u_max}]")


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: Optional[float] = None


def pid_step(state: PidState, error: float, dt_s: float, gains: PidGains) -> float:
    """One discrete PID update; returns the clamped command.

    The integral update is committed only when the resulting command lies
    inside [u_min, u_max]; while clamped, the integral is frozen.  The
    derivative acts on the error and is zero on the first call.
    """
    if not math.isfinite(error) or dt_s <= 0:
        raise NonFiniteError(f"bad pid input error={error} dt={dt_s}")
    if state.prev_error is None:
        derivative = 0.0
    else:
        derivative = (error - state.prev_error) / dt_s
    candidate = state.integral + error * dt_s
    u = gains.kp * error + gains.ki * candidate + gains.kd * derivative
    if u > gains.u_max:
        u = gains.u_max
    elif u < gains.u_min:
        u = gains.u_min
    else:
        state.integral = candidate
    state.prev_error = error
    return u


def default_z_gains() -> PidGains:
    return PidGains(kp=40.0, ki=100.0, kd=0.5, u_min=-10.0, u_max=10.0)


def default_n_gains() -> PidGains:
    return PidGains(kp=2.0, ki=20.0, kd=0.0, u_min=0.0, u_max=1.0)


@dataclass
class ControllerConfig:
    dt_us: int = 1000
    z_ref: float = 0.0
    n_ref: float = 0.5
    z_gains: PidGains = field(default_factory=default_z_gains)
    n_gains: PidGains = field(default_factory=default_n_gains)
    n_inputs: int = 200
    noise_scale: float = 0.0   # stddev added to synthetic channels
    noise_seed: int = 0

    def validate(self):
        if self.dt_us != 1000:
            raise ValueError(f"control period is fixed at 1000 us, got {self.dt_us}")
        if self.n_inputs < 2:
            raise ValueError(f"need at least 2 input channels, got {self.n_inputs}")
        self.z_gains.validate()
        self.n_gains.validate()

    def to_json(self) -> dict:
        return {
            "dt_us": self.dt_us,
            "z_ref": self.z_ref,
            "n_ref": self.n_ref,
            "z_gains": vars(self.z_gains),
            "n_gains": vars(self.n_gains),
            "n_inputs": self.n_inputs,
            "noise_scale": self.noise_scale,
            "noise_seed": self.noise_seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ControllerConfig":
        cfg = cls()
        for key in ("dt_us", "z_ref", "n_ref", "n_inputs", "noise_scale",
                    "noise_seed"):
            if key in data:
                setattr(cfg, key, data[key])
        if "z_gains" in data:
            cfg.z_gains = PidGains(**data["z_gains"])
        if "n_gains" in data:
            cfg.n_gains = PidGains(**data["n_gains"])
        return cfg


@dataclass
class CycleRecord:
    t_us: int                 # pulse-relative, multiple of the period
    inputs: np.ndarray        # inputs[0] = z sensor, inputs[1] = n sensor
    u_coil: float
    q_gas: float


class ControlLoop:
    """The per-pulse control task: schedules one cycle per period.

    The loop owns the live plant state; diagnostics snapshot it through
    the plant attribute.  Records accumulate in local memory and are
    deposited only after the pulse.
    """

    def __init__(self, config: ControllerConfig, params: PlantParams,
                 initial: PlantState):
        config.validate()
        params.validate()
        self.config = config
        self.params = params
        self.plant = PlantState(initial.z, initial.n)
        self.records = []
        self._z_pid = PidState()
        self._n_pid = PidState()
        self._rng = (np.random.default_rng(config.noise_seed)
                     if config.noise_scale > 0 else None)
        self._handles = []
        # channel j (1-based, j >= 3) reads z scaled by (1 + j/1000)
        self._widener = 1.0 + np.arange(3, config.n_inputs + 1) / 1000.0

    def schedule(self, scheduler: SimScheduler, t0_us: int, pulse_len_us: int):
        """Register one action per control cycle on the pulse window."""
        cycles = pulse_len_us // self.config.dt_us
        for k in range(cycles):
            t_rel = k * self.config.dt_us
            self._handles.append(
                scheduler.schedule(t0_us + t_rel, self._cycle_action(t_rel)))

    def cancel(self, scheduler: SimScheduler):
        for h in self._handles:
            scheduler.cancel(h)
        self._handles = []

    def _cycle_action(self, t_rel_us: int):
        return lambda: self.run_cycle(t_rel_us)

    def run_cycle(self, t_rel_us: int):
        cfg = self.config
        dt_s = cfg.dt_us / 1e6
        z, n = self.plant.z, self.plant.n
        inputs = np.empty(cfg.n_inputs)
        inputs[0] = z
        inputs[1] = n
        if cfg.n_inputs > 2:
            inputs[2:] = z * self._widener
            if self._rng is not None:
                inputs[2:] += self._rng.normal(0.0, cfg.noise_scale,
                                               cfg.n_inputs - 2)
        u_coil = pid_step(self._z_pid, cfg.z_ref - z, dt_s, cfg.z_gains)
        q_gas = pid_step(self._n_pid, cfg.n_ref - n, dt_s, cfg.n_gains)
        self.records.append(CycleRecord(t_rel_us, inputs, u_coil, q_gas))
        self.plant = step_plant(self.plant, u_coil, q_gas, self.params, dt_s)


def run_pulse(config: ControllerConfig, params: PlantParams,
              initial: PlantState, scheduler: SimScheduler,
              pulse_len_us: int, t0_us: Optional[int] = None) -> list:
    """Run a standalone pulse to completion; returns the cycle records.

    When driven by the shot sequencer the ControlLoop is scheduled
    alongside the clock and diagnostics instead; this entry point exists
    for isolated control studies.
    """
    loop = ControlLoop(config, params, initial)
    t0 = scheduler.now_us if t0_us is None else t0_us
    loop.schedule(scheduler, t0, pulse_len_us)
    scheduler.advance_to(t0 + pulse_len_us)
    return loop.records


# node paths the deposit step fills in
PATH_Z = "\\TOP.RTCTRL.Z"
PATH_N = "\\TOP.RTCTRL.N"
PATH_COIL = "\\TOP.RTCTRL.COIL:CMD"
PATH_GAS = "\\TOP.RTCTRL.GAS:CMD"


def deposit(records: list, tree):
    """Write the four control waveforms into an open shot tree."""
    if not records:
        raise ValueError("no cycle records to deposit")
    dt = records[1].t_us - records[0].t_us if len(records) > 1 else 1000
    tb = UniformTimebase(records[0].t_us, dt, len(records))
    tree.put_signal(PATH_Z, Signal(tb, [r.inputs[0] for r in records], "m"))
    tree.put_signal(PATH_N, Signal(tb, [r.inputs[1] for r in records], "au"))
    tree.put_signal(PATH_COIL, Signal(tb, [r.u_coil for r in records], "au"))
    tree.put_signal(PATH_GAS, Signal(tb, [r.q_gas for r in records], "au"))


# --------------------------------------------------------------------------
# Gain validation
# --------------------------------------------------------------------------

def closed_loop_matrix(gains: PidGains, params: PlantParams,
                       dt_s: float = 1e-3) -> np.ndarray:
    """Transition matrix of the unsaturated position loop.

    State is (z, integral, previous error) with reference zero, so the
    error is -z.  The command uses the committed (already updated)
    integral, matching pid_step.
    """
    a = math.exp(params.gamma * dt_s)
    b = (params.b / params.gamma) * (a - 1.0)
    return np.array([
        [a - b * (gains.kp + gains.ki * dt_s + gains.kd / dt_s),
         b * gains.ki, -b * gains.kd / dt_s],
        [-dt_s, 1.0, 0.0],
        [-1.0, 0.0, 0.0],
    ])


def spectral_radius(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))
