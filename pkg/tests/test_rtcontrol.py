import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulselab.centralclock import SimScheduler
from pulselab.rtcontrol import (
    ControllerConfig,
    ControlLoop,
    CycleRecord,
    NonFiniteError,
    PidGains,
    PidState,
    PlantParams,
    PlantState,
    closed_loop_matrix,
    default_n_gains,
    default_z_gains,
    deposit,
    pid_step,
    run_pulse,
    spectral_radius,
    step_plant,
)
from pulselab.sequencer import default_model
from pulselab.shottree import Finalized, ShotStore


class TestPlant:
    def test_single_step_matches_exponential(self):
        # analytic: z' = z0 * e^(gamma*dt) with no drive
        params = PlantParams(gamma=20.0)
        out = step_plant(PlantState(z=0.001), 0.0, 0.0, params, 0.001)
        expected = 0.001 * math.exp(0.02)
        assert out.z == pytest.approx(expected, rel=1e-12)
        assert abs(out.z - 0.00102020) < 1e-8

    def test_z_equilibrium(self):
        params = PlantParams(tau=0.05)
        out = step_plant(PlantState(z=0.0, n=0.7), 0.0, 0.0, params, 0.001)
        assert out.z == 0.0
        assert out.n == pytest.approx(0.7 * math.exp(-0.001 / 0.05), rel=1e-12)

    def test_density_settles_to_drive(self):
        # first-order response: after 20 tau the gap to g*q is e^-20
        params = PlantParams(tau=0.05, g=1.0)
        state = PlantState(n=0.0)
        dt = 0.001
        for _ in range(int(20 * params.tau / dt)):
            state = step_plant(state, 0.0, 1.0, params, dt)
        assert abs(state.n - 1.0) < 1e-8

    def test_gas_clamped(self):
        params = PlantParams()
        a = step_plant(PlantState(), 0.0, 5.0, params, 0.001)
        b = step_plant(PlantState(), 0.0, 1.0, params, 0.001)
        assert a.n == b.n

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteError):
            step_plant(PlantState(z=float("nan")), 0.0, 0.0, PlantParams(), 1e-3)
        with pytest.raises(NonFiniteError):
            step_plant(PlantState(), float("inf"), 0.0, PlantParams(), 1e-3)

    def test_composition_equals_analytic(self):
        """k held steps == one exact ZOH step over k*dt (within 1e-12)."""
        params = PlantParams(gamma=20.0, b=1.0, tau=0.05, g=1.0)
        dt = 1e-3
        u, q = 0.37, 0.81
        for k in (1, 7, 100, 500):
            state = PlantState(z=0.001, n=0.2)
            for _ in range(k):
                state = step_plant(state, u, q, params, dt)
            big = step_plant(PlantState(z=0.001, n=0.2), u, q, params, k * dt)
            assert state.z == pytest.approx(big.z, rel=1e-12)
            assert state.n == pytest.approx(big.n, rel=1e-12)


class TestPid:
    def test_zero_error_zero_command(self):
        gains = PidGains(kp=3.0, ki=2.0, kd=1.0, u_min=-5, u_max=5)
        state = PidState()
        for _ in range(10):
            assert pid_step(state, 0.0, 1e-3, gains) == 0.0

    def test_pure_proportional(self):
        gains = PidGains(kp=2.0, u_min=-10, u_max=10)
        assert pid_step(PidState(), 0.5, 1e-3, gains) == pytest.approx(1.0)

    def test_derivative_zero_on_first_call(self):
        gains = PidGains(kp=0.0, ki=0.0, kd=1.0, u_min=-2000, u_max=2000)
        state = PidState()
        assert pid_step(state, 5.0, 1e-3, gains) == 0.0
        # second call sees the error change
        assert pid_step(state, 6.0, 1e-3, gains) == pytest.approx(1000.0)

    def test_antiwindup_freezes_integral(self):
        """Oracle: naive integration winds up, conditional does not."""
        gains = PidGains(kp=1.0, ki=10.0, kd=0.0, u_min=-1.0, u_max=1.0)
        dt, error, steps = 1e-3, 5.0, 2000

        naive_integral = 0.0
        state = PidState()
        trajectory = []
        for _ in range(steps):
            naive_integral += error * dt  # what a windup-prone loop does
            pid_step(state, error, dt, gains)
            trajectory.append(state.integral)
        assert naive_integral == pytest.approx(10.0)
        # the command saturates immediately (kp*5 > 1), so the integral
        # must stay frozen at zero the whole time
        assert max(abs(v) for v in trajectory) == 0.0
        assert state.integral < naive_integral

    def test_clamp_bounds(self):
        gains = PidGains(kp=100.0, u_min=-2.0, u_max=3.0)
        assert pid_step(PidState(), 1.0, 1e-3, gains) == 3.0
        assert pid_step(PidState(), -1.0, 1e-3, gains) == -2.0

    def test_nonfinite(self):
        with pytest.raises(NonFiniteError):
            pid_step(PidState(), float("nan"), 1e-3, PidGains(kp=1))


class TestStabilityCertificate:
    def test_default_gains_stable(self):
        """The gate for trusting the time-domain tests below."""
        m = closed_loop_matrix(default_z_gains(), PlantParams(), 1e-3)
        rho = spectral_radius(m)
        assert rho < 1.0, f"default position gains unstable: rho={rho}"

    def test_unstable_gains_detected(self):
        # no feedback at all leaves the open-loop growth on the diagonal
        m = closed_loop_matrix(PidGains(kp=0.0, u_min=-1, u_max=1),
                               PlantParams(gamma=20.0), 1e-3)
        assert spectral_radius(m) > 1.0


class TestRunPulse:
    def test_cycle_count_default_pulse(self, scheduler):
        records = run_pulse(ControllerConfig(), PlantParams(),
                            PlantState(z=0.001), scheduler, 500_000)
        assert len(records) == 500
        assert records[0].t_us == 0
        assert records[-1].t_us == 499_000

    def test_closed_loop_regulation(self, scheduler):
        records = run_pulse(ControllerConfig(), PlantParams(),
                            PlantState(z=0.001), scheduler, 500_000)
        zs = [r.inputs[0] for r in records]
        assert max(abs(z) for z in zs) < 0.01
        assert abs(zs[-1]) < 1e-4

    def test_open_loop_matches_exponential(self, scheduler):
        """Zero gains: z grows as e^(gamma t); checked at every cycle."""
        cfg = ControllerConfig(
            z_gains=PidGains(kp=0.0, u_min=-10, u_max=10),
            n_gains=PidGains(kp=0.0, u_min=0, u_max=1))
        params = PlantParams(gamma=20.0)
        records = run_pulse(cfg, params, PlantState(z=0.001), scheduler,
                            100_000)
        assert len(records) == 100
        for rec in records:
            t_s = rec.t_us / 1e6
            expected = 0.001 * math.exp(params.gamma * t_s)
            assert abs(rec.inputs[0] - expected) <= 1e-9 * expected
        # spot value from the closed form at 100 ms
        final = step_plant(PlantState(z=records[-1].inputs[0]), 0, 0,
                           params, 1e-3)
        assert final.z == pytest.approx(0.001 * math.exp(2.0), rel=1e-9)

    def test_commands_always_clamped(self, scheduler):
        cfg = ControllerConfig()
        records = run_pulse(cfg, PlantParams(), PlantState(z=0.005),
                            scheduler, 200_000)
        for rec in records:
            assert cfg.z_gains.u_min <= rec.u_coil <= cfg.z_gains.u_max
            assert cfg.n_gains.u_min <= rec.q_gas <= cfg.n_gains.u_max

    def test_input_width_and_wideners(self, scheduler):
        cfg = ControllerConfig(n_inputs=200)
        records = run_pulse(cfg, PlantParams(), PlantState(z=0.001),
                            scheduler, 5000)
        rec = records[0]
        assert rec.inputs.shape == (200,)
        # channel j carries z*(1 + j/1000) for j = 3..n
        z = rec.inputs[0]
        assert rec.inputs[2] == pytest.approx(z * 1.003, rel=1e-15)
        assert rec.inputs[199] == pytest.approx(z * 1.200, rel=1e-15)

    def test_determinism_bit_identical(self):
        def run():
            sched = SimScheduler()
            return run_pulse(ControllerConfig(noise_scale=1e-6, noise_seed=7),
                             PlantParams(), PlantState(z=0.001), sched,
                             100_000)

        a, b = run(), run()
        assert len(a) == len(b)
        for ra, rb in zip(a, b):
            assert ra.t_us == rb.t_us
            assert ra.inputs.tobytes() == rb.inputs.tobytes()
            assert (ra.u_coil, ra.q_gas) == (rb.u_coil, rb.q_gas)

    def test_nonfinite_propagates(self, scheduler):
        cfg = ControllerConfig()
        with pytest.raises(NonFiniteError):
            run_pulse(cfg, PlantParams(), PlantState(z=float("nan")),
                      scheduler, 10_000)


@settings(max_examples=60, deadline=None)
@given(pulse_len=st.integers(1000, 2_000_000))
def test_cycle_count_property(pulse_len):
    loop = ControlLoop(ControllerConfig(n_inputs=2), PlantParams(),
                       PlantState(z=0.0001))
    sched = SimScheduler()
    loop.schedule(sched, 0, pulse_len)
    sched.advance_to(pulse_len)
    assert len(loop.records) == pulse_len // 1000


class TestDeposit:
    def test_four_signals(self, store, scheduler):
        records = run_pulse(ControllerConfig(), PlantParams(),
                            PlantState(z=0.001), scheduler, 500_000)
        tree = store.create_shot(default_model(), 1)
        deposit(records, tree)
        for path in ("\\TOP.RTCTRL.Z", "\\TOP.RTCTRL.N",
                     "\\TOP.RTCTRL.COIL:CMD", "\\TOP.RTCTRL.GAS:CMD"):
            sig = tree.get_signal(path)
            assert len(sig.samples) == 500
            assert sig.timebase.t0_us == 0 and sig.timebase.dt_us == 1000

    def test_coil_samples_bit_exact(self, store, scheduler):
        records = run_pulse(ControllerConfig(), PlantParams(),
                            PlantState(z=0.001), scheduler, 100_000)
        tree = store.create_shot(default_model(), 1)
        deposit(records, tree)
        out = tree.get_signal("\\TOP.RTCTRL.COIL:CMD").samples
        assert out.tobytes() == np.array([r.u_coil for r in records]).tobytes()

    def test_deposit_to_finalized(self, store, scheduler):
        records = run_pulse(ControllerConfig(), PlantParams(),
                            PlantState(z=0.001), scheduler, 10_000)
        tree = store.create_shot(default_model(), 1)
        tree.finalize()
        with pytest.raises(Finalized):
            deposit(records, tree)

    def test_empty_records_rejected(self, store):
        tree = store.create_shot(default_model(), 1)
        with pytest.raises(ValueError):
            deposit([], tree)
