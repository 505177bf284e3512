"""The control problem in isolation: an exponentially unstable vertical
position, a lagging density channel, and the 1 ms PID loop that tames
them.  Shows the stability certificate the defaults were validated with."""

import math

from pulselab.centralclock import SimScheduler
from pulselab.rtcontrol import (
    ControllerConfig,
    PidGains,
    PlantParams,
    PlantState,
    closed_loop_matrix,
    default_z_gains,
    run_pulse,
    spectral_radius,
    step_plant,
)

params = PlantParams()  # gamma = 20/s: position doubles every ~35 ms
print(f"plant: dz/dt = {params.gamma}*z + u, doubling time "
      f"{math.log(2) / params.gamma * 1e3:.1f} ms")

# One exact zero-order-hold step equals the closed form.
s1 = step_plant(PlantState(z=0.001), 0.0, 0.0, params, 0.001)
print(f"one 1 ms drift step: z 0.001 -> {s1.z:.8f} "
      f"(analytic {0.001 * math.exp(0.02):.8f})")

# Gains are trusted only after the spectral radius check.
rho = spectral_radius(closed_loop_matrix(default_z_gains(), params, 1e-3))
print(f"closed-loop spectral radius with default gains: {rho:.4f} (< 1)")

# Open loop: watch it run away.
open_cfg = ControllerConfig(z_gains=PidGains(kp=0, u_min=-1, u_max=1),
                            n_gains=PidGains(kp=0, u_min=0, u_max=1))
records = run_pulse(open_cfg, params, PlantState(z=0.001), SimScheduler(),
                    200_000)
print(f"open loop:   z(0)=0.001  ->  z(200 ms)={records[-1].inputs[0]:.3f}")

# Closed loop: the same plant held to a hair's width for half a second.
records = run_pulse(ControllerConfig(), params, PlantState(z=0.001),
                    SimScheduler(), 500_000)
zs = [r.inputs[0] for r in records]
ns = [r.inputs[1] for r in records]
print(f"closed loop: max|z| = {max(abs(z) for z in zs):.2e}, "
      f"final |z| = {abs(zs[-1]):.2e}")
print(f"density:     n(0)=0  ->  n(end)={ns[-1]:.3f} "
      f"(reference {ControllerConfig().n_ref})")
print(f"cycles: {len(records)}, inputs per cycle: {records[0].inputs.size} "
      f"(2 physical + {records[0].inputs.size - 2} synthetic wideners)")
