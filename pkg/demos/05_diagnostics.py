"""Plug-in diagnostics: ring-buffer sampling on the simulated clock, a
live feedback readout mid-pulse, and the post-pulse deposit."""

import tempfile

from pulselab.centralclock import SimScheduler
from pulselab.daq import (
    DaqSystem,
    DiagnosticSpec,
    Kind,
    interferometer_spec,
    magnetics_spec,
)
from pulselab.rtcontrol import PlantState
from pulselab.sequencer import default_model
from pulselab.shottree import ShotStore

daq = DaqSystem()
daq.register(magnetics_spec(sample_dt_us=1000))      # PASSIVE, 4 channels
daq.register(interferometer_spec(sample_dt_us=1000))  # FEEDBACK, 1 channel

# A third-party instrument is just a pure function of (t, plant, seed).
bolometer = DiagnosticSpec(
    name="BOLOM", channels=["TOTPWR"], sample_dt_us=500, kind=Kind.PASSIVE,
    generator=lambda t, plant, seed: [abs(plant.z) * 1e3 + plant.n])
daq.register(bolometer)
print("registered:", daq.names())

pulse_len = 100_000
daq.arm_all(pulse_len)

# Fake a pulse: the plant provider is whatever the control loop exposes.
plant = PlantState(z=0.0005, n=0.0)
scheduler = SimScheduler()
daq.schedule_sampling(scheduler, t0_us=0, pulse_len_us=pulse_len,
                      plant_provider=lambda: plant)

scheduler.advance_to(40_000)
plant.n = 0.31                      # density rises mid-pulse
t, v = daq.latest("INTERF", "DENSITY")
print(f"feedback readout at {scheduler.now_us} us: density {v} "
      f"(sampled at {t} us)")
scheduler.advance_to(pulse_len)
t, v = daq.latest("INTERF", "DENSITY")
print(f"feedback readout at pulse end: density {v} (sampled at {t} us)")

print("samples per channel:", daq.sample_counts())

store = ShotStore(tempfile.mkdtemp(prefix="pulselab-demo-"))
tree = store.create_shot(default_model([magnetics_spec(),
                                        interferometer_spec(), bolometer]), 1)
report = daq.deposit_all(tree)
print("deposited:", report.deposited)
sig = tree.get_signal("\\TOP.BOLOM:TOTPWR")
print(f"BOLOM:TOTPWR -> {len(sig.samples)} samples at dt="
      f"{sig.timebase.dt_us} us")
