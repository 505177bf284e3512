"""Tour of the per-shot data store: model trees, signals, parameters,
the logbook, and what FINALIZED means."""

import tempfile

import numpy as np

from pulselab.shottree import (
    Finalized,
    ModelTree,
    Parameter,
    ShotStore,
    Signal,
    UniformTimebase,
    Usage,
)

root = tempfile.mkdtemp(prefix="pulselab-demo-")
store = ShotStore(root)
print(f"store rooted at {root}")

# The model tree is the skeleton every shot copies.
model = (ModelTree()
         .declare("\\TOP", Usage.STRUCTURE)
         .declare("\\TOP.MAGNETICS", Usage.STRUCTURE)
         .declare("\\TOP.MAGNETICS:BDOT1", Usage.SIGNAL)
         .declare("\\TOP.MAGNETICS:BDOT2", Usage.SIGNAL)
         .declare("\\TOP.SEQ", Usage.STRUCTURE)
         .declare("\\TOP.SEQ:PULSE_LEN", Usage.PARAMETER))

tree = store.create_shot(model, shot_number=1, created_at_us=0)
print("created shot 1, nodes:", tree.paths())

# Waveforms are float64 samples on an integer-microsecond timebase.
wave = Signal(UniformTimebase(t0_us=0, dt_us=1000, n=500),
              np.sin(np.linspace(0, 6.28, 500)), units="T/s")
tree.put_signal("\\top.magnetics:bdot1", wave)   # paths are case-insensitive
tree.put_parameter("\\TOP.SEQ:PULSE_LEN", Parameter(0.5, "s"))

back = tree.get_signal("\\TOP.MAGNETICS:BDOT1")
print("round-trip bit-exact:",
      back.samples.tobytes() == wave.samples.tobytes())

print('walk("**")           ->', tree.walk("**"))
print('walk("MAGNETICS:*")  ->', tree.walk("MAGNETICS:*"))

# Finalize flushes the manifest and freezes the shot forever.
tree.finalize(at_us=500_000)
try:
    tree.put_parameter("\\TOP.SEQ:PULSE_LEN", Parameter(1.0, "s"))
except Finalized as e:
    print("write after finalize ->", e)

again = store.open_shot(1)
print("reopened from disk, equal:",
      again.get_signal("\\TOP.MAGNETICS:BDOT1") == wave)

# The logbook is append-only, one id per entry.
store.logbook_add(1, "operator", "clean 500 ms flat-top, good density")
store.logbook_add(1, "physicist", "bdot1 shows the expected ringing")
for entry in store.logbook_query(1):
    print(f"logbook #{entry.id} [{entry.author}] {entry.body}")
