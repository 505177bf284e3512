"""Two complete shot cycles end to end: one clean, one aborted mid-pulse,
then a scope export of the results."""

import tempfile
from pathlib import Path

from pulselab import scopecli
from pulselab.centralclock import SimScheduler
from pulselab.sequencer import Sequencer, default_config
from pulselab.shottree import ShotStore

root = tempfile.mkdtemp(prefix="pulselab-demo-")
store = ShotStore(root)
seq = Sequencer(store, SimScheduler())

print("--- shot 1: full 0.5 s pulse ---")
seq.configure(default_config())
shot = seq.arm()
seq.trigger()
for state, t_us in seq.last_record.trace:
    print(f"  {t_us:>9d} us  {state.value}")
tree = store.open_shot(shot)
print("outcome:", tree.get_parameter("\\TOP.SEQ:OUTCOME").value,
      "| coil cycles:", len(tree.get_signal("\\TOP.RTCTRL.COIL:CMD").samples))

print("--- shot 2: operator aborts at 250 ms ---")
seq.configure(default_config())
shot = seq.arm()
seq.schedule_abort_at(250_000)
seq.trigger()
tree = store.open_shot(shot)
print("outcome:", tree.get_parameter("\\TOP.SEQ:OUTCOME").value,
      "| coil cycles:", len(tree.get_signal("\\TOP.RTCTRL.COIL:CMD").samples))

print("--- scope export of both shots ---")
out = Path(root) / "exports"
for n in (1, 2):
    files = scopecli.export_shot(
        store, n,
        ["\\TOP.RTCTRL.Z", "\\TOP.RTCTRL.N", "\\TOP.RTCTRL.COIL:CMD",
         "\\TOP.RTCTRL.GAS:CMD", "\\TOP.INTERF:DENSITY",
         "\\TOP.MAGNETICS:BDOT1"],
        "svg", out)
    print(f"shot {n}:", ", ".join(f.name for f in files))
print(f"browse {out} for the waveform grids")
