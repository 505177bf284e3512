"""pulselab: a desk-scale, fully simulated pulsed-experiment control room.

The pieces mirror a real pulsed-physics facility, shrunk to software:

- :mod:`pulselab.shottree`     per-shot hierarchical data store
- :mod:`pulselab.eventbus`     TCP publish/subscribe broker for synchronization
- :mod:`pulselab.centralclock` microsecond simulated clock and timing events
- :mod:`pulselab.rtcontrol`    1 ms feedback loop over a toy unstable plant
- :mod:`pulselab.daq`          plug-in diagnostics with ring-buffer acquisition
- :mod:`pulselab.sequencer`    the shot-cycle state machine tying it together
- :mod:`pulselab.gateway`      HTTP + WebSocket operator gateway
- :mod:`pulselab.scopecli`     list/export/plot signals from shots (``scope``)

See the demos/ directory for narrative walk-throughs of each capability.
"""

__version__ = "0.1.0"

from pulselab.shottree import (  # noqa: F401
    ModelTree,
    Parameter,
    ShotStore,
    ShotTree,
    Signal,
    UniformTimebase,
    ExplicitTimebase,
)
from pulselab.centralclock import ClockProgram, SimScheduler, TimingEvent  # noqa: F401
from pulselab.sequencer import Sequencer, SeqState, ShotConfig  # noqa: F401
