"""Thread wrapper putting a Sequencer behind a thread-safe command API.

One worker thread owns the sequencer and the simulation driver; callers
(HTTP handlers, scripts) submit commands that run there in order.  A
trigger occupies the worker for the whole shot cycle, so it is validated
synchronously and then runs detached; abort reaches a running pulse
through the sequencer's cross-thread abort flag.
"""

import queue
import threading
from concurrent.futures import Future
from typing import Optional

from pulselab.sequencer import SeqState, Sequencer, ShotConfig, WrongState


class ServiceStopped(RuntimeError):
    pass


class SequencerService:
    def __init__(self, sequencer: Sequencer):
        self.sequencer = sequencer
        self._inbox = queue.Queue()
        self._worker = None
        self._stopping = False

    def start(self) -> "SequencerService":
        self._worker = threading.Thread(target=self._run, name="seq-worker",
                                        daemon=True)
        self._worker.start()
        return self

    def stop(self):
        self._stopping = True
        self.sequencer.halt()
        self._inbox.put(None)
        if self._worker is not None:
            self._worker.join(timeout=5)

    def _run(self):
        while True:
            item = self._inbox.get()
            if item is None:
                return
            fn, future = item
            if future.set_running_or_notify_cancel():
                try:
                    future.set_result(fn())
                except BaseException as e:  # noqa: BLE001 - handed to caller
                    future.set_exception(e)

    def _submit(self, fn) -> Future:
        if self._stopping:
            raise ServiceStopped("service is stopping")
        future = Future()
        self._inbox.put((fn, future))
        return future

    def _call(self, fn, timeout: Optional[float] = 30.0):
        return self._submit(fn).result(timeout=timeout)

    # -- operator API ----------------------------------------------------------

    def state(self):
        """(state, current shot, last completed shot) snapshot."""
        st, shot = self.sequencer.state()
        return st, shot, self.sequencer.last_shot

    def now_us(self) -> int:
        return self.sequencer.scheduler.now_us

    def configure(self, config: ShotConfig):
        return self._call(lambda: self.sequencer.configure(config))

    def arm(self) -> int:
        return self._call(self.sequencer.arm)

    def trigger(self):
        """Validate, then run the shot cycle on the worker without waiting."""
        st, _ = self.sequencer.state()
        if st is not SeqState.ARMED:
            raise WrongState(f"command needs state ARMED, but sequencer is "
                             f"{st.value}")
        self._submit(self.sequencer.trigger)

    def trigger_and_wait(self, timeout: Optional[float] = 60.0):
        """Run a full shot cycle and block until it finishes."""
        return self._call(self.sequencer.trigger, timeout=timeout)

    def abort(self):
        """Abort an armed or running shot from any thread."""
        st, _ = self.sequencer.state()
        if st is SeqState.PULSING:
            # the worker is inside trigger; flag it directly
            self.sequencer.abort()
        elif st is SeqState.ARMED:
            self._call(self.sequencer.abort)
        else:
            raise WrongState(f"command needs state ARMED/PULSING, but "
                             f"sequencer is {st.value}")

    def reset(self):
        return self._call(self.sequencer.reset)
