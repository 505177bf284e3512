import math

import pytest

from pulselab.centralclock import SimScheduler, default_program
from pulselab.rtcontrol import NonFiniteError, PlantState
from pulselab.sequencer import (
    COMMAND_SOURCES,
    LEGAL_EDGES,
    InvalidConfig,
    Outcome,
    SeqState,
    Sequencer,
    ShotConfig,
    WrongState,
    default_config,
    default_model,
)
from pulselab.shottree import NoData, ShotStore


@pytest.fixture
def seq(store, scheduler, sink):
    return Sequencer(store, scheduler, sink=sink)


def full_shot(seq, config=None):
    seq.configure(config or default_config())
    shot = seq.arm()
    seq.trigger()
    return shot


class TestConfigure:
    def test_valid_default(self, seq):
        seq.configure(default_config())
        assert seq.state() == (SeqState.CONFIGURED, None)

    def test_reconfigure_allowed(self, seq):
        seq.configure(default_config())
        seq.configure(default_config(pulse_len_us=100_000))
        assert seq.config.pulse_len_us == 100_000

    def test_missing_t0_rejected(self, seq):
        cfg = default_config()
        cfg.clock_program.events = [e for e in cfg.clock_program.events
                                    if e.name != "T0"]
        with pytest.raises(InvalidConfig):
            seq.configure(cfg)

    def test_pulse_end_mismatch_rejected(self, seq):
        cfg = default_config(pulse_len_us=250_000)
        cfg.clock_program = default_program(500_000)
        with pytest.raises(InvalidConfig):
            seq.configure(cfg)

    def test_short_pulse_rejected(self, seq):
        with pytest.raises(InvalidConfig):
            seq.configure(default_config(pulse_len_us=999))

    def test_configure_during_pulse_rejected(self, seq, scheduler):
        seq.configure(default_config())
        seq.arm()
        caught = []

        def probe():
            try:
                seq.configure(default_config())
            except WrongState as e:
                caught.append(e)

        scheduler.schedule(1_250_000, probe)  # mid-pulse (T0 = 1_000_000)
        seq.trigger()
        assert len(caught) == 1


class TestArm:
    def test_arm_creates_tree(self, seq, store):
        seq.configure(default_config())
        shot = seq.arm()
        assert shot == 1
        assert seq.state() == (SeqState.ARMED, 1)
        assert store.list_shots() == [1]
        tree = seq.tree
        assert tree.get_parameter("\\TOP.SEQ:PULSE_LEN").value == 0.5
        assert tree.get_parameter("\\TOP.SEQ:PULSE_LEN").units == "s"
        assert tree.get_parameter("\\TOP.CLOCK:NEVENTS").value == 3

    def test_arm_twice_rejected(self, seq):
        seq.configure(default_config())
        seq.arm()
        with pytest.raises(WrongState):
            seq.arm()

    def test_first_shot_is_one(self, seq):
        assert full_shot(seq) == 1

    def test_numbers_increase_across_aborts(self, seq):
        seq.configure(default_config())
        seq.arm()
        seq.abort()
        assert seq.last_record.outcome is Outcome.ABORTED
        assert full_shot(seq) == 2
        seq.configure(default_config())
        assert seq.arm() == 3


class TestTrigger:
    def test_full_trace(self, seq):
        full_shot(seq)
        trace = seq.last_record.trace
        assert [s.value for s, _ in trace] == [
            "IDLE", "CONFIGURED", "ARMED", "PULSING", "ACQUIRING",
            "ARCHIVING", "COOLDOWN", "IDLE"]
        assert seq.last_record.outcome is Outcome.COMPLETED

    def test_pulsing_duration_exact(self, seq):
        full_shot(seq)
        times = {s: t for s, t in seq.last_record.trace}
        assert times[SeqState.ACQUIRING] - times[SeqState.PULSING] == 500_000

    def test_trigger_from_idle_rejected(self, seq):
        with pytest.raises(WrongState):
            seq.trigger()

    def test_state_after_completion(self, seq):
        shot = full_shot(seq)
        assert seq.state() == (SeqState.IDLE, None)
        assert seq.last_shot == shot

    def test_control_waveforms_cover_pulse(self, seq, store):
        shot = full_shot(seq)
        tree = store.open_shot(shot)
        for path in ("\\TOP.RTCTRL.Z", "\\TOP.RTCTRL.COIL:CMD"):
            sig = tree.get_signal(path)
            assert len(sig.samples) == 500
            times = sig.times_us()
            assert times[0] == 0 and times[-1] == 499_000
        assert tree.get_parameter("\\TOP.SEQ:OUTCOME").value == "COMPLETED"
        assert tree.state.value == "FINALIZED"

    def test_seq_state_payloads(self, seq, sink):
        full_shot(seq)
        payloads = [p.decode() for p in sink.named("SEQ_STATE")]
        assert payloads == ["CONFIGURED:-", "ARMED:1", "PULSING:1",
                            "ACQUIRING:1", "ARCHIVING:1", "COOLDOWN:1",
                            "IDLE:-"]

    def test_shot_done_posted_once(self, seq, sink):
        full_shot(seq)
        assert sink.named("SHOT_DONE") == [b"1"]

    def test_clock_broadcasts(self, seq, sink):
        full_shot(seq)
        assert len(sink.named("CLOCK")) == 3  # ARM, T0, PULSE_END

    def test_no_write_after_archival(self, seq, store, scheduler):
        writes = []
        store.add_write_hook(
            lambda tree, path: writes.append((scheduler.now_us, path)))
        full_shot(seq)
        archive_time = dict(
            (s, t) for s, t in seq.last_record.trace)[SeqState.COOLDOWN]
        late = [w for w in writes if w[0] > archive_time]
        assert writes and late == []

    def test_interf_density_signal(self, seq, store):
        shot = full_shot(seq)
        sig = store.open_shot(shot).get_signal("\\TOP.INTERF:DENSITY")
        assert len(sig.samples) == 500
        # density rises toward the 0.5 reference under gas feedback
        assert sig.samples[-1] > 0.2


class TestAbort:
    def test_abort_while_armed(self, seq, store):
        seq.configure(default_config())
        shot = seq.arm()
        seq.abort()
        tree = store.open_shot(shot)
        assert tree.get_parameter("\\TOP.SEQ:OUTCOME").value == "ABORTED"
        with pytest.raises(NoData):
            tree.get_signal("\\TOP.RTCTRL.Z")
        states = [s.value for s, _ in seq.last_record.trace]
        assert states == ["IDLE", "CONFIGURED", "ARMED", "COOLDOWN", "IDLE"]

    def test_abort_mid_pulse_250ms(self, seq, store):
        seq.configure(default_config())
        shot = seq.arm()
        seq.schedule_abort_at(250_000)
        seq.trigger()
        tree = store.open_shot(shot)
        for path in ("\\TOP.RTCTRL.Z", "\\TOP.RTCTRL.COIL:CMD"):
            assert len(tree.get_signal(path).samples) == 250
        assert len(tree.get_signal("\\TOP.INTERF:DENSITY").samples) == 250
        assert tree.get_parameter("\\TOP.SEQ:OUTCOME").value == "ABORTED"
        assert seq.last_record.outcome is Outcome.ABORTED
        states = [s.value for s, _ in seq.last_record.trace]
        assert states == ["IDLE", "CONFIGURED", "ARMED", "PULSING",
                          "COOLDOWN", "IDLE"]

    def test_abort_from_idle_rejected(self, seq):
        with pytest.raises(WrongState):
            seq.abort()

    def test_pulsing_stops_at_abort_time(self, seq):
        seq.configure(default_config())
        seq.arm()
        seq.schedule_abort_at(250_000)
        seq.trigger()
        times = {s: t for s, t in seq.last_record.trace}
        assert times[SeqState.COOLDOWN] - times[SeqState.PULSING] == 250_000


class TestCooldownAndStaging:
    def test_configure_staged_during_cooldown(self, seq, scheduler):
        seq.configure(default_config())
        seq.arm()
        next_cfg = default_config(pulse_len_us=100_000)
        staged = []

        def probe():
            seq.configure(next_cfg)  # lands in COOLDOWN, must not raise
            staged.append(seq.state()[0])

        # cooldown spans [1_500_000, 3_500_000] for the default shot
        scheduler.schedule(2_000_000, probe)
        seq.trigger()
        assert staged == [SeqState.COOLDOWN]
        assert seq.state() == (SeqState.CONFIGURED, None)
        assert seq.config.pulse_len_us == 100_000

    def test_arm_not_allowed_during_cooldown(self, seq, scheduler):
        seq.configure(default_config())
        seq.arm()
        caught = []

        def probe():
            try:
                seq.arm()
            except WrongState as e:
                caught.append(str(e))

        scheduler.schedule(2_000_000, probe)
        seq.trigger()
        assert len(caught) == 1


class TestFault:
    def test_nonfinite_faults(self, seq):
        cfg = default_config()
        cfg.initial = PlantState(z=float("nan"))
        seq.configure(cfg)
        seq.arm()
        with pytest.raises(NonFiniteError):
            seq.trigger()
        assert seq.state()[0] is SeqState.FAULT
        assert seq.last_record.outcome is Outcome.FAULTED

    def test_reset_recovers(self, seq):
        cfg = default_config()
        cfg.initial = PlantState(z=float("inf"))
        seq.configure(cfg)
        seq.arm()
        with pytest.raises(NonFiniteError):
            seq.trigger()
        seq.reset()
        assert seq.state() == (SeqState.IDLE, None)
        # the machine is usable again
        seq2_shot = full_shot(seq)
        assert seq.last_record.outcome is Outcome.COMPLETED
        assert seq2_shot == 2

    def test_reset_only_from_fault(self, seq):
        with pytest.raises(WrongState):
            seq.reset()


class TestEdgeTables:
    def test_edges_cover_all_states(self):
        assert set(LEGAL_EDGES) == set(SeqState)

    def test_command_sources_match_edges(self):
        assert set(COMMAND_SOURCES) == {"configure", "arm", "trigger",
                                        "abort", "reset"}
        assert COMMAND_SOURCES["trigger"] == ["ARMED"]
        assert COMMAND_SOURCES["abort"] == ["ARMED", "PULSING"]


class TestDepositTimeout:
    def test_laggard_recorded_and_shot_archives(self, seq, store):
        cfg = default_config()
        cfg.diagnostics[0].deposit_delay_us = 10_000_000  # MAGNETICS stalls
        seq.configure(cfg)
        shot = seq.arm()
        seq.trigger()
        tree = store.open_shot(shot)
        assert tree.state.value == "FINALIZED"
        assert tree.get_parameter("\\TOP.SEQ:DAQ_TIMEOUTS").value == "MAGNETICS"
        assert not tree.has_data("\\TOP.MAGNETICS:BDOT1")
        assert tree.has_data("\\TOP.INTERF:DENSITY")
        # acquiring stretched by the full deposit timeout
        times = {s: t for s, t in seq.last_record.trace}
        assert times[SeqState.ARCHIVING] - times[SeqState.ACQUIRING] \
            == 1_000_000
