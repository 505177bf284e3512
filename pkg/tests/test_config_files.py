import json

from pulselab.centralclock import SimScheduler, load_program_file, save_program
from pulselab.sequencer import (
    Sequencer,
    default_config,
    load_config_file,
    save_config_file,
)
from pulselab.shottree import ShotStore


def test_shot_config_file_roundtrip(tmp_path):
    cfg = default_config(pulse_len_us=200_000)
    cfg.control.z_ref = 0.002
    path = tmp_path / "shot.json"
    save_config_file(cfg, path)
    again = load_config_file(path)
    assert again.pulse_len_us == 200_000
    assert again.control.z_ref == 0.002
    assert [s.name for s in again.diagnostics] == ["MAGNETICS", "INTERF"]
    assert again.clock_program.to_json() == cfg.clock_program.to_json()
    again.validate()


def test_loaded_config_drives_a_shot(tmp_path):
    save_config_file(default_config(pulse_len_us=100_000),
                     tmp_path / "cfg.json")
    seq = Sequencer(ShotStore(tmp_path / "lab"), SimScheduler())
    seq.configure(load_config_file(tmp_path / "cfg.json"))
    shot = seq.arm()
    seq.trigger()
    tree = seq.store.open_shot(shot)
    assert len(tree.get_signal("\\TOP.RTCTRL.Z").samples) == 100
    assert tree.get_parameter("\\TOP.SEQ:PULSE_LEN").value == 0.1


def test_clock_program_file_roundtrip(tmp_path):
    cfg = default_config()
    save_program(cfg.clock_program, tmp_path / "prog.json")
    data = json.loads((tmp_path / "prog.json").read_text())
    assert {e["name"] for e in data} == {"ARM", "T0", "PULSE_END"}
    again = load_program_file(tmp_path / "prog.json")
    assert again.events == cfg.clock_program.events


def test_partial_json_gets_defaults():
    from pulselab.sequencer import ShotConfig
    cfg = ShotConfig.from_json({"pulse_len_us": 250_000})
    cfg.validate()
    assert cfg.pulse_len_us == 250_000
    assert cfg.clock_program.find("PULSE_END").offset_us == 250_000
    assert cfg.cooldown_us == 2_000_000
