import hashlib
import time
from pathlib import Path

import httpx
import pytest
from starlette.testclient import TestClient

from pulselab.centralclock import SimScheduler
from pulselab.gateway import GatewayServer, create_app
from pulselab.sequencer import Sequencer, default_config
from pulselab.stack import build_stack

TOKEN = "test-token"
AUTH = {"X-Auth-Token": TOKEN}


@pytest.fixture
def stack(tmp_path):
    st = build_stack(tmp_path / "lab")
    yield st
    st.stop()


@pytest.fixture
def client(stack):
    app = create_app(stack.service, stack.store, token=TOKEN,
                     bus_address=stack.bus_address)
    with TestClient(app) as c:
        yield c
    app.state.bridge.stop()


def wait_for_idle_shot(client, shot, timeout=15.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        body = client.get("/api/state").json()
        if body["state"] == "IDLE" and body["last_shot"] == shot:
            return body
        time.sleep(0.01)
    raise AssertionError(f"shot {shot} did not complete in time")


def run_http_shot(client, shot=1):
    assert client.post("/api/shot/configure", json={},
                       headers=AUTH).status_code == 200
    r = client.post("/api/shot/arm", headers=AUTH)
    assert r.status_code == 200 and r.json()["shot"] == shot
    assert client.post("/api/shot/trigger", headers=AUTH).status_code == 200
    return wait_for_idle_shot(client, shot)


class TestBasics:
    def test_fresh_state(self, client):
        body = client.get("/api/state").json()
        assert body == {"state": "IDLE", "shot": None, "last_shot": None,
                        "sim_time_us": 0}

    def test_trigger_needs_token(self, client):
        assert client.post("/api/shot/trigger").status_code == 401
        assert client.post("/api/shot/trigger",
                           headers={"X-Auth-Token": "wrong"}).status_code == 401

    def test_trigger_in_idle_conflicts(self, client):
        r = client.post("/api/shot/trigger", headers=AUTH)
        assert r.status_code == 409
        assert r.json()["detail"]["error"] == "WrongState"

    def test_bad_config_rejected(self, client):
        r = client.post("/api/shot/configure", json={"pulse_len_us": 10},
                        headers=AUTH)
        assert r.status_code == 422
        assert r.json()["detail"]["error"] == "InvalidConfig"

    def test_engineering_snapshot(self, client):
        assert client.get("/api/engineering").json() == {
            "iocs": 3, "displays": 135, "io_points": 1500, "records": 7000}

    def test_unknown_shot_404(self, client):
        assert client.get("/api/shot/99/nodes").status_code == 404
        r = client.get("/api/shot/99/signal", params={"path": "\\TOP.A"})
        assert r.status_code == 404


class TestShotOverHttp:
    def test_full_cycle_and_reads(self, client, stack):
        run_http_shot(client)
        shots = client.get("/api/shots").json()["shots"]
        assert shots == [1]

        nodes = client.get("/api/shot/1/nodes").json()
        assert nodes["state"] == "FINALIZED"
        paths = {n["path"] for n in nodes["nodes"]}
        assert "\\TOP.RTCTRL.COIL:CMD" in paths

        sig = client.get("/api/shot/1/signal",
                         params={"path": "\\TOP.RTCTRL.COIL:CMD"}).json()
        assert len(sig["v"]) == 500 and len(sig["t_us"]) == 500
        assert sig["t_us"][0] == 0 and sig["t_us"][-1] == 499_000

        # values identical to the store's own floats
        stored = stack.store.open_shot(1).get_signal("\\TOP.RTCTRL.COIL:CMD")
        assert sig["v"] == [float(v) for v in stored.samples]

    def test_nodata_404(self, client, stack):
        # an aborted-from-armed shot has declared but empty signal nodes
        assert client.post("/api/shot/configure", json={},
                           headers=AUTH).status_code == 200
        assert client.post("/api/shot/arm", headers=AUTH).status_code == 200
        assert client.post("/api/shot/abort", headers=AUTH).status_code == 200
        wait_for_idle_shot(client, 1)
        r = client.get("/api/shot/1/signal",
                       params={"path": "\\TOP.RTCTRL.Z"})
        assert r.status_code == 404
        assert r.json()["detail"]["error"] == "NoData"
        # asking a structure node for a signal is a miss, not a crash
        r = client.get("/api/shot/1/signal", params={"path": "\\TOP.SEQ"})
        assert r.status_code == 404

    def test_arm_then_abort_over_http(self, client):
        assert client.post("/api/shot/configure", json={},
                           headers=AUTH).status_code == 200
        assert client.post("/api/shot/arm", headers=AUTH).status_code == 200
        r = client.post("/api/shot/abort", headers=AUTH)
        assert r.status_code == 200
        body = wait_for_idle_shot(client, 1)
        assert body["state"] == "IDLE"

    def test_http_equals_direct_drive(self, client, stack, tmp_path):
        """The gateway is a thin adapter: same inputs, same trace."""
        run_http_shot(client)
        via_http = stack.sequencer.last_record

        direct = Sequencer(ShotStoreFactory(tmp_path), SimScheduler())
        direct.configure(default_config())
        direct.arm()
        direct.trigger()
        assert [(s, t) for s, t in direct.last_record.trace] == \
            [(s, t) for s, t in via_http.trace]
        assert direct.last_record.outcome == via_http.outcome


def ShotStoreFactory(tmp_path):
    from pulselab.shottree import ShotStore
    return ShotStore(tmp_path / "direct")


class TestLogbook:
    def test_roundtrip(self, client):
        r = client.post("/api/logbook",
                        json={"shot": 1, "author": "op", "body": "good shot"},
                        headers=AUTH)
        assert r.status_code == 200
        entry_id = r.json()["id"]
        entries = client.get("/api/logbook", params={"shot": 1}).json()["entries"]
        assert [e["id"] for e in entries] == [entry_id]
        assert entries[0]["body"] == "good shot"

    def test_post_needs_token(self, client):
        r = client.post("/api/logbook", json={"shot": 1, "body": "x"})
        assert r.status_code == 401

    def test_empty_body_422(self, client):
        r = client.post("/api/logbook", json={"shot": 1, "body": "  "},
                        headers=AUTH)
        assert r.status_code == 422


class TestWebSocket:
    def test_full_shot_envelope_stream(self, client):
        with client.websocket_connect("/api/events") as ws:
            first = ws.receive_json()
            assert first["kind"] == "SEQ_STATE"
            assert first["payload"] == "IDLE:-"
            run_http_shot(client)
            states, kinds = [first["payload"]], {first["kind"]}
            saw_shot_done_after = None
            while True:
                env = ws.receive_json()
                kinds.add(env["kind"])
                if env["kind"] == "SEQ_STATE":
                    states.append(env["payload"])
                    if env["payload"] == "IDLE:-" and len(states) > 1:
                        break
                if env["kind"] == "SHOT_DONE":
                    saw_shot_done_after = states[-1]
        assert states == ["IDLE:-", "CONFIGURED:-", "ARMED:1", "PULSING:1",
                          "ACQUIRING:1", "ARCHIVING:1", "COOLDOWN:1", "IDLE:-"]
        assert len(states) == 8
        assert saw_shot_done_after == "ARCHIVING:1"
        assert kinds == {"SEQ_STATE", "SHOT_DONE", "CLOCK", "TREE_WRITE"}

    def test_two_clients_identical(self, client):
        with client.websocket_connect("/api/events") as ws1, \
                client.websocket_connect("/api/events") as ws2:
            ws1.receive_json()
            ws2.receive_json()
            run_http_shot(client)

            def collect(ws):
                out = []
                while True:
                    env = ws.receive_json()
                    out.append((env["kind"], str(env["payload"])))
                    if env == {"kind": env["kind"], "payload": env["payload"],
                               "t_us": env["t_us"]} and \
                            env["kind"] == "SEQ_STATE" and \
                            env["payload"] == "IDLE:-":
                        return out

            assert collect(ws1) == collect(ws2)

    def test_clock_payload_decoded(self, client):
        with client.websocket_connect("/api/events") as ws:
            ws.receive_json()
            run_http_shot(client)
            while True:
                env = ws.receive_json()
                if env["kind"] == "CLOCK":
                    assert set(env["payload"]) == {"code", "t_us"}
                    assert 1 <= env["payload"]["code"] <= 15
                    break


class TestReadOnlyReads:
    def test_reads_do_not_mutate_store(self, client, stack):
        run_http_shot(client)

        def digest():
            out = {}
            for p in sorted(Path(stack.store.root).rglob("*")):
                if p.is_file():
                    out[str(p)] = hashlib.sha256(p.read_bytes()).hexdigest()
            return out

        before = digest()
        client.get("/api/state")
        client.get("/api/shots")
        client.get("/api/shot/1/nodes")
        client.get("/api/shot/1/signal", params={"path": "\\TOP.RTCTRL.Z"})
        client.get("/api/logbook")
        client.get("/api/engineering")
        assert digest() == before


class TestLiveServer:
    def test_over_real_tcp(self, tmp_path):
        stack = build_stack(tmp_path / "lab", http_port=0, token=TOKEN)
        try:
            base = f"http://127.0.0.1:{stack.http.port}"
            assert httpx.get(f"{base}/api/state").json()["state"] == "IDLE"
            assert httpx.post(f"{base}/api/shot/configure", json={},
                              headers=AUTH).status_code == 200
            assert httpx.post(f"{base}/api/shot/arm",
                              headers=AUTH).json()["shot"] == 1
            assert httpx.post(f"{base}/api/shot/trigger",
                              headers=AUTH).status_code == 200
            deadline = time.monotonic() + 15
            while time.monotonic() < deadline:
                body = httpx.get(f"{base}/api/state").json()
                if body["state"] == "IDLE" and body["last_shot"] == 1:
                    break
                time.sleep(0.02)
            else:
                raise AssertionError("shot did not finish over live HTTP")
            sig = httpx.get(f"{base}/api/shot/1/signal",
                            params={"path": "\\TOP.RTCTRL.Z"}).json()
            assert len(sig["v"]) == 500
        finally:
            stack.stop()

    def test_live_websocket(self, tmp_path):
        from websockets.sync.client import connect as ws_connect
        import json as jsonlib

        stack = build_stack(tmp_path / "lab", http_port=0, token=TOKEN)
        try:
            base = f"http://127.0.0.1:{stack.http.port}"
            with ws_connect(f"ws://127.0.0.1:{stack.http.port}/api/events",
                            open_timeout=10) as ws:
                snapshot = jsonlib.loads(ws.recv(timeout=10))
                assert snapshot["payload"] == "IDLE:-"
                httpx.post(f"{base}/api/shot/configure", json={}, headers=AUTH)
                env = jsonlib.loads(ws.recv(timeout=10))
                assert env == {"kind": "SEQ_STATE", "payload": "CONFIGURED:-",
                               "t_us": env["t_us"]}
        finally:
            stack.stop()
