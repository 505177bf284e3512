"""The operator's view: a live stack (broker + sequencer + HTTP gateway),
driven through the web API while the event stream arrives over a
WebSocket.  This is exactly what the browser console talks to."""

import json
import tempfile
import threading

import httpx
from websockets.sync.client import connect as ws_connect

from pulselab.stack import build_stack

stack = build_stack(tempfile.mkdtemp(prefix="pulselab-demo-"), http_port=0,
                    token="demo-token")
base = f"http://127.0.0.1:{stack.http.port}"
auth = {"X-Auth-Token": "demo-token"}
print(f"gateway live at {base}")

print("engineering inventory:", httpx.get(f"{base}/api/engineering").json())

envelopes = []
stream_done = threading.Event()


def stream():
    with ws_connect(f"ws://127.0.0.1:{stack.http.port}/api/events") as ws:
        while True:
            env = json.loads(ws.recv(timeout=15))
            envelopes.append(env)
            if env["kind"] == "SEQ_STATE":
                print(f"  ws: {env['payload']}")
                if env["payload"] == "IDLE:-" and len(envelopes) > 1:
                    stream_done.set()
                    return


listener = threading.Thread(target=stream, daemon=True)
listener.start()

print("configure / arm / trigger over HTTP:")
print(" ", httpx.post(f"{base}/api/shot/configure", json={},
                      headers=auth).json())
print(" ", httpx.post(f"{base}/api/shot/arm", headers=auth).json())
print(" ", httpx.post(f"{base}/api/shot/trigger", headers=auth).json())

stream_done.wait(timeout=30)
kinds = sorted({e["kind"] for e in envelopes})
print(f"stream carried {len(envelopes)} envelopes of kinds {kinds}")

sig = httpx.get(f"{base}/api/shot/1/signal",
                params={"path": "\\TOP.RTCTRL.COIL:CMD"}).json()
print(f"COIL:CMD over HTTP: {len(sig['v'])} points, "
      f"first {sig['v'][0]:.4f}, units {sig['units']!r}")

httpx.post(f"{base}/api/logbook",
           json={"shot": 1, "author": "demo", "body": "driven over the api"},
           headers=auth)
print("logbook:", httpx.get(f"{base}/api/logbook",
                            params={"shot": 1}).json())

stack.stop()
print("stack stopped")
