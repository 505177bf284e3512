"""HTTP + WebSocket gateway: the operator's door into the facility.

Endpoints (JSON in and out; mutating POSTs need the ``X-Auth-Token``
header, reads are open):

    GET  /api/state                       sequencer state snapshot
    GET  /api/shots                       stored shot numbers
    GET  /api/shot/{n}/nodes              declared nodes of one shot
    GET  /api/shot/{n}/signal?path=...    one waveform, timebase expanded
    GET  /api/logbook[?shot=N]            logbook entries
    POST /api/logbook                     add an entry
    POST /api/shot/configure              adopt a shot config
    POST /api/shot/arm                    allocate and stand up a shot
    POST /api/shot/trigger                start the cycle (runs detached)
    POST /api/shot/abort                  stop an armed or running shot
    GET  /api/engineering                 static plant-floor inventory echo
    WS   /api/events                      live envelopes for SEQ_STATE,
                                          SHOT_DONE, CLOCK and TREE_WRITE

The gateway is a thin adapter: every response maps one-to-one onto a
sequencer or store result, and read endpoints never write a byte.

Each WebSocket client first receives a synthetic SEQ_STATE envelope
carrying the current state, then every bridged bus event in delivery
order.  A client that stops reading past the queue cap is closed rather
than allowed to stall the bridge.  Envelope ``t_us`` is the wall-clock
bridge time; CLOCK payloads additionally carry their simulated time.
"""

import asyncio
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import uvicorn
from fastapi import Depends, FastAPI, Header, HTTPException, Query, WebSocket
from fastapi.middleware.cors import CORSMiddleware
from starlette.websockets import WebSocketDisconnect

from pulselab import eventbus, shottree
from pulselab.centralclock import decode_clock_payload
from pulselab.sequencer import InvalidConfig, ShotConfig, WrongState
from pulselab.service import SequencerService
from pulselab.shottree import ShotStore

BRIDGED_EVENTS = (eventbus.EVENT_SEQ_STATE, eventbus.EVENT_SHOT_DONE,
                  eventbus.EVENT_CLOCK, eventbus.EVENT_TREE_WRITE)

WS_QUEUE_CAP = 1024

ENGINEERING_SNAPSHOT = {
    "iocs": 3,
    "displays": 135,
    "io_points": 1500,
    "records": 7000,
}


class GatewayError(Exception):
    pass


class BindFailed(GatewayError):
    pass


class BrokerUnreachable(GatewayError):
    pass


def _wall_us() -> int:
    return time.time_ns() // 1000


def decode_envelope(name: str, payload: bytes) -> dict:
    """Bus bytes to the JSON form clients see."""
    if name == eventbus.EVENT_CLOCK:
        code, abs_us = decode_clock_payload(payload)
        body = {"code": code, "t_us": abs_us}
    else:
        body = payload.decode("utf-8", "replace")
    return {"kind": name, "payload": body, "t_us": _wall_us()}


class _WsClient:
    __slots__ = ("queue", "loop", "dead")

    def __init__(self, queue: asyncio.Queue, loop):
        self.queue = queue
        self.loop = loop
        self.dead = False


class EventBridge:
    """Background thread pumping bus events into per-client asyncio queues."""

    def __init__(self, bus_address):
        self.bus_address = bus_address
        self._conn = None
        self._clients = set()
        self._lock = threading.Lock()
        self._thread = None
        self._stopping = False

    def start(self) -> "EventBridge":
        try:
            self._conn = eventbus.connect(self.bus_address)
            for name in BRIDGED_EVENTS:
                self._conn.subscribe(name)
        except eventbus.BusError as e:
            raise BrokerUnreachable(str(e)) from e
        self._thread = threading.Thread(target=self._pump, name="ws-bridge",
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._stopping = True
        if self._conn is not None:
            self._conn.close()
        if self._thread is not None:
            self._thread.join(timeout=2)

    def add_client(self, queue: asyncio.Queue, loop) -> _WsClient:
        client = _WsClient(queue, loop)
        with self._lock:
            self._clients.add(client)
        return client

    def remove_client(self, client: _WsClient):
        with self._lock:
            self._clients.discard(client)

    def _pump(self):
        while not self._stopping:
            try:
                name, payload = self._conn.next_event(timeout_us=200_000)
            except eventbus.Timeout:
                continue
            except eventbus.Disconnected:
                return
            envelope = decode_envelope(name, payload)
            with self._lock:
                clients = list(self._clients)
            for client in clients:
                client.loop.call_soon_threadsafe(self._offer, client, envelope)

    @staticmethod
    def _offer(client: _WsClient, envelope):
        # runs on the client's event loop
        if client.dead:
            return
        try:
            client.queue.put_nowait(envelope)
        except asyncio.QueueFull:
            client.dead = True
            try:
                client.queue.get_nowait()
            except asyncio.QueueEmpty:
                pass
            try:
                client.queue.put_nowait(None)  # wake the sender to close
            except asyncio.QueueFull:
                pass


def _http_error(exc: Exception) -> HTTPException:
    if isinstance(exc, WrongState):
        return HTTPException(409, detail={"error": "WrongState",
                                          "message": str(exc)})
    if isinstance(exc, InvalidConfig):
        return HTTPException(422, detail={"error": "InvalidConfig",
                                          "message": str(exc)})
    if isinstance(exc, shottree.NoSuchShot):
        return HTTPException(404, detail={"error": "NoSuchShot",
                                          "message": str(exc)})
    if isinstance(exc, shottree.NoSuchNode):
        return HTTPException(404, detail={"error": "NoSuchNode",
                                          "message": str(exc)})
    if isinstance(exc, shottree.NoData):
        return HTTPException(404, detail={"error": "NoData",
                                          "message": str(exc)})
    if isinstance(exc, shottree.UsageMismatch):
        return HTTPException(404, detail={"error": "UsageMismatch",
                                          "message": str(exc)})
    if isinstance(exc, shottree.InvalidPath):
        return HTTPException(422, detail={"error": "InvalidPath",
                                          "message": str(exc)})
    if isinstance(exc, shottree.EmptyBody):
        return HTTPException(422, detail={"error": "EmptyBody",
                                          "message": str(exc)})
    return HTTPException(500, detail={"error": type(exc).__name__,
                                      "message": str(exc)})


def create_app(service: SequencerService, store: ShotStore, *,
               token: str, bus_address, engineering: Optional[dict] = None,
               start_bridge: bool = True) -> FastAPI:
    app = FastAPI(title="pulselab gateway", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    bridge = EventBridge(bus_address)
    if start_bridge:
        bridge.start()
    app.state.bridge = bridge
    engineering_snapshot = dict(engineering or ENGINEERING_SNAPSHOT)

    def require_token(x_auth_token: str = Header(default=None)):
        if x_auth_token != token:
            raise HTTPException(401, detail={"error": "Unauthorized",
                                             "message": "missing or bad "
                                                        "X-Auth-Token"})

    # -- reads ---------------------------------------------------------------

    @app.get("/api/state")
    def get_state():
        st, shot, last = service.state()
        return {"state": st.value, "shot": shot, "last_shot": last,
                "sim_time_us": service.now_us()}

    @app.get("/api/shots")
    def get_shots():
        return {"shots": store.list_shots()}

    @app.get("/api/shot/{shot}/nodes")
    def get_nodes(shot: int):
        try:
            tree = store.open_shot(shot)
        except shottree.ShotTreeError as e:
            raise _http_error(e)
        nodes = [{"path": p, "usage": tree.usage_of(p).value,
                  "has_data": tree.has_data(p)} for p in tree.paths()]
        return {"shot": shot, "state": tree.state.value, "nodes": nodes}

    @app.get("/api/shot/{shot}/signal")
    def get_signal(shot: int, path: str = Query(...)):
        try:
            tree = store.open_shot(shot)
            sig = tree.get_signal(path)
        except shottree.ShotTreeError as e:
            raise _http_error(e)
        return {"shot": shot, "path": shottree.normalize_path(path),
                "units": sig.units,
                "t_us": [int(t) for t in sig.times_us()],
                "v": [float(v) for v in sig.samples]}

    @app.get("/api/logbook")
    def get_logbook(shot: Optional[int] = Query(default=None)):
        entries = store.logbook_query(shot)
        return {"entries": [{"id": e.id, "shot": e.shot_number,
                             "author": e.author, "body": e.body,
                             "time_us": e.time_us} for e in entries]}

    @app.get("/api/engineering")
    def get_engineering():
        return engineering_snapshot

    # -- mutations -------------------------------------------------------------

    @app.post("/api/logbook", dependencies=[Depends(require_token)])
    def post_logbook(body: dict):
        try:
            entry_id = store.logbook_add(int(body.get("shot", 0)),
                                         str(body.get("author", "")),
                                         body.get("body", ""),
                                         time_us=service.now_us())
        except shottree.ShotTreeError as e:
            raise _http_error(e)
        return {"id": entry_id}

    @app.post("/api/shot/configure", dependencies=[Depends(require_token)])
    def post_configure(body: dict):
        try:
            config = ShotConfig.from_json(body)
        except Exception as e:  # noqa: BLE001 - malformed config JSON
            raise HTTPException(422, detail={"error": "InvalidConfig",
                                             "message": str(e)})
        try:
            service.configure(config)
        except (WrongState, InvalidConfig) as e:
            raise _http_error(e)
        st, shot, _ = service.state()
        return {"state": st.value, "shot": shot}

    @app.post("/api/shot/arm", dependencies=[Depends(require_token)])
    def post_arm():
        try:
            shot = service.arm()
        except (WrongState, shottree.ShotTreeError) as e:
            raise _http_error(e)
        return {"state": "ARMED", "shot": shot}

    @app.post("/api/shot/trigger", dependencies=[Depends(require_token)])
    def post_trigger():
        try:
            service.trigger()
        except WrongState as e:
            raise _http_error(e)
        st, shot, _ = service.state()
        return {"ok": True, "shot": shot, "state": st.value}

    @app.post("/api/shot/abort", dependencies=[Depends(require_token)])
    def post_abort():
        try:
            service.abort()
        except WrongState as e:
            raise _http_error(e)
        st, shot, _ = service.state()
        return {"ok": True, "shot": shot, "state": st.value}

    # -- live stream -------------------------------------------------------------

    @app.websocket("/api/events")
    async def ws_events(ws: WebSocket):
        await ws.accept()
        q: asyncio.Queue = asyncio.Queue(maxsize=WS_QUEUE_CAP)
        client = bridge.add_client(q, asyncio.get_running_loop())
        st, shot, _ = service.state()
        snapshot = {"kind": eventbus.EVENT_SEQ_STATE,
                    "payload": f"{st.value}:{shot if shot is not None else '-'}",
                    "t_us": _wall_us()}
        recv_task = get_task = None
        try:
            await ws.send_json(snapshot)
            recv_task = asyncio.create_task(ws.receive())
            get_task = asyncio.create_task(q.get())
            while True:
                done, _ = await asyncio.wait(
                    {recv_task, get_task},
                    return_when=asyncio.FIRST_COMPLETED)
                if recv_task in done:
                    msg = recv_task.result()
                    if msg.get("type") == "websocket.disconnect":
                        break
                    recv_task = asyncio.create_task(ws.receive())
                if get_task in done:
                    envelope = get_task.result()
                    if envelope is None:
                        await ws.close(code=1013, reason="slow consumer")
                        break
                    await ws.send_json(envelope)
                    get_task = asyncio.create_task(q.get())
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            bridge.remove_client(client)
            for task in (recv_task, get_task):
                if task is not None:
                    task.cancel()

    return app


class GatewayServer:
    """uvicorn in a background thread, for live stacks and demos."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 8080):
        self.host = host
        self._config = uvicorn.Config(app, host=host, port=port,
                                      log_level="warning",
                                      ws_ping_interval=10.0,
                                      ws_ping_timeout=20.0)
        self.server = uvicorn.Server(self._config)
        self._thread = None

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self.server.run,
                                        name="gateway-http", daemon=True)
        self._thread.start()
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline:
            if self.server.started:
                return self
            if not self._thread.is_alive():
                break
            time.sleep(0.02)
        raise BindFailed(f"gateway did not come up on {self.host}:"
                         f"{self._config.port}")

    @property
    def port(self) -> int:
        for srv in self.server.servers:
            for sock in srv.sockets:
                return sock.getsockname()[1]
        return self._config.port

    def stop(self):
        self.server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=5)
