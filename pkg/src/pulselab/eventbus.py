"""Broker-based publish/subscribe messaging over TCP.

One broker process fans named events out to whoever subscribed.  Wire
format, framed by a big-endian 32-bit body length:

    u8  msg_type        HELLO=1 SUBSCRIBE=2 UNSUBSCRIBE=3 POST=4
                        EVENT=5 PING=6 PONG=7 ERROR=8
    u16 name length     big-endian
    ... name            UTF-8, uppercase [A-Z0-9_], 0-32 chars
    u32 payload length  big-endian
    ... payload         opaque bytes, at most 65536

Event names are case-insensitive on the API and normalized to uppercase.
Delivery is at-most-once FIFO per connection with no persistence: a
subscriber sees every post made to a name while it is connected, in the
poster's order, and nothing from before it subscribed.  Slow consumers
whose outbound queue overflows are disconnected rather than allowed to
stall the broker.
"""

import queue
import re
import socket
import struct
import threading
from collections import deque
from dataclasses import dataclass
from enum import IntEnum

MAX_PAYLOAD = 65536
MAX_NAME = 32
DEFAULT_PORT = 5610
DEFAULT_QUEUE_CAP = 1024

# maximum legal body: type + name header + name + payload header + payload
_MAX_BODY = 1 + 2 + MAX_NAME + 4 + MAX_PAYLOAD

# reserved names used across the facility
EVENT_SEQ_STATE = "SEQ_STATE"
EVENT_SHOT_DONE = "SHOT_DONE"
EVENT_CLOCK = "CLOCK"
EVENT_TREE_WRITE = "TREE_WRITE"


class MsgType(IntEnum):
    HELLO = 1
    SUBSCRIBE = 2
    UNSUBSCRIBE = 3
    POST = 4
    EVENT = 5
    PING = 6
    PONG = 7
    ERROR = 8


class BusError(Exception):
    pass


class BindFailed(BusError):
    pass


class ConnectFailed(BusError):
    pass


class ProtocolError(BusError):
    pass


class BadName(BusError):
    pass


class PayloadTooLarge(BusError):
    pass


class Disconnected(BusError):
    pass


class Timeout(BusError):
    pass


_NAME_RE = re.compile(r"^[A-Z0-9_]{1,32}$")


def normalize_name(name: str) -> str:
    """Uppercase and validate an event name."""
    if not isinstance(name, str):
        raise BadName(f"event name must be str, got {type(name)}")
    up = name.upper()
    if not _NAME_RE.match(up):
        raise BadName(f"bad event name {name!r} "
                      f"(need 1..{MAX_NAME} chars of [A-Z0-9_])")
    return up


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    name: str = ""
    payload: bytes = b""


@dataclass
class BrokerStats:
    connections: int = 0
    subscriptions: int = 0
    posts: int = 0
    deliveries: int = 0


def encode_frame(frame: Frame) -> bytes:
    """Serialize a frame to wire bytes, length prefix included."""
    name_b = frame.name.encode("utf-8")
    if len(name_b) > MAX_NAME:
        raise BadName(f"name too long: {frame.name!r}")
    if len(frame.payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(frame.payload)} bytes")
    body = (
        struct.pack(">BH", int(frame.msg_type), len(name_b))
        + name_b
        + struct.pack(">I", len(frame.payload))
        + frame.payload
    )
    return struct.pack(">I", len(body)) + body


def decode_frame(data: bytes) -> Frame:
    """Parse one full wire frame (prefix + body)."""
    if len(data) < 4:
        raise ProtocolError("short frame")
    (body_len,) = struct.unpack_from(">I", data, 0)
    if body_len != len(data) - 4:
        raise ProtocolError(f"length field {body_len} != body {len(data) - 4}")
    return _decode_body(data[4:])


def _decode_body(body: bytes) -> Frame:
    if len(body) < 3:
        raise ProtocolError("truncated frame body")
    msg_type, name_len = struct.unpack_from(">BH", body, 0)
    try:
        mt = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown message type {msg_type}")
    off = 3
    if len(body) < off + name_len + 4:
        raise ProtocolError("truncated name")
    name = body[off:off + name_len].decode("utf-8")
    off += name_len
    (pay_len,) = struct.unpack_from(">I", body, off)
    off += 4
    if len(body) != off + pay_len:
        raise ProtocolError("payload length mismatch")
    if pay_len > MAX_PAYLOAD:
        raise ProtocolError(f"payload too large: {pay_len}")
    return Frame(mt, name, body[off:])


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed")
        buf.extend(chunk)
    return bytes(buf)


def _recv_frame(sock: socket.socket) -> Frame:
    head = _recv_exact(sock, 4)
    (body_len,) = struct.unpack(">I", head)
    if body_len > _MAX_BODY:
        raise ProtocolError(f"oversized frame body {body_len}")
    return _decode_body(_recv_exact(sock, body_len))


# --------------------------------------------------------------------------
# Broker
# --------------------------------------------------------------------------

class _BrokerClient:
    def __init__(self, sock: socket.socket, cap: int):
        self.sock = sock
        self.cap = cap
        # headroom beyond cap holds the final ERROR frame and close sentinel
        self.send_q = queue.Queue(maxsize=cap + 8)
        self.subs = set()
        self.alive = True
        self.lock = threading.Lock()

    def enqueue(self, frame: Frame) -> bool:
        if self.send_q.qsize() >= self.cap:
            return False
        try:
            self.send_q.put_nowait(frame)
            return True
        except queue.Full:
            return False

    def kill(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class Broker:
    """Accepts connections and forwards posted events to subscribers."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, *,
                 queue_cap: int = DEFAULT_QUEUE_CAP):
        self.host = host
        self._requested_port = port
        self.port = None
        self.queue_cap = queue_cap
        self._listener = None
        self._accept_thread = None
        self._clients = set()
        self._subs = {}  # name -> set of clients
        self._lock = threading.Lock()
        self._stats = BrokerStats()
        self._stopping = False

    def start(self) -> "Broker":
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.bind((self.host, self._requested_port))
            sock.listen(64)
        except OSError as e:
            sock.close()
            raise BindFailed(f"cannot bind {self.host}:{self._requested_port}: {e}")
        sock.settimeout(0.2)  # lets the accept loop notice stop()
        self._listener = sock
        self.port = sock.getsockname()[1]
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="bus-accept", daemon=True)
        self._accept_thread.start()
        return self

    @property
    def address(self):
        return (self.host, self.port)

    def stats(self) -> BrokerStats:
        with self._lock:
            return BrokerStats(self._stats.connections, self._stats.subscriptions,
                               self._stats.posts, self._stats.deliveries)

    def stop(self):
        self._stopping = True
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            with c.lock:
                c.alive = False
            c.kill()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2)

    # -- internals ----------------------------------------------------------

    def _accept_loop(self):
        while not self._stopping:
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            client = _BrokerClient(sock, self.queue_cap)
            with self._lock:
                self._clients.add(client)
                self._stats.connections += 1
            threading.Thread(target=self._reader_loop, args=(client,),
                             name="bus-reader", daemon=True).start()
            threading.Thread(target=self._writer_loop, args=(client,),
                             name="bus-writer", daemon=True).start()

    def _forget(self, client: _BrokerClient):
        with self._lock:
            for name in client.subs:
                members = self._subs.get(name)
                if members is not None:
                    members.discard(client)
                    if not members:
                        del self._subs[name]
            client.subs.clear()
            self._clients.discard(client)

    def _drop(self, client: _BrokerClient, error: str = None):
        """Disconnect a client, flushing an ERROR frame first if given."""
        self._forget(client)
        with client.lock:
            first = client.alive
            client.alive = False
        if not first:
            return
        try:
            if error:
                client.send_q.put_nowait(Frame(MsgType.ERROR,
                                               payload=error.encode()))
            client.send_q.put_nowait(None)  # close sentinel for the writer
        except queue.Full:
            client.kill()
            return
        # unblock the client's reader thread; the writer closes after flushing
        try:
            client.sock.shutdown(socket.SHUT_RD)
        except OSError:
            pass

    def _reader_loop(self, client: _BrokerClient):
        sock = client.sock
        try:
            first = _recv_frame(sock)
        except (ProtocolError, ConnectionError, OSError):
            self._drop(client, error="expected HELLO")
            return
        if first.msg_type is not MsgType.HELLO:
            self._drop(client, error="expected HELLO")
            return
        client.enqueue(Frame(MsgType.HELLO, payload=b"pulselab-bus/1"))
        while client.alive:
            try:
                frame = _recv_frame(sock)
            except (ProtocolError, ConnectionError, OSError):
                break
            try:
                self._handle(client, frame)
            except (BadName, PayloadTooLarge, ProtocolError) as e:
                client.enqueue(Frame(MsgType.ERROR, payload=str(e).encode()))
        self._drop(client)

    def _handle(self, client: _BrokerClient, frame: Frame):
        if frame.msg_type is MsgType.SUBSCRIBE:
            name = normalize_name(frame.name)
            with self._lock:
                self._subs.setdefault(name, set()).add(client)
                client.subs.add(name)
                self._stats.subscriptions += 1
        elif frame.msg_type is MsgType.UNSUBSCRIBE:
            name = normalize_name(frame.name)
            with self._lock:
                members = self._subs.get(name)
                if members is not None:
                    members.discard(client)
                    if not members:
                        del self._subs[name]
                client.subs.discard(name)
        elif frame.msg_type is MsgType.POST:
            name = normalize_name(frame.name)
            if len(frame.payload) > MAX_PAYLOAD:
                raise PayloadTooLarge(f"{len(frame.payload)} bytes")
            event = Frame(MsgType.EVENT, name, frame.payload)
            with self._lock:
                self._stats.posts += 1
                targets = list(self._subs.get(name, ()))
                self._stats.deliveries += len(targets)
            overflowed = [t for t in targets if not t.enqueue(event)]
            for t in overflowed:
                self._drop(t, error="slow consumer: outbound queue overflow")
        elif frame.msg_type is MsgType.PING:
            client.enqueue(Frame(MsgType.PONG, payload=frame.payload))
        elif frame.msg_type is MsgType.HELLO:
            pass  # redundant HELLO is harmless
        else:
            raise ProtocolError(f"unexpected {frame.msg_type.name} from client")

    def _writer_loop(self, client: _BrokerClient):
        while True:
            try:
                frame = client.send_q.get(timeout=0.2)
            except queue.Empty:
                if not client.alive and client.send_q.empty():
                    client.kill()
                    return
                continue
            if frame is None:
                client.kill()
                return
            try:
                client.sock.sendall(encode_frame(frame))
            except OSError:
                self._forget(client)
                with client.lock:
                    client.alive = False
                client.kill()
                return


# --------------------------------------------------------------------------
# Client connection
# --------------------------------------------------------------------------

class Connection:
    """Client endpoint: subscribe to names, post events, read delivered ones.

    One background reader thread fills the inbox; ``post``/``subscribe`` may
    be called from any thread (writes are serialized internally).
    """

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._wlock = threading.Lock()
        self._cond = threading.Condition()
        self._inbox = deque()
        self._pongs = 0
        self._closed = False
        self._error = None
        self._reader = threading.Thread(target=self._reader_loop,
                                        name="bus-client-reader", daemon=True)
        self._reader.start()

    # -- wire helpers -------------------------------------------------------

    def _send(self, frame: Frame):
        data = encode_frame(frame)
        with self._wlock:
            if self._closed:
                raise Disconnected("connection closed")
            try:
                self._sock.sendall(data)
            except OSError as e:
                self._mark_closed()
                raise Disconnected(str(e))

    def _reader_loop(self):
        while True:
            try:
                frame = _recv_frame(self._sock)
            except (ProtocolError, ConnectionError, OSError):
                self._mark_closed()
                return
            with self._cond:
                if frame.msg_type is MsgType.EVENT:
                    self._inbox.append((frame.name, frame.payload))
                elif frame.msg_type is MsgType.PONG:
                    self._pongs += 1
                elif frame.msg_type is MsgType.ERROR:
                    self._error = frame.payload.decode("utf-8", "replace")
                self._cond.notify_all()

    def _mark_closed(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def _sync(self, timeout: float = 5.0):
        """Round-trip a PING so previously sent frames are processed."""
        with self._cond:
            want = self._pongs + 1
        self._send(Frame(MsgType.PING))
        with self._cond:
            ok = self._cond.wait_for(
                lambda: self._pongs >= want or self._closed, timeout)
            if self._closed:
                raise Disconnected(self._error or "connection closed")
            if not ok:
                raise Timeout("no PONG from broker")

    # -- public API ----------------------------------------------------------

    def subscribe(self, name: str):
        """Register for a name; returns once the broker has applied it."""
        self._send(Frame(MsgType.SUBSCRIBE, normalize_name(name)))
        self._sync()

    def unsubscribe(self, name: str):
        self._send(Frame(MsgType.UNSUBSCRIBE, normalize_name(name)))
        self._sync()

    def post(self, name: str, payload: bytes = b""):
        if len(payload) > MAX_PAYLOAD:
            raise PayloadTooLarge(f"{len(payload)} bytes > {MAX_PAYLOAD}")
        self._send(Frame(MsgType.POST, normalize_name(name), bytes(payload)))

    def next_event(self, timeout_us=None):
        """Oldest undelivered (name, payload), FIFO. Raises Timeout or
        Disconnected."""
        deadline = None if timeout_us is None else timeout_us / 1e6
        with self._cond:
            if not self._inbox:
                self._cond.wait_for(lambda: self._inbox or self._closed,
                                    deadline)
            if self._inbox:
                return self._inbox.popleft()
            if self._closed:
                raise Disconnected(self._error or "connection closed")
            raise Timeout(f"no event within {timeout_us} us")

    def drain(self, timeout_us: int = 0):
        """All queued events without blocking longer than timeout_us total."""
        out = []
        try:
            while True:
                out.append(self.next_event(timeout_us))
                timeout_us = 0
        except (Timeout, Disconnected):
            return out

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self):
        with self._wlock:
            self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass
        with self._cond:
            self._cond.notify_all()


def connect(address, *, timeout: float = 5.0) -> Connection:
    """Open a connection to a broker at (host, port) or "host:port"."""
    if isinstance(address, str):
        host, _, port = address.rpartition(":")
        address = (host or "127.0.0.1", int(port))
    try:
        sock = socket.create_connection(address, timeout=timeout)
    except OSError as e:
        raise ConnectFailed(f"cannot reach broker at {address}: {e}")
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    try:
        sock.sendall(encode_frame(Frame(MsgType.HELLO, payload=b"pulselab-bus/1")))
        reply = _recv_frame(sock)
    except (ProtocolError, ConnectionError, OSError) as e:
        sock.close()
        raise ProtocolError(f"handshake failed: {e}")
    if reply.msg_type is not MsgType.HELLO:
        sock.close()
        raise ProtocolError(f"expected HELLO, got {reply.msg_type.name}")
    sock.settimeout(None)
    return Connection(sock)
