import random
import socket
import struct
import threading
import time

import pytest

from pulselab import eventbus
from pulselab.eventbus import (
    BadName,
    BindFailed,
    Broker,
    ConnectFailed,
    Disconnected,
    Frame,
    MsgType,
    PayloadTooLarge,
    Timeout,
    connect,
    decode_frame,
    encode_frame,
    normalize_name,
)

WAIT = 2_000_000  # 2 s receive timeout in microseconds


class TestCodec:
    def test_roundtrip_basic(self):
        f = Frame(MsgType.POST, "SHOT_DONE", b"123")
        assert decode_frame(encode_frame(f)) == f

    def test_roundtrip_empty_name(self):
        f = Frame(MsgType.PING)
        assert decode_frame(encode_frame(f)) == f

    def test_length_field_is_body_length(self):
        wire = encode_frame(Frame(MsgType.EVENT, "A", b"xy"))
        (body_len,) = struct.unpack(">I", wire[:4])
        assert body_len == len(wire) - 4

    def test_length_mismatch_rejected(self):
        wire = encode_frame(Frame(MsgType.EVENT, "A", b"xy"))
        with pytest.raises(eventbus.ProtocolError):
            decode_frame(wire + b"!")

    def test_unknown_type_rejected(self):
        wire = bytearray(encode_frame(Frame(MsgType.PING)))
        wire[4] = 0x99
        with pytest.raises(eventbus.ProtocolError):
            decode_frame(bytes(wire))

    def test_fuzz_roundtrip(self):
        rng = random.Random(20020426)
        chars = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_"
        for _ in range(10_000):
            mt = MsgType(rng.randint(1, 8))
            name = "".join(rng.choice(chars)
                           for _ in range(rng.randint(0, 32)))
            size = rng.choice((0, 1, rng.randint(2, 64),
                               rng.randint(65, 4096)))
            payload = rng.randbytes(size)
            f = Frame(mt, name, payload)
            assert decode_frame(encode_frame(f)) == f

    def test_max_payload_boundary(self):
        ok = Frame(MsgType.POST, "X", bytes(eventbus.MAX_PAYLOAD))
        assert decode_frame(encode_frame(ok)) == ok
        with pytest.raises(PayloadTooLarge):
            encode_frame(Frame(MsgType.POST, "X",
                               bytes(eventbus.MAX_PAYLOAD + 1)))


class TestNames:
    def test_normalization(self):
        assert normalize_name("shot_done") == "SHOT_DONE"

    def test_too_long(self):
        with pytest.raises(BadName):
            normalize_name("A" * 33)

    def test_bad_chars(self):
        for bad in ("", "has space", "hy-phen", "ünïcode"):
            with pytest.raises(BadName):
                normalize_name(bad)


class TestBroker:
    def test_ephemeral_port_reported(self, broker):
        assert broker.port > 0

    def test_bind_conflict(self, broker):
        with pytest.raises(BindFailed):
            Broker(port=broker.port).start()

    def test_fresh_stats_zero(self):
        b = Broker().start()
        try:
            s = b.stats()
            assert (s.connections, s.subscriptions, s.posts, s.deliveries) \
                == (0, 0, 0, 0)
        finally:
            b.stop()

    def test_connect_counts(self, broker):
        c = connect(broker.address)
        assert broker.stats().connections == 1
        c.close()

    def test_connect_refused(self):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        with pytest.raises(ConnectFailed):
            connect(("127.0.0.1", port), timeout=1.0)

    def test_garbage_instead_of_hello(self, broker):
        raw = socket.create_connection(broker.address, timeout=2)
        raw.sendall(b"GET / HTTP/1.1\r\n\r\n")
        raw.settimeout(2)
        data = b""
        try:
            while True:
                chunk = raw.recv(4096)
                if not chunk:
                    break
                data += chunk
        except socket.timeout:
            pytest.fail("broker did not close the connection")
        frame = decode_frame(data)
        assert frame.msg_type is MsgType.ERROR
        raw.close()


class TestPubSub:
    def test_delivery_identity(self, bus_pair):
        a, b = bus_pair
        a.subscribe("SHOT_DONE")
        b.post("SHOT_DONE", b"917")
        assert a.next_event(WAIT) == ("SHOT_DONE", b"917")

    def test_lowercase_subscription_matches(self, bus_pair):
        a, b = bus_pair
        a.subscribe("shot_done")
        b.post("SHOT_DONE", b"1")
        assert a.next_event(WAIT)[0] == "SHOT_DONE"

    def test_subscribe_bad_name(self, bus_pair):
        a, _ = bus_pair
        with pytest.raises(BadName):
            a.subscribe("A" * 33)

    def test_post_without_subscribers(self, broker, bus_pair):
        _, b = bus_pair
        b.post("NOBODY_HOME", b"x")
        time.sleep(0.05)
        s = broker.stats()
        assert s.posts == 1 and s.deliveries == 0

    def test_two_subscribers_two_deliveries(self, broker, bus_pair):
        a, b = bus_pair
        c = connect(broker.address)
        try:
            a.subscribe("N")
            c.subscribe("N")
            b.post("N", b"v")
            assert a.next_event(WAIT) == ("N", b"v")
            assert c.next_event(WAIT) == ("N", b"v")
            assert broker.stats().deliveries == 2
        finally:
            c.close()

    def test_poster_not_delivered_unless_subscribed(self, bus_pair):
        a, b = bus_pair
        a.subscribe("X")
        b.post("X", b"1")
        assert a.next_event(WAIT) == ("X", b"1")
        with pytest.raises(Timeout):
            b.next_event(50_000)

    def test_payload_too_large(self, bus_pair):
        a, _ = bus_pair
        with pytest.raises(PayloadTooLarge):
            a.post("X", bytes(65537))

    def test_fifo_two_events(self, bus_pair):
        a, b = bus_pair
        a.subscribe("SEQ")
        b.post("SEQ", b"A")
        b.post("SEQ", b"B")
        assert a.next_event(WAIT)[1] == b"A"
        assert a.next_event(WAIT)[1] == b"B"

    def test_timeout(self, bus_pair):
        a, _ = bus_pair
        a.subscribe("QUIET")
        with pytest.raises(Timeout):
            a.next_event(timeout_us=30_000)

    def test_disconnected_after_broker_shutdown(self):
        broker = Broker().start()
        conn = connect(broker.address)
        conn.subscribe("X")
        broker.stop()
        with pytest.raises(Disconnected):
            conn.next_event(WAIT)
        conn.close()

    def test_exactly_once_in_order_1000(self, bus_pair):
        a, b = bus_pair
        a.subscribe("STREAM")
        for i in range(1000):
            b.post("STREAM", str(i).encode())
        got = [int(a.next_event(WAIT)[1]) for _ in range(1000)]
        assert got == list(range(1000))
        with pytest.raises(Timeout):
            a.next_event(50_000)

    def test_no_crosstalk(self, bus_pair):
        a, b = bus_pair
        a.subscribe("WANTED")
        for i in range(50):
            b.post("UNWANTED", b"no")
            b.post("WANTED", str(i).encode())
        for i in range(50):
            name, payload = a.next_event(WAIT)
            assert name == "WANTED" and int(payload) == i
        with pytest.raises(Timeout):
            a.next_event(50_000)

    def test_unsubscribe_stops_delivery(self, bus_pair):
        a, b = bus_pair
        a.subscribe("X")
        b.post("X", b"1")
        assert a.next_event(WAIT)[1] == b"1"
        a.unsubscribe("X")
        b.post("X", b"2")
        with pytest.raises(Timeout):
            a.next_event(50_000)

    def test_concurrent_posters_per_poster_fifo(self, broker):
        sub = connect(broker.address)
        sub.subscribe("MIXED")
        posters = [connect(broker.address) for _ in range(4)]
        n_each = 100

        def pump(idx, conn):
            for i in range(n_each):
                conn.post("MIXED", f"{idx}:{i}".encode())

        threads = [threading.Thread(target=pump, args=(i, c))
                   for i, c in enumerate(posters)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        seen = {i: [] for i in range(4)}
        for _ in range(4 * n_each):
            _, payload = sub.next_event(WAIT)
            idx, i = payload.decode().split(":")
            seen[int(idx)].append(int(i))
        for idx in range(4):
            assert seen[idx] == list(range(n_each))
        for c in posters:
            c.close()
        sub.close()


class TestSlowConsumer:
    def test_overflow_disconnects_with_error(self):
        broker = Broker(queue_cap=8).start()
        try:
            # handshake manually and then never read
            lazy = socket.create_connection(broker.address, timeout=5)
            lazy.sendall(encode_frame(Frame(MsgType.HELLO)))
            lazy.sendall(encode_frame(Frame(MsgType.SUBSCRIBE, "FLOOD")))
            poster = connect(broker.address)
            chunk = bytes(60_000)
            for _ in range(200):
                poster.post("FLOOD", chunk)
            # the broker must have dropped the lazy consumer; read out
            # whatever was in flight and expect an ERROR frame then EOF
            lazy.settimeout(5)
            buf = b""
            try:
                while True:
                    data = lazy.recv(65536)
                    if not data:
                        break
                    buf += data
            except socket.timeout:
                pytest.fail("slow consumer was not disconnected")
            frames = []
            view = memoryview(buf)
            while len(view) >= 4:
                (body_len,) = struct.unpack_from(">I", view, 0)
                frames.append(decode_frame(bytes(view[:4 + body_len])))
                view = view[4 + body_len:]
            kinds = [f.msg_type for f in frames]
            assert MsgType.ERROR in kinds
            events = sum(1 for k in kinds if k is MsgType.EVENT)
            assert events < 200
            lazy.close()
            poster.close()
        finally:
            broker.stop()
