import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulselab import sigfile


def test_uniform_roundtrip():
    samples = np.arange(500, dtype=np.float64)
    blob = sigfile.encode_uniform(0, 1000, samples)
    kind, (t0, dt), out = sigfile.decode(blob)
    assert kind == sigfile.KIND_UNIFORM
    assert (t0, dt) == (0, 1000)
    assert out.tobytes() == samples.tobytes()


def test_explicit_roundtrip():
    times = np.array([-5, 0, 7, 123456789], dtype=np.int64)
    samples = np.array([1.5, -0.0, 2e-308, 1e300])
    blob = sigfile.encode_explicit(times, samples)
    kind, t_out, out = sigfile.decode(blob)
    assert kind == sigfile.KIND_EXPLICIT
    assert np.array_equal(t_out, times)
    assert out.tobytes() == samples.tobytes()


def test_header_layout():
    blob = sigfile.encode_uniform(0, 1, [0.0])
    assert blob[:4] == b"STSG"
    assert blob[4:6] == (1).to_bytes(2, "little")
    assert blob[6] == 0


def test_bad_magic():
    with pytest.raises(sigfile.SigFileError):
        sigfile.decode(b"NOPE" + bytes(20))


def test_truncation_detected():
    blob = sigfile.encode_uniform(0, 1000, np.arange(8.0))
    for cut in (3, 6, 10, len(blob) - 1):
        with pytest.raises(sigfile.SigFileError):
            sigfile.decode(blob[:cut])
    with pytest.raises(sigfile.SigFileError):
        sigfile.decode(blob + b"\x00")


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=200, deadline=None)
@given(
    t0=st.integers(-10**12, 10**12),
    dt=st.integers(1, 10**9),
    samples=st.lists(finite, min_size=1, max_size=64),
)
def test_uniform_roundtrip_property(t0, dt, samples):
    arr = np.array(samples)
    kind, (t0b, dtb), out = sigfile.decode(sigfile.encode_uniform(t0, dt, arr))
    assert (t0b, dtb) == (t0, dt)
    assert out.tobytes() == arr.tobytes()


@settings(max_examples=200, deadline=None)
@given(data=st.data())
def test_explicit_roundtrip_property(data):
    times = data.draw(st.lists(st.integers(-10**12, 10**12), min_size=1,
                               max_size=64, unique=True).map(sorted))
    samples = data.draw(st.lists(finite, min_size=len(times),
                                 max_size=len(times)))
    arr = np.array(samples)
    kind, t_out, out = sigfile.decode(
        sigfile.encode_explicit(np.array(times, dtype=np.int64), arr))
    assert list(t_out) == times
    assert out.tobytes() == arr.tobytes()
