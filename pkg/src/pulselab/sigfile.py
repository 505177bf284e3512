"""Binary codec for signal blobs (``.sig`` files).

Layout, all little-endian:

    offset  size  field
    0       4     magic ``STSG``
    4       2     format version (currently 1), uint16
    6       1     timebase kind: 0 = uniform, 1 = explicit
    7       ...   timebase fields
    ...     8*n   samples, float64

Uniform timebase fields: int64 t0_us, int64 dt_us, uint64 n.
Explicit timebase fields: uint64 n, then n int64 timestamps.

The encoding is bit-exact: decode(encode(tb, samples)) returns the same
timestamps and the same float64 bit patterns.
"""

import struct

import numpy as np

MAGIC = b"STSG"
VERSION = 1

KIND_UNIFORM = 0
KIND_EXPLICIT = 1

_HEADER = struct.Struct("<4sHB")
_UNIFORM = struct.Struct("<qqQ")
_COUNT = struct.Struct("<Q")


class SigFileError(ValueError):
    """Raised for malformed or unsupported .sig data."""


def encode_uniform(t0_us: int, dt_us: int, samples) -> bytes:
    arr = np.ascontiguousarray(samples, dtype="<f8")
    head = _HEADER.pack(MAGIC, VERSION, KIND_UNIFORM)
    return head + _UNIFORM.pack(int(t0_us), int(dt_us), arr.size) + arr.tobytes()


def encode_explicit(times_us, samples) -> bytes:
    t = np.ascontiguousarray(times_us, dtype="<i8")
    arr = np.ascontiguousarray(samples, dtype="<f8")
    if t.size != arr.size:
        raise SigFileError("times/samples length mismatch")
    head = _HEADER.pack(MAGIC, VERSION, KIND_EXPLICIT)
    return head + _COUNT.pack(arr.size) + t.tobytes() + arr.tobytes()


def decode(data: bytes):
    """Decode a blob.

    Returns (kind, timebase fields, samples): for uniform blobs
    ``(KIND_UNIFORM, (t0_us, dt_us), samples)``, for explicit blobs
    ``(KIND_EXPLICIT, times_us, samples)``.
    """
    if len(data) < _HEADER.size:
        raise SigFileError("truncated header")
    magic, version, kind = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SigFileError("bad magic")
    if version != VERSION:
        raise SigFileError(f"unsupported version {version}")
    off = _HEADER.size
    if kind == KIND_UNIFORM:
        if len(data) < off + _UNIFORM.size:
            raise SigFileError("truncated uniform timebase")
        t0, dt, n = _UNIFORM.unpack_from(data, off)
        off += _UNIFORM.size
        samples = _read_samples(data, off, n)
        return KIND_UNIFORM, (t0, dt), samples
    if kind == KIND_EXPLICIT:
        if len(data) < off + _COUNT.size:
            raise SigFileError("truncated count")
        (n,) = _COUNT.unpack_from(data, off)
        off += _COUNT.size
        if len(data) < off + 8 * n:
            raise SigFileError("truncated timestamps")
        times = np.frombuffer(data, dtype="<i8", count=n, offset=off).copy()
        off += 8 * n
        samples = _read_samples(data, off, n)
        return KIND_EXPLICIT, times, samples
    raise SigFileError(f"unknown timebase kind {kind}")


def _read_samples(data: bytes, off: int, n: int) -> np.ndarray:
    if len(data) != off + 8 * n:
        raise SigFileError("sample block size mismatch")
    return np.frombuffer(data, dtype="<f8", count=n, offset=off).copy()
