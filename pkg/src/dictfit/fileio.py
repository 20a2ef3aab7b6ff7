"""Little-endian binary containers for dictionaries, spline coefficients and voxel signals.

Every file ends with a CRC32 of all preceding bytes. Dictionaries (``QDFD``)
store atoms as complex64; coefficient caches (``QDFC``) keep complex128 so a
reloaded model is bit-identical to the one that was saved.
"""

from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path

import numpy as np

from .dictionary import CompressionBasis, Dictionary
from .errors import BadMagic, ChecksumMismatch, TruncatedFile, VersionMismatch
from .pgrid import ParameterAxis, ParameterGrid
from .spline import SplineModel

VERSION = 1
MAGIC_DICT = b"QDFD"
MAGIC_COEF = b"QDFC"
MAGIC_SIGNAL = b"QDFS"
_NO_HASH = bytes(32)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        vals = struct.unpack(fmt, self.take(size))
        return vals[0] if len(vals) == 1 else vals

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt, count=count).copy()


def _verified_body(data: bytes, magic: bytes) -> _Reader:
    if len(data) < 4:
        raise TruncatedFile("file shorter than its magic")
    if data[:4] != magic:
        raise BadMagic(f"expected {magic!r}, found {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedFile("file shorter than its header")
    version = struct.unpack("<I", data[4:8])[0]
    if version != VERSION:
        raise VersionMismatch(f"file version {version}, reader supports {VERSION}")
    r = _Reader(data[:-4])
    r.pos = 8
    return r


def _check_crc(data: bytes) -> None:
    stored = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored:
        raise ChecksumMismatch("CRC32 does not match file contents")


def _finish(buf: io.BytesIO) -> bytes:
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _write_axes(buf, grid: ParameterGrid) -> None:
    for ax in grid.axes:
        name = ax.name.encode("utf-8")
        buf.write(struct.pack("<B", len(name)))
        buf.write(name)
        buf.write(struct.pack("<Bddi", 1 if ax.is_log else 0, ax.min, ax.max, ax.K))


def _read_axes(r: _Reader, P: int) -> ParameterGrid:
    axes = []
    for _ in range(P):
        n = r.unpack("<B")
        name = r.take(n).decode("utf-8")
        spacing, lo, hi, K = r.unpack("<Bddi")
        axes.append(ParameterAxis(name, lo, hi, K, "log" if spacing else "linear"))
    return ParameterGrid(axes)


def _hash_bytes(h) -> bytes:
    if h is None:
        return _NO_HASH
    if isinstance(h, str):
        h = bytes.fromhex(h)
    if len(h) != 32:
        raise ValueError("schedule hash must be 32 bytes")
    return bytes(h)


def dictionary_bytes(d: Dictionary) -> bytes:
    L = d.basis.L if d.compressed else 0
    M = d.signal_length
    buf = io.BytesIO()
    buf.write(MAGIC_DICT)
    buf.write(struct.pack("<IHII", VERSION, d.grid.P, M, L))
    _write_axes(buf, d.grid)
    buf.write(_hash_bytes(d.metadata.get("schedule_hash")))
    buf.write(np.ascontiguousarray(d.atoms, dtype="<c8").tobytes())
    buf.write(np.ascontiguousarray(d.norms, dtype="<f4").tobytes())
    if L:
        buf.write(np.ascontiguousarray(d.basis.V, dtype="<c8").tobytes())
        buf.write(np.ascontiguousarray(d.basis.singular_values, dtype="<f4").tobytes())
    return _finish(buf)


def dictionary_from_bytes(data: bytes) -> Dictionary:
    r = _verified_body(data, MAGIC_DICT)
    P, M, L = r.unpack("<HII")
    grid = _read_axes(r, P)
    sched = r.take(32)
    C = L if L else M
    atoms = r.array("<c8", grid.size * C).reshape(grid.size, C)
    norms = r.array("<f4", grid.size)
    basis = None
    if L:
        V = r.array("<c8", M * L).reshape(M, L)
        sv = r.array("<f4", L)
        basis = CompressionBasis(V, sv)
    if r.pos != len(r.buf):
        raise TruncatedFile("payload length disagrees with header")
    _check_crc(data)
    meta = {"schedule_hash": sched}
    return Dictionary(grid, atoms, M, basis=basis, norms=norms, metadata=meta)


def save_dictionary(d: Dictionary, path) -> None:
    Path(path).write_bytes(dictionary_bytes(d))


def load_dictionary(path) -> Dictionary:
    return dictionary_from_bytes(Path(path).read_bytes())


def coefficients_bytes(model: SplineModel, signal_length: int | None = None,
                       schedule_hash=None) -> bytes:
    basis = model.basis
    L = basis.L if basis is not None else 0
    M = signal_length if signal_length is not None else (basis.M if basis is not None
                                                         else model.channels)
    buf = io.BytesIO()
    buf.write(MAGIC_COEF)
    buf.write(struct.pack("<IHII", VERSION, model.grid.P, M, L))
    _write_axes(buf, model.grid)
    buf.write(_hash_bytes(schedule_hash))
    buf.write(struct.pack("<B", model.order))
    buf.write(np.ascontiguousarray(model.coefficients, dtype="<c16").tobytes())
    if L:
        buf.write(np.ascontiguousarray(basis.V, dtype="<c8").tobytes())
        buf.write(np.ascontiguousarray(basis.singular_values, dtype="<f4").tobytes())
    return _finish(buf)


def coefficients_from_bytes(data: bytes) -> SplineModel:
    r = _verified_body(data, MAGIC_COEF)
    P, M, L = r.unpack("<HII")
    grid = _read_axes(r, P)
    r.take(32)
    order = r.unpack("<B")
    e = 1 if order >= 2 else 0
    shape = tuple(K + 2 * e for K in grid.shape)
    C = L if L else M
    coef = r.array("<c16", int(np.prod(shape)) * C).reshape(shape + (C,))
    basis = None
    if L:
        V = r.array("<c8", M * L).reshape(M, L)
        basis = CompressionBasis(V, r.array("<f4", L))
    if r.pos != len(r.buf):
        raise TruncatedFile("payload length disagrees with header")
    _check_crc(data)
    return SplineModel(order, grid, coef, basis=basis)


def save_coefficients(model: SplineModel, path, **kw) -> None:
    Path(path).write_bytes(coefficients_bytes(model, **kw))


def load_coefficients(path) -> SplineModel:
    return coefficients_from_bytes(Path(path).read_bytes())


def signals_bytes(signals) -> bytes:
    s = np.atleast_2d(np.asarray(signals))
    buf = io.BytesIO()
    buf.write(MAGIC_SIGNAL)
    buf.write(struct.pack("<III", VERSION, s.shape[1], s.shape[0]))
    buf.write(np.ascontiguousarray(s, dtype="<c8").tobytes())
    return _finish(buf)


def signals_from_bytes(data: bytes) -> np.ndarray:
    r = _verified_body(data, MAGIC_SIGNAL)
    C, n = r.unpack("<II")
    out = r.array("<c8", C * n).reshape(n, C)
    if r.pos != len(r.buf):
        raise TruncatedFile("payload length disagrees with header")
    _check_crc(data)
    return out


def save_signals(signals, path) -> None:
    Path(path).write_bytes(signals_bytes(signals))


def load_signals(path) -> np.ndarray:
    return signals_from_bytes(Path(path).read_bytes())
