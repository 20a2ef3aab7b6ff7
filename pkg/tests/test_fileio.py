from __future__ import annotations

import numpy as np
import pytest

from dictfit import bloch, dictionary as dct, fileio, pgrid, spline
from dictfit.errors import BadMagic, ChecksumMismatch, TruncatedFile, VersionMismatch


@pytest.fixture(scope="module")
def tiny():
    sched = bloch.jiang_style_schedule(4)
    g = pgrid.paper_axes((2, 2, 2))
    return sched, dct.generate_dictionary(g, sched, bloch.make_ensemble(8))


def test_dictionary_round_trip(tiny, tmp_path):
    _, d = tiny
    p = tmp_path / "d.qdf"
    fileio.save_dictionary(d, p)
    r = fileio.load_dictionary(p)
    assert r.grid == d.grid
    np.testing.assert_array_equal(r.atoms, d.atoms.astype(np.complex64))
    assert fileio.dictionary_bytes(r) == p.read_bytes()
    assert r.metadata["schedule_hash"] == fileio._hash_bytes(d.metadata["schedule_hash"])


def test_compressed_round_trip(tiny, tmp_path):
    _, d = tiny
    c = dct.compress(d, 3)
    data = fileio.dictionary_bytes(c)
    r = fileio.dictionary_from_bytes(data)
    assert r.basis.L == 3 and r.signal_length == 4
    assert fileio.dictionary_bytes(r) == data


def test_compressed_payload_size():
    g = pgrid.paper_axes()
    d = dct.Dictionary(g, np.zeros((g.size, 30), np.complex64), 1000,
                       basis=dct.CompressionBasis(np.zeros((1000, 30), complex), np.ones(30)))
    n = len(fileio.dictionary_bytes(d))
    assert 2080 * 30 * 8 <= n < 2080 * 30 * 8 + 2080 * 4 + 1000 * 30 * 8 + 1024


def test_coefficient_round_trip(tiny, tmp_path):
    _, d = tiny
    model = spline.prefilter_coefficients(d.atoms, d.grid, 3)
    p = tmp_path / "c.qdf"
    fileio.save_coefficients(model, p)
    r = fileio.load_coefficients(p)
    assert r.order == 3
    np.testing.assert_array_equal(r.coefficients, model.coefficients)
    np.testing.assert_allclose(r.node_atoms(), d.atoms, atol=1e-12)


def test_signals_round_trip(rng):
    s = (rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))).astype(np.complex64)
    np.testing.assert_array_equal(fileio.signals_from_bytes(fileio.signals_bytes(s)), s)


@pytest.mark.parametrize("cut", [5, 40, -9, -1])
def test_truncated(tiny, cut):
    data = fileio.dictionary_bytes(tiny[1])
    with pytest.raises(TruncatedFile):
        fileio.dictionary_from_bytes(data[:cut] if cut > 0 else data[:cut])


def test_bad_magic(tiny):
    data = fileio.dictionary_bytes(tiny[1])
    with pytest.raises(BadMagic):
        fileio.dictionary_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(BadMagic):
        fileio.coefficients_from_bytes(data)


def test_version_mismatch(tiny):
    data = bytearray(fileio.dictionary_bytes(tiny[1]))
    data[4] = 99
    with pytest.raises(VersionMismatch):
        fileio.dictionary_from_bytes(bytes(data))


def test_checksum(tiny):
    data = bytearray(fileio.dictionary_bytes(tiny[1]))
    data[-20] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        fileio.dictionary_from_bytes(bytes(data))
