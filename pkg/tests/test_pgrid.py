from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dictfit import pgrid
from dictfit.errors import InvalidParams, OutOfDomain


def test_log_axis_endpoints_and_midpoint():
    g = pgrid.paper_axes()
    a = g.axes[0]
    assert a.to_param(1.0) == 5.0
    assert a.to_param(13.0) == 6000.0
    assert a.to_param(7.0) == pytest.approx(math.sqrt(5 * 6000), rel=1e-12)


def test_linear_axis_midpoint():
    g = pgrid.paper_axes()
    assert g.axes[2].to_param(10.5) == pytest.approx(1.0, abs=1e-15)


def test_param_to_grid_examples():
    g = pgrid.paper_axes()
    v = g.param_to_grid([5.0, 5.0, 0.5])
    np.testing.assert_array_equal(v, [1.0, 1.0, 1.0])
    v = g.param_to_grid([math.sqrt(5 * 6000), math.sqrt(5 * 2000), 1.0])
    np.testing.assert_allclose(v, [7.0, 4.5, 10.5], rtol=1e-12)


def test_round_trip(rng):
    g = pgrid.paper_axes()
    v = 1.0 + rng.random((100, 3)) * (np.array(g.shape) - 1.0)
    theta = g.grid_to_param(v)
    np.testing.assert_allclose(g.grid_to_param(g.param_to_grid(theta)), theta, rtol=1e-12)
    np.testing.assert_allclose(g.param_to_grid(theta), v, rtol=1e-12)


def test_iter_indices():
    g2 = pgrid.ParameterGrid([pgrid.ParameterAxis("a", 0, 1, 2),
                              pgrid.ParameterAxis("b", 0, 1, 2)])
    assert list(g2.iter_indices()) == [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert sum(1 for _ in pgrid.paper_axes().iter_indices()) == 2080
    g1 = pgrid.ParameterGrid([pgrid.ParameterAxis("a", 0, 1, 3)])
    assert list(g1.iter_indices()) == [(1,), (2,), (3,)]


def test_index_array_matches_iteration_and_flat_index():
    g = pgrid.paper_axes((3, 4, 5))
    arr = g.index_array()
    assert [tuple(r) for r in arr] == list(g.iter_indices())
    np.testing.assert_array_equal(g.flat_index(arr), np.arange(g.size))
    np.testing.assert_array_equal(g.unflat_index(np.arange(g.size)), arr)


def test_log_axis_constant_ratio():
    nodes = pgrid.paper_axes().axes[0].nodes()
    r = nodes[1:] / nodes[:-1]
    np.testing.assert_allclose(r, r[0], rtol=1e-12)


@given(st.floats(1.0, 13.0), st.floats(1.0, 13.0))
@settings(max_examples=100, deadline=None)
def test_axis_map_is_monotone(a, b):
    ax = pgrid.paper_axes().axes[0]
    if a < b:
        assert ax.to_param(a) <= ax.to_param(b)


def test_out_of_domain():
    g = pgrid.paper_axes()
    with pytest.raises(OutOfDomain):
        g.grid_to_param([0.5, 1.0, 1.0])
    with pytest.raises(OutOfDomain):
        g.param_to_grid([7000.0, 100.0, 1.0])


def test_invalid_axes():
    with pytest.raises(InvalidParams):
        pgrid.ParameterAxis("x", 0.0, 1.0, 5, "log")
    with pytest.raises(InvalidParams):
        pgrid.ParameterAxis("x", 2.0, 1.0, 5)
    with pytest.raises(InvalidParams):
        pgrid.ParameterAxis("x", 0.0, 1.0, 1)


def test_config_round_trip(tmp_path):
    g = pgrid.paper_axes()
    p = tmp_path / "grid.txt"
    p.write_text("# comment\n" + pgrid.format_grid_config(g))
    assert pgrid.read_grid_config(p) == g
