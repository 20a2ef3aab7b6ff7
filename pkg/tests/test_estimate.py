from __future__ import annotations

import numpy as np
import pytest

from dictfit import dictionary as dct, estimate, pgrid, spline
from dictfit.errors import DegenerateAtom, DimensionMismatch, EmptyDictionary, Unsupported
from oracles import residual_scan


def cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture(scope="module")
def fisp(short_schedule, ensemble16):
    g = pgrid.paper_axes((7, 6, 5))
    d = dct.generate_dictionary(g, short_schedule, ensemble16)
    return g, d, {n: spline.prefilter_coefficients(d.atoms, g, n) for n in (1, 2, 3)}


def test_optimal_scale_examples(rng):
    s = cplx(rng, 10)
    assert estimate.optimal_scale(3j * s, s) == pytest.approx(3j, abs=1e-12)
    m = cplx(rng, 10)
    m_perp = m - estimate.optimal_scale(m, s) * s
    assert abs(estimate.optimal_scale(m_perp, s)) < 1e-12
    with pytest.raises(DegenerateAtom):
        estimate.optimal_scale(m, np.zeros(10))


def test_optimal_scale_normal_equations(rng):
    for _ in range(20):
        m, s = cplx(rng, 15), cplx(rng, 15)
        # real two-parameter least squares in (rho_R, rho_I)
        A = np.stack([np.concatenate([s.real, s.imag]), np.concatenate([-s.imag, s.real])], 1)
        b = np.concatenate([m.real, m.imag])
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        rho = estimate.optimal_scale(m, s)
        assert rho == pytest.approx(x[0] + 1j * x[1], abs=1e-12)
        r_ref = np.linalg.norm(A @ x - b)
        assert np.linalg.norm(m - rho * s) == pytest.approx(r_ref, abs=1e-12)


def test_self_match_and_invariance(fisp):
    g, d, _ = fisp
    for k in (0, 17, g.size - 1):
        res = estimate.match_dictionary(d.atoms[k], d)
        assert res.index == k and res.rho == pytest.approx(1.0, abs=1e-12)
        c = 2 * np.exp(1j * np.pi / 4)
        res = estimate.match_dictionary(c * d.atoms[k], d)
        assert res.index == k and res.rho == pytest.approx(c, abs=1e-12)


def test_matching_equals_residual_scan(rng):
    atoms = cplx(rng, 40, 12)
    m = cplx(rng, 200, 12)
    idx, _, _, _ = estimate.match_batch(m, atoms, atom_chunk=7)
    assert all(idx[i] == residual_scan(m[i], atoms) for i in range(200))


def test_match_ties_and_edge_cases(rng):
    a = cplx(rng, 5)
    atoms = np.stack([np.zeros(5), a, 2 * a, a])
    assert estimate.match_dictionary(a, atoms).index == 1
    zero = estimate.match_dictionary(np.zeros(5), atoms)
    assert zero.zero_signal and zero.rho == 0
    with pytest.raises(EmptyDictionary):
        estimate.match_dictionary(a, np.zeros((0, 5)))
    with pytest.raises(DimensionMismatch):
        estimate.match_dictionary(np.ones(4), atoms)


def test_reduced_objective_examples(fisp, rng):
    g, _, models = fisp
    model = models[2]
    v = np.array([3.3, 2.2, 4.1])
    s = model.evaluate(v)
    val, _ = estimate.reduced_objective(s, model, v)
    assert abs(val) < 1e-12
    m = cplx(rng, s.size)
    m -= estimate.optimal_scale(m, s) * s
    val, _ = estimate.reduced_objective(m, model, v)
    assert val == pytest.approx(np.vdot(m, m).real, rel=1e-12)
    with pytest.raises(Unsupported):
        estimate.reduced_objective(m, spline.prefilter_coefficients(
            np.ones((g.size, s.size)), g, 0), v)


@pytest.mark.parametrize("n", [2, 3])
def test_reduced_gradient_finite_differences(fisp, rng, n):
    g, _, models = fisp
    model = models[n]
    h = 1e-5
    hi = np.array(g.shape) - 2 * h
    for _ in range(100):
        v = 1 + 2 * h + rng.random(3) * (hi - 1 - 2 * h)
        m = model.evaluate(1 + rng.random(3) * (np.array(g.shape) - 1)) + 0.01 * cplx(rng, 40)
        _, grad = estimate.reduced_objective(m, model, v)
        fd = np.zeros(3)
        for p in range(3):
            e = np.zeros(3)
            e[p] = h
            fd[p] = (estimate.reduced_objective(m, model, v + e)[0]
                     - estimate.reduced_objective(m, model, v - e)[0]) / (2 * h)
        assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(fd)


def test_fit_recovers_nodes(fisp):
    g, d, models = fisp
    opts = estimate.FitOptions(abs_decrease_tol=1e-14)
    for n in (2, 3):
        for kv in ([2, 2, 2], [4, 5, 2], [6, 3, 4]):
            kv = np.array(kv)
            k = g.flat_index(kv)
            start = kv + np.array([0.4, -0.3, 0.35])
            est = estimate.fit_spline(2j * d.atoms[k], models[n], opts, v0=start)
            assert np.max(np.abs(est.v_hat - kv)) <= 1e-6
            assert est.residual_norm <= 1e-10
            assert est.rho_hat == pytest.approx(2j, abs=1e-8)


def test_fit_stays_in_box_and_descends(fisp, rng):
    g, _, models = fisp
    hi = np.array(g.shape, dtype=float)
    for _ in range(20):
        m = cplx(rng, 40) * 0.1
        v0 = 1 + rng.random(3) * (hi - 1)
        f0, _ = estimate.reduced_objective(m, models[2], v0)
        est = estimate.fit_spline(m, models[2], v0=v0)
        assert np.all(est.v_hat >= 1) and np.all(est.v_hat <= hi)
        assert est.residual_norm**2 <= f0 + 1e-12


def test_compressed_full_rank_agrees(fisp, rng):
    g, d, models = fisp
    c = dct.compress(d, d.signal_length)
    cm = spline.prefilter_coefficients(c.atoms, g, 2)
    opts = estimate.FitOptions(abs_decrease_tol=1e-14)
    m = models[2].evaluate([3.4, 2.6, 2.2]) * 0.7
    a = estimate.fit_spline(m, models[2], opts)
    b = estimate.fit_spline(dct.project_signal(m, c.basis), cm, opts)
    np.testing.assert_allclose(a.v_hat, b.v_hat, atol=1e-6)


def test_zero_signal_is_flagged(fisp):
    est = estimate.estimate_voxel(np.zeros(40), fisp[2][2])
    assert est.zero_signal and est.rho_hat == 0 and est.iterations == 0


def test_estimate_voxel_recovers_node(fisp):
    g, d, models = fisp
    k = g.flat_index([4, 3, 3])
    est = estimate.estimate_voxel(d.atoms[k], models[3])
    np.testing.assert_allclose(est.v_hat, [4, 3, 3], atol=1e-6)


def test_batch_is_worker_independent(fisp, rng):
    g, d, models = fisp
    V = 1 + rng.random((4096, 3)) * (np.array(g.shape) - 1)
    X = models[2].evaluate(V) + 0.002 * cplx(rng, 4096, 40)
    one = estimate.fit_batch(X, models[2], workers=1, chunk=512)
    four = estimate.fit_batch(X, models[2], workers=4, chunk=512)
    a = np.array([e.v_hat for e in one])
    b = np.array([e.v_hat for e in four])
    assert a.tobytes() == b.tobytes()
    i1 = estimate.match_many(X, d, workers=1)
    i4 = estimate.match_many(X, d, workers=4)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(i1, i4))


def test_fit_options_validation():
    with pytest.raises(ValueError):
        estimate.FitOptions(abs_decrease_tol=0)
    with pytest.raises(ValueError):
        estimate.FitOptions(initialization="random")
