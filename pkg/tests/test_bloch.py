from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dictfit import bloch
from dictfit.errors import InvalidParams
from oracles import bloch_oracle


def one_spin_state():
    return bloch.SpinState.equilibrium(1)


def test_rf_90_takes_z_to_plus_y():
    s = bloch.rf_rotate(one_spin_state(), 90.0, 0.0, bloch.SpinEnsemble.single())
    np.testing.assert_allclose([s.mx[0], s.my[0], s.mz[0]], [0, 1, 0], atol=1e-15)


def test_rf_zero_flip_is_identity(rng):
    s = bloch.SpinState(rng.standard_normal(5), rng.standard_normal(5), rng.standard_normal(5))
    ens = bloch.make_ensemble(5)
    out = bloch.rf_rotate(s, 0.0, 0.3, ens)
    np.testing.assert_allclose(out.mx, s.mx, atol=1e-15)
    np.testing.assert_allclose(out.my, s.my, atol=1e-15)
    np.testing.assert_array_equal(out.mz, s.mz)


def test_rf_180_inverts():
    s = bloch.rf_rotate(one_spin_state(), 180.0, 0.0, bloch.SpinEnsemble.single())
    np.testing.assert_allclose([s.mx[0], s.my[0], s.mz[0]], [0, 0, -1], atol=1e-15)


@given(st.floats(0, 180), st.floats(0, 2 * np.pi), st.floats(0.5, 1.5))
@settings(max_examples=50, deadline=None)
def test_rf_preserves_magnitude(flip, phase, b1):
    rng = np.random.default_rng(0)
    v = rng.standard_normal((3, 8))
    s = bloch.SpinState(*v)
    out = bloch.rf_rotate(s, flip, phase, bloch.make_ensemble(8), b1)
    np.testing.assert_allclose(out.mx**2 + out.my**2 + out.mz**2, (v**2).sum(0), rtol=1e-12)


def test_relax_closed_forms():
    s = bloch.SpinState(np.array([1.0]), np.array([0.0]), np.array([-1.0]))
    out = bloch.relax(s, 100.0, 100.0, 100.0)
    assert out.mz[0] == pytest.approx(1 - 2 * math.exp(-1), abs=1e-12)
    assert abs(out.transverse[0]) == pytest.approx(math.exp(-1), abs=1e-12)
    same = bloch.relax(s, 0.0, 100.0, 50.0)
    np.testing.assert_array_equal(same.mz, s.mz)
    with pytest.raises(InvalidParams):
        bloch.relax(s, -1.0, 100.0, 50.0)


def test_spoil_roots_of_unity_sum_to_zero():
    ens = bloch.make_ensemble(8, profile=False)
    np.testing.assert_allclose(ens.dephase_angles, 2 * np.pi * np.arange(8) / 8)
    s = bloch.SpinState(np.ones(8), np.zeros(8), np.zeros(8))
    out = bloch.spoil(s, ens)
    assert abs(out.transverse.sum()) < 1e-14
    np.testing.assert_allclose(np.abs(out.transverse), 1.0)


def test_spoil_single_spin_unchanged():
    s = bloch.SpinState(np.array([0.3]), np.array([0.4]), np.array([0.1]))
    out = bloch.spoil(s, bloch.SpinEnsemble.single())
    np.testing.assert_allclose([out.mx[0], out.my[0]], [0.3, 0.4])


def test_coherent_limit_amplitude_one():
    sched = bloch.AcquisitionSchedule([90.0], [10.0], echo_time=1e-9, inversion_enabled=False)
    s = bloch.simulate_signal(bloch.TissueParams(1e9, 1e9), sched, bloch.SpinEnsemble.single())
    assert abs(s[0]) == pytest.approx(1.0, abs=1e-9)


def test_no_excitation_gives_zero(short_schedule, ensemble16):
    sched = bloch.AcquisitionSchedule(np.zeros(10), np.full(10, 10.0), inversion_enabled=False)
    s = bloch.simulate_signal(bloch.TissueParams(1000, 100), sched, ensemble16)
    assert np.all(s == 0)


def test_inversion_recovery_null():
    ti = 40.0
    sched = bloch.AcquisitionSchedule([90.0], [10.0], inversion_time=ti, echo_time=1e-9)
    t1 = ti / math.log(2)
    s = bloch.simulate_signal(bloch.TissueParams(t1, 50.0), sched, bloch.SpinEnsemble.single())
    assert abs(s[0]) < 1e-9


def test_matches_matrix_exponential_oracle_full_train():
    sched = bloch.jiang_style_schedule(1000)
    ens = bloch.make_ensemble(8)
    s = bloch.simulate_batch(800.0, 70.0, 0.9, sched, ens)[0]
    ref = bloch_oracle(800.0, 70.0, 0.9, sched, ens)
    assert np.max(np.abs(s - ref)) <= 1e-10


def test_off_resonance_matches_oracle(short_schedule, ensemble16):
    s = bloch.simulate_batch(600.0, 40.0, 1.1, short_schedule, ensemble16,
                             delta_omega0=150.0)[0]
    ref = bloch_oracle(600.0, 40.0, 1.1, short_schedule, ensemble16, dw_rad_s=150.0)
    assert np.max(np.abs(s - ref)) <= 1e-10


def test_invalid_params():
    sched = bloch.jiang_style_schedule(5)
    ens = bloch.SpinEnsemble.single()
    with pytest.raises(InvalidParams):
        bloch.simulate_signal(bloch.TissueParams(50, 100), sched, ens)
    with pytest.raises(InvalidParams):
        bloch.simulate_signal(bloch.TissueParams(-5, -10), sched, ens)
    with pytest.raises(InvalidParams):
        bloch.AcquisitionSchedule([10.0], [2.0], echo_time=2.5)
    with pytest.raises(InvalidParams):
        bloch.AcquisitionSchedule([200.0], [10.0])


def test_deterministic_and_bounded(short_schedule, ensemble16):
    a = bloch.simulate_batch([900, 300], [80, 30], [1.0, 1.4], short_schedule, ensemble16)
    b = bloch.simulate_batch([900, 300], [80, 30], [1.0, 1.4], short_schedule, ensemble16)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 1 + 1e-12)


def test_magnitude_bound_every_event():
    # step the pure-numpy operators and check every spin after every event
    sched = bloch.jiang_style_schedule(60)
    ens = bloch.make_ensemble(12)
    T1, T2 = 700.0, 60.0
    st_ = bloch.rf_rotate(bloch.SpinState.equilibrium(12), 180.0, 0.0,
                          bloch.SpinEnsemble(ens.slice_offsets, np.ones(12), ens.dephase_angles))
    states = [st_]
    st_ = bloch.relax(st_, sched.inversion_time, T1, T2)
    for fa, tr in zip(sched.flip_angles, sched.repetition_times):
        st_ = bloch.rf_rotate(st_, fa, 0.0, ens, 1.5)
        states.append(st_)
        st_ = bloch.relax(st_, tr, T1, T2)
        states.append(st_)
        st_ = bloch.spoil(st_, ens)
        states.append(st_)
    for s in states:
        assert np.all(s.mx**2 + s.my**2 + s.mz**2 <= (1 + 1e-12) ** 2)


def test_t2_is_not_a_dead_parameter(short_schedule, ensemble16):
    a = bloch.simulate_signal(bloch.TissueParams(1000, 50), short_schedule, ensemble16)
    b = bloch.simulate_signal(bloch.TissueParams(1000, 500), short_schedule, ensemble16)
    assert np.linalg.norm(a - b) > 0


def test_t2_prime_extension_runs(short_schedule, ensemble16):
    a = bloch.simulate_signal(bloch.TissueParams(1000, 100), short_schedule, ensemble16)
    b = bloch.simulate_signal(bloch.TissueParams(1000, 100, T2_prime=20.0), short_schedule,
                              ensemble16)
    assert np.linalg.norm(a - b) > 0
    assert np.all(np.abs(b) <= 1 + 1e-12)


def test_slice_profile_shape():
    prof = bloch.slice_profile(np.array([0.0, 0.25, 0.5, 0.9]))
    assert prof[0] == pytest.approx(1.0)
    assert prof[0] > prof[1] > prof[2] > prof[3] >= 0.0


def test_schedule_csv_round_trip(tmp_path):
    s = bloch.jiang_style_schedule(50)
    p = tmp_path / "s.csv"
    bloch.write_schedule_csv(s, p)
    assert p.read_text().splitlines()[0] == "flip_deg,tr_ms"
    r = bloch.read_schedule_csv(p)
    np.testing.assert_array_equal(r.flip_angles, s.flip_angles)
    np.testing.assert_array_equal(r.repetition_times, s.repetition_times)
    assert r.digest() == s.digest()


def test_default_schedule_is_valid():
    s = bloch.jiang_style_schedule()
    assert s.length == 1000
    assert s.flip_angles.min() >= 0 and s.flip_angles.max() <= 180
