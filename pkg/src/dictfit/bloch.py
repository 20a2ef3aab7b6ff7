"""Event-based Bloch simulation of an inversion-prepared FISP train.

A voxel is represented by an ensemble of isochromats distributed over
twice the slice width. Each isochromat carries a relative excitation
efficiency (the small-tip slice profile of a truncated-sinc pulse) and a
fixed dephasing angle applied once per TR to mimic the unbalanced
gradient. RF pulses, the adiabatic inversion and the spoiler are
instantaneous rotations; relaxation between events is exact.

Rotation convention: a pulse of angle ``a`` and phase ``phi`` rotates
about the transverse axis ``(cos phi, sin phi, 0)`` in the left-handed
(NMR) sense, so a 90 degree pulse at phase 0 takes ``(0, 0, 1)`` to
``(0, 1, 0)``. The complex signal is ``mean(Mx + i My)``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InvalidParams

DEFAULT_TI = 40.0
DEFAULT_TE = 2.5
DEFAULT_TD = 5000.0
DEFAULT_SPINS = 200
DEFAULT_TBW = 3.0


@dataclass(frozen=True)
class AcquisitionSchedule:
    """Flip-angle / TR train plus the fixed sequence timings (ms, degrees)."""

    flip_angles: np.ndarray
    repetition_times: np.ndarray
    inversion_time: float = DEFAULT_TI
    echo_time: float = DEFAULT_TE
    train_delay: float = DEFAULT_TD
    inversion_enabled: bool = True

    def __post_init__(self):
        fa = np.asarray(self.flip_angles, dtype=np.float64).ravel()
        tr = np.asarray(self.repetition_times, dtype=np.float64).ravel()
        object.__setattr__(self, "flip_angles", fa)
        object.__setattr__(self, "repetition_times", tr)
        if fa.size < 1:
            raise InvalidParams("schedule needs at least one excitation")
        if fa.shape != tr.shape:
            raise InvalidParams("flip_angles and repetition_times differ in length")
        if np.any(fa < 0) or np.any(fa > 180):
            raise InvalidParams("flip angles must lie in [0, 180] degrees")
        if not self.echo_time > 0:
            raise InvalidParams("echo_time must be positive")
        if np.any(tr <= self.echo_time):
            raise InvalidParams("every TR must exceed TE")
        if self.inversion_time < 0 or self.train_delay < 0:
            raise InvalidParams("TI and TD must be non-negative")

    @property
    def length(self) -> int:
        return int(self.flip_angles.size)

    def digest(self) -> bytes:
        h = hashlib.sha256()
        h.update(self.flip_angles.astype("<f8").tobytes())
        h.update(self.repetition_times.astype("<f8").tobytes())
        h.update(
            np.array(
                [self.inversion_time, self.echo_time, self.train_delay,
                 float(self.inversion_enabled)],
                dtype="<f8",
            ).tobytes()
        )
        return h.digest()


@dataclass(frozen=True)
class SpinEnsemble:
    """Isochromat positions, excitation efficiencies and spoiler phases."""

    slice_offsets: np.ndarray
    flip_scale: np.ndarray
    dephase_angles: np.ndarray
    cauchy_quantiles: np.ndarray = field(default=None)

    def __post_init__(self):
        z = np.asarray(self.slice_offsets, dtype=np.float64).ravel()
        fs = np.asarray(self.flip_scale, dtype=np.float64).ravel()
        ph = np.asarray(self.dephase_angles, dtype=np.float64).ravel()
        if z.size < 1 or not (z.shape == fs.shape == ph.shape):
            raise InvalidParams("ensemble arrays must be non-empty and equally long")
        if np.any(fs < 0) or np.any(fs > 1):
            raise InvalidParams("flip_scale must lie in [0, 1]")
        cq = self.cauchy_quantiles
        cq = np.zeros_like(z) if cq is None else np.asarray(cq, dtype=np.float64).ravel()
        object.__setattr__(self, "slice_offsets", z)
        object.__setattr__(self, "flip_scale", fs)
        object.__setattr__(self, "dephase_angles", ph)
        object.__setattr__(self, "cauchy_quantiles", cq)

    @property
    def size(self) -> int:
        return int(self.slice_offsets.size)

    @classmethod
    def single(cls) -> "SpinEnsemble":
        """One on-resonance spin at slice centre with nominal flip."""
        return cls(np.zeros(1), np.ones(1), np.zeros(1))

    def digest(self) -> bytes:
        h = hashlib.sha256()
        for a in (self.slice_offsets, self.flip_scale, self.dephase_angles,
                  self.cauchy_quantiles):
            h.update(a.astype("<f8").tobytes())
        return h.digest()


@dataclass(frozen=True)
class TissueParams:
    T1: float
    T2: float
    B1_plus: float = 1.0
    delta_omega0: float = 0.0
    T2_prime: float | None = None

    def validate(self) -> None:
        if not (self.T2 > 0 and self.T1 > 0):
            raise InvalidParams("relaxation times must be positive")
        if self.T2 > self.T1:
            raise InvalidParams(f"T2={self.T2} exceeds T1={self.T1}")
        if not self.B1_plus > 0:
            raise InvalidParams("B1+ must be positive")
        if self.T2_prime is not None and not self.T2_prime > 0:
            raise InvalidParams("T2' must be positive")


@dataclass
class SpinState:
    """Per-isochromat magnetization, worker-local and mutable."""

    mx: np.ndarray
    my: np.ndarray
    mz: np.ndarray

    @classmethod
    def equilibrium(cls, n: int) -> "SpinState":
        return cls(np.zeros(n), np.zeros(n), np.ones(n))

    def copy(self) -> "SpinState":
        return SpinState(self.mx.copy(), self.my.copy(), self.mz.copy())

    @property
    def transverse(self) -> np.ndarray:
        return self.mx + 1j * self.my


def slice_profile(offsets, tbw: float = DEFAULT_TBW, n_quad: int = 4001) -> np.ndarray:
    """Small-tip excitation profile of a Hamming-windowed sinc pulse.

    ``offsets`` are in units of the slice FWHM, so the passband edge sits
    at +-0.5. The profile is normalized to 1 at the slice centre and
    clipped to [0, 1].
    """
    z = np.asarray(offsets, dtype=np.float64)
    t = (np.arange(n_quad) + 0.5) / n_quad - 0.5
    pulse = np.sinc(tbw * t) * (0.54 + 0.46 * np.cos(2 * np.pi * t))
    resp = np.cos(2 * np.pi * tbw * np.multiply.outer(z, t)) @ pulse
    return np.clip(resp / pulse.sum(), 0.0, 1.0)


def _coprime_step(n: int, start: int) -> int:
    q = max(1, start)
    while math.gcd(q, n) != 1:
        q += 1
    return q


def make_ensemble(
    n_spins: int = DEFAULT_SPINS,
    *,
    tbw: float = DEFAULT_TBW,
    spoil_cycles: int = 1,
    profile: bool = True,
) -> SpinEnsemble:
    """Uniform isochromat ensemble over twice the slice width.

    Spin ``k`` sits at offset ``-1 + (2k+1)/N`` and receives the spoiler
    phase ``2*pi*(k*q mod N)/N``: a linear gradient phase with ``q``
    cycles across the ensemble. ``q`` is bumped to the next integer
    coprime with ``N`` so the phases are exactly the N-th roots of unity.
    """
    if n_spins < 1:
        raise InvalidParams("need at least one spin")
    k = np.arange(n_spins)
    z = -1.0 + (2 * k + 1) / n_spins
    fs = slice_profile(z, tbw) if profile else np.ones(n_spins)
    q = _coprime_step(n_spins, spoil_cycles)
    phases = 2 * np.pi * ((k * q) % n_spins) / n_spins
    # Cauchy quantiles use a second interleaving so they decorrelate from z
    q2 = _coprime_step(n_spins, q + 2)
    u = (((k * q2) % n_spins) + 0.5) / n_spins
    cq = np.tan(np.pi * (u - 0.5))
    return SpinEnsemble(z, fs, phases, cq)


def rf_rotate(state: SpinState, flip: float, phase: float, ensemble: SpinEnsemble,
              B1_plus: float = 1.0) -> SpinState:
    """Instantaneous pulse of ``flip`` degrees scaled per spin by B1 and the profile."""
    a = np.deg2rad(flip) * B1_plus * ensemble.flip_scale
    c, s = np.cos(a), np.sin(a)
    cp, sp = math.cos(phase), math.sin(phase)
    # rotate into the pulse frame, apply the x-rotation, rotate back
    u = state.mx * cp + state.my * sp
    w = -state.mx * sp + state.my * cp
    w2 = w * c + state.mz * s
    z2 = state.mz * c - w * s
    return SpinState(u * cp - w2 * sp, u * sp + w2 * cp, z2)


def relax(state: SpinState, dt: float, T1: float, T2: float,
          delta_omega0: float = 0.0) -> SpinState:
    """Free relaxation over ``dt`` ms with optional precession (rad/s)."""
    if dt < 0:
        raise InvalidParams("dt must be non-negative")
    e1 = math.exp(-dt / T1)
    e2 = math.exp(-dt / T2)
    mxy = state.transverse * e2
    if delta_omega0:
        mxy = mxy * np.exp(-1j * delta_omega0 * dt * 1e-3)
    return SpinState(mxy.real.copy(), mxy.imag.copy(), 1.0 + (state.mz - 1.0) * e1)


def spoil(state: SpinState, ensemble: SpinEnsemble) -> SpinState:
    mxy = state.transverse * np.exp(-1j * ensemble.dephase_angles)
    return SpinState(mxy.real.copy(), mxy.imag.copy(), state.mz.copy())


def simulate_batch(
    T1,
    T2,
    B1,
    schedule: AcquisitionSchedule,
    ensemble: SpinEnsemble,
    delta_omega0=None,
    T2_prime=None,
) -> np.ndarray:
    """Signals for many parameter combinations, shape ``(n_atoms, M)``.

    Only positivity is checked here; dictionary boxes legitimately contain
    combinations with T2 > T1.
    """
    t1 = np.atleast_1d(np.asarray(T1, dtype=np.float64))
    t2 = np.atleast_1d(np.asarray(T2, dtype=np.float64))
    b1 = np.atleast_1d(np.asarray(B1, dtype=np.float64))
    t1, t2, b1 = np.broadcast_arrays(t1, t2, b1)
    n = t1.size
    dw = np.zeros(n) if delta_omega0 is None else np.broadcast_to(
        np.asarray(delta_omega0, dtype=np.float64), (n,)) * 1e-3
    if T2_prime is None:
        r2p = np.zeros(n)
    else:
        t2p = np.broadcast_to(np.asarray(T2_prime, dtype=np.float64), (n,))
        if np.any(t2p <= 0):
            raise InvalidParams("T2' must be positive")
        r2p = 1.0 / t2p
    if np.any(t1 <= 0) or np.any(t2 <= 0) or np.any(b1 <= 0):
        raise InvalidParams("T1, T2 and B1 must be positive")
    order = np.argsort(b1, kind="stable")
    b1_sorted = b1[order]
    uniq, starts = np.unique(b1_sorted, return_index=True)
    group_start = np.append(starts, n).astype(np.int64)
    out = np.empty((n, schedule.length), dtype=np.complex128)
    _kernels.fisp_train(
        np.ascontiguousarray(t1.ravel()),
        np.ascontiguousarray(t2.ravel()),
        np.ascontiguousarray(dw, dtype=np.float64),
        np.ascontiguousarray(r2p, dtype=np.float64),
        order.astype(np.int64),
        group_start,
        np.ascontiguousarray(uniq),
        np.deg2rad(schedule.flip_angles),
        schedule.repetition_times,
        float(schedule.echo_time),
        float(schedule.inversion_time),
        float(schedule.train_delay),
        bool(schedule.inversion_enabled),
        ensemble.flip_scale,
        np.cos(ensemble.dephase_angles),
        np.sin(ensemble.dephase_angles),
        ensemble.cauchy_quantiles,
        out,
    )
    return out


def simulate_signal(theta: TissueParams, schedule: AcquisitionSchedule,
                    ensemble: SpinEnsemble) -> np.ndarray:
    """Ensemble-averaged complex transverse magnetization at each echo."""
    theta.validate()
    return simulate_batch(
        theta.T1, theta.T2, theta.B1_plus, schedule, ensemble,
        delta_omega0=theta.delta_omega0,
        T2_prime=theta.T2_prime,
    )[0]


def jiang_style_schedule(
    n: int = 1000,
    *,
    inversion_time: float = DEFAULT_TI,
    echo_time: float = DEFAULT_TE,
    train_delay: float = DEFAULT_TD,
) -> AcquisitionSchedule:
    """Stand-in FISP-MRF train: four sinusoidal flip lobes, smooth TR in [11.5, 14.5] ms."""
    if n < 1:
        raise InvalidParams("schedule length must be positive")
    i = np.arange(n)
    lobe = np.minimum(4 * i // n, 3)
    lobe_len = np.bincount(lobe, minlength=4)
    lobe_start = np.concatenate(([0], np.cumsum(lobe_len)[:-1]))
    t = (i - lobe_start[lobe] + 0.5) / lobe_len[lobe]
    peaks = np.array([70.0, 45.0, 65.0, 30.0])
    flips = 5.0 + peaks[lobe] * np.sin(np.pi * t)
    u = (i + 0.5) / n
    tr = 13.0 + 1.5 * (0.6 * np.sin(2 * np.pi * 3 * u) + 0.4 * np.sin(2 * np.pi * 7 * u + 1.0))
    return AcquisitionSchedule(flips, tr, inversion_time, echo_time, train_delay, True)


def write_schedule_csv(schedule: AcquisitionSchedule, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flip_deg", "tr_ms"])
        for fa, tr in zip(schedule.flip_angles, schedule.repetition_times):
            w.writerow([repr(float(fa)), repr(float(tr))])


def read_schedule_csv(path, *, inversion_time: float = DEFAULT_TI,
                      echo_time: float = DEFAULT_TE, train_delay: float = DEFAULT_TD,
                      inversion_enabled: bool = True) -> AcquisitionSchedule:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"flip_deg", "tr_ms"}:
        raise InvalidParams(f"{path}: expected header flip_deg,tr_ms")
    fa = [float(r["flip_deg"]) for r in rows]
    tr = [float(r["tr_ms"]) for r in rows]
    return AcquisitionSchedule(np.array(fa), np.array(tr), inversion_time, echo_time,
                               train_delay, inversion_enabled)
