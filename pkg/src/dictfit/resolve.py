"""Grid sizing from edge interpolation errors, and interior error audits.

For each axis the other parameters are pinned to their extremes (the
``2**(P-1)`` edges of the box). Along every edge the signal is sampled at
``K_j = 2**(j-1) + 1`` uniformly spaced grid coordinates for
``j = 1..J``; a 1-D spline through those samples is compared with fresh
simulations at all midpoints. The worst midpoint error per level forms the
error curve, and the selected node count is the smallest ``K`` at which the
interpolated curve stays below the target for that and every further
refinement.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import spline
from .pgrid import ParameterAxis, ParameterGrid

Simulator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ResolutionConfig:
    alpha: float = 5e-4
    J: int = 10
    orders: tuple = (0, 1, 2, 3)
    safety_factor: float = 2.0
    interpolation: str = "loglog"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.J < 2:
            raise ValueError("J must be at least 2")
        if self.safety_factor < 1:
            raise ValueError("safety_factor must be >= 1")
        if self.interpolation not in ("loglog", "linear"):
            raise ValueError("interpolation must be 'loglog' or 'linear'")

    @property
    def target(self) -> float:
        return self.alpha / self.safety_factor


@dataclass
class AxisCurve:
    axis: str
    order: int
    counts: np.ndarray
    errors: np.ndarray
    selected: int | None
    floor: float

    @property
    def reached(self) -> bool:
        return self.selected is not None


@dataclass
class ResolutionReport:
    config: ResolutionConfig
    axes: tuple
    curves: dict = field(default_factory=dict)

    def curve(self, axis: str, order: int) -> AxisCurve:
        return self.curves[(axis, order)]

    def selected_counts(self, order: int) -> tuple | None:
        ks = [self.curves[(a, order)].selected for a in self.axes]
        if any(k is None for k in ks):
            return None
        return tuple(ks)

    def total_atoms(self, order: int) -> int | None:
        ks = self.selected_counts(order)
        return None if ks is None else int(np.prod(ks))

    def not_reached(self) -> list:
        return [key for key, c in self.curves.items() if not c.reached]


def edge_set(grid: ParameterGrid, p: int) -> list[np.ndarray]:
    """Pinned values for the ``2**(P-1)`` edges along axis ``p``.

    Each entry is a length-``P`` array of physical values with ``nan`` at
    position ``p``.
    """
    others = [q for q in range(grid.P) if q != p]
    edges = []
    for combo in itertools.product((0, 1), repeat=len(others)):
        fixed = np.full(grid.P, np.nan)
        for q, side in zip(others, combo):
            ax = grid.axes[q]
            fixed[q] = ax.max if side else ax.min
        edges.append(fixed)
    return edges


def edge_samples(axis: ParameterAxis, J: int) -> np.ndarray:
    """Physical values at the finest dyadic level (``2**J + 1`` points)."""
    u = np.arange(2**J + 1) / 2**J
    return axis.unit_to_param(u)


def _midpoint_errors(nodes: np.ndarray, mids: np.ndarray, order: int) -> float:
    """Worst error of a 1-D spline through ``nodes`` against the true ``mids``."""
    K = nodes.shape[0]
    g = ParameterGrid([ParameterAxis("u", 0.0, 1.0, K)])
    model = spline.prefilter_coefficients(nodes, g, order)
    v = (np.arange(K - 1) + 1.5)[:, None]
    approx = spline.evaluate(model, v)
    return float(np.max(np.linalg.norm(approx - mids, axis=1)))


def error_curves(edge_signals: Sequence[np.ndarray], orders, J: int) -> dict:
    """Max midpoint error per level for each order, from cached finest-level samples."""
    fine = 2**J
    out = {}
    for n in orders:
        errs = np.zeros(J)
        for j in range(1, J + 1):
            stride = fine // 2 ** (j - 1)
            worst = 0.0
            for sig in edge_signals:
                nodes = sig[::stride]
                mids = sig[stride // 2::stride]
                worst = max(worst, _midpoint_errors(nodes, mids, n))
            errs[j - 1] = worst
        out[n] = errs
    return out


def select_count(counts: np.ndarray, errors: np.ndarray, target: float,
                 interpolation: str = "loglog") -> int | None:
    """Smallest integer ``K`` whose interpolated error stays below ``target``.

    Returns ``None`` if the last evaluated level is not below target.
    """
    counts = np.asarray(counts, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    above = np.nonzero(errors >= target)[0]
    if above.size == 0:
        return int(counts[0])
    j = int(above[-1])
    if j == len(errors) - 1:
        return None
    k_a, k_b = counts[j], counts[j + 1]
    e_a, e_b = errors[j], errors[j + 1]
    if interpolation == "linear":
        t = (e_a - target) / (e_a - e_b)
        k_cross = k_a + t * (k_b - k_a)
    elif e_b <= 0.0:
        k_cross = k_a
    else:
        t = (math.log(e_a) - math.log(target)) / (math.log(e_a) - math.log(e_b))
        k_cross = math.exp(math.log(k_a) + t * (math.log(k_b) - math.log(k_a)))
    k = math.ceil(k_cross)
    if k <= k_cross:
        # exactly on the crossing is not "below"
        k += 1
    return int(min(max(k, k_a + 1), k_b))


def decay_slope(counts, errors, levels=None) -> float:
    """Least-squares slope of log(error) against log(K)."""
    counts = np.asarray(counts, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if levels is not None:
        idx = np.asarray(levels) - 1
        counts, errors = counts[idx], errors[idx]
    return float(np.polyfit(np.log(counts), np.log(errors), 1)[0])


def estimate_axis_resolution(grid: ParameterGrid, p: int, config: ResolutionConfig,
                             simulate: Simulator) -> dict:
    """Error curves and selected counts for axis ``p``, keyed by order."""
    J = config.J
    axis = grid.axes[p]
    samples = edge_samples(axis, J)
    edge_signals = []
    params = []
    for fixed in edge_set(grid, p):
        block = np.tile(fixed, (samples.size, 1))
        block[:, p] = samples
        params.append(block)
    signals = simulate(np.concatenate(params, axis=0))
    edge_signals = np.split(signals, len(params), axis=0)
    counts = 2 ** np.arange(J) + 1
    curves = {}
    for n, errs in error_curves(edge_signals, config.orders, J).items():
        sel = select_count(counts, errs, config.target, config.interpolation)
        curves[n] = AxisCurve(axis.name, n, counts, errs, sel, float(errs.min()))
    return curves


def estimate_grid_resolution(grid: ParameterGrid, config: ResolutionConfig,
                             simulate: Simulator) -> ResolutionReport:
    """Run the edge procedure on every axis. Axis counts in ``grid`` are ignored."""
    report = ResolutionReport(config, grid.names)
    for p in range(grid.P):
        for n, curve in estimate_axis_resolution(grid, p, config, simulate).items():
            report.curves[(grid.axes[p].name, n)] = curve
    return report


@dataclass
class AuditResult:
    positions: np.ndarray
    params: np.ndarray
    errors: np.ndarray
    alpha: float

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.errors**2)))

    @property
    def max(self) -> float:
        return float(np.max(self.errors))

    @property
    def exceed_fraction(self) -> float:
        return float(np.mean(self.errors > self.alpha))


def sample_interior(grid: ParameterGrid, samples: int, seed: int = 0,
                    physical: bool = True) -> np.ndarray:
    """Uniform grid coordinates in ``[1, K_p]``; rejects T2 > T1 when ``physical``."""
    rng = np.random.default_rng(seed)
    hi = np.array(grid.shape, dtype=np.float64)
    names = [n.upper() for n in grid.names]
    i1 = names.index("T1") if physical and "T1" in names else None
    i2 = names.index("T2") if physical and "T2" in names else None
    out = []
    while sum(len(o) for o in out) < samples:
        v = 1.0 + rng.random((samples, grid.P)) * (hi - 1.0)
        if i1 is not None and i2 is not None:
            theta = grid.grid_to_param(v)
            v = v[theta[:, i2] <= theta[:, i1]]
        out.append(v)
    return np.concatenate(out, axis=0)[:samples]


def nearest_node_approx(grid: ParameterGrid, simulate: Simulator) -> Callable:
    """Order-0 interpolant of a lattice dictionary that is never materialized."""
    def approx(V):
        k = np.ceil(np.asarray(V) - 0.5)
        return simulate(grid.grid_to_param(k))
    return approx


def interior_error_audit(approx: Callable, grid: ParameterGrid, simulate: Simulator,
                         samples: int = 1000, alpha: float = 5e-4, seed: int = 0,
                         positions=None) -> AuditResult:
    """Interpolation error at random interior positions against fresh simulations.

    ``approx`` maps grid coordinates ``(n, P)`` to uncompressed signals; pass
    ``lambda V: spline.evaluate(model, V)`` for a spline model.
    """
    V = sample_interior(grid, samples, seed) if positions is None else np.atleast_2d(positions)
    theta = grid.grid_to_param(V)
    truth = simulate(theta)
    est = approx(V)
    errors = np.linalg.norm(est - truth, axis=1)
    return AuditResult(V, theta, errors, alpha)
