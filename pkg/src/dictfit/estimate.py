"""Per-voxel estimation: exhaustive dictionary matching and bounded spline fitting.

The complex scale is eliminated analytically, so fitting works on the
reduced objective ``||m||^2 - |s^H m|^2 / ||s||^2`` over grid coordinates.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dictionary import Dictionary, single_blas_thread
from .errors import DegenerateAtom, DimensionMismatch, EmptyDictionary, Unsupported
from .spline import SplineModel

VOXEL_CHUNK = 512
ATOM_CHUNK = 65536


@dataclass
class FitOptions:
    abs_decrease_tol: float = 1e-5
    max_iterations: int = 100
    initialization: str = "match"
    multistart: bool = False
    max_step: float = 4.0

    def __post_init__(self):
        if not self.abs_decrease_tol > 0:
            raise ValueError("abs_decrease_tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.initialization not in ("match", "given"):
            raise ValueError("initialization must be 'match' or 'given'")


@dataclass
class VoxelEstimate:
    v_hat: np.ndarray
    theta_hat: np.ndarray
    rho_hat: complex
    residual_norm: float
    iterations: int
    converged: bool
    zero_signal: bool = False


@dataclass
class MatchResult:
    index: int
    rho: complex
    score: float
    zero_signal: bool = False


def optimal_scale(m, s) -> complex:
    """Least-squares complex scale ``s^H m / s^H s``."""
    m = np.asarray(m)
    s = np.asarray(s)
    ss = float(np.vdot(s, s).real)
    if ss == 0.0:
        raise DegenerateAtom("atom has zero norm")
    return complex(np.vdot(s, m) / ss)


def _atoms_and_norms(dictionary):
    if isinstance(dictionary, Dictionary):
        atoms, norms = dictionary.atoms, dictionary.norms
    elif isinstance(dictionary, SplineModel):
        atoms = dictionary.node_atoms()
        norms = None
    else:
        atoms, norms = np.asarray(dictionary), None
    if atoms is None or atoms.shape[0] == 0:
        raise EmptyDictionary("dictionary has no atoms")
    if norms is None:
        norms = np.linalg.norm(atoms, axis=1)
    return atoms, np.asarray(norms, dtype=np.float64)


def match_batch(signals, dictionary, atom_chunk: int = ATOM_CHUNK):
    """Exhaustive matching of ``(n, C)`` signals.

    Returns ``(index, rho, score, zero)`` arrays. Ties resolve to the lowest
    canonical index. Arithmetic follows the atom dtype, so complex64 atoms
    are scored in single precision.
    """
    atoms, norms = _atoms_and_norms(dictionary)
    X = np.atleast_2d(np.asarray(signals))
    if X.shape[1] != atoms.shape[1]:
        raise DimensionMismatch(f"signal length {X.shape[1]} != atom length {atoms.shape[1]}")
    n = X.shape[0]
    Xc = X.astype(np.result_type(atoms.dtype, np.complex64), copy=False)
    best = np.full(n, -1.0)
    idx = np.zeros(n, dtype=np.int64)
    inner = np.zeros(n, dtype=np.complex128)
    for lo in range(0, atoms.shape[0], atom_chunk):
        A = atoms[lo:lo + atom_chunk]
        nr = norms[lo:lo + atom_chunk]
        ip = Xc @ A.conj().T  # (n, chunk): s^H m for every pair
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.abs(ip) / nr.astype(ip.real.dtype)
        score[:, nr == 0] = 0.0
        j = np.argmax(score, axis=1)
        rows = np.arange(n)
        s = score[rows, j].astype(np.float64)
        better = s > best
        best[better] = s[better]
        idx[better] = lo + j[better]
        inner[better] = ip[rows, j][better]
    zero = ~np.any(X != 0, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = inner / norms[idx] ** 2
    rho[zero | (norms[idx] == 0)] = 0.0
    best[zero] = 0.0
    idx[zero] = 0
    return idx, rho, best, zero


def match_dictionary(m, dictionary) -> MatchResult:
    """Best atom for one signal by the normalized absolute inner product."""
    idx, rho, score, zero = match_batch(np.asarray(m)[None, :], dictionary)
    return MatchResult(int(idx[0]), complex(rho[0]), float(score[0]), bool(zero[0]))


def _objective(model: SplineModel, v, m):
    val, grad, a, b = _kernels.reduced_objective(
        model.flat_coefficients, model.coef_shape, model.order, model.ext,
        np.ascontiguousarray(v, dtype=np.float64), m)
    return val, grad, a, b


def reduced_objective(m, model: SplineModel, v):
    """Value and gradient of ``min_rho ||m - rho s(v)||^2`` with respect to ``v``."""
    if model.order == 0:
        raise Unsupported("order-0 models have no gradient")
    m = np.ascontiguousarray(m, dtype=np.complex128)
    if m.shape[-1] != model.channels:
        raise DimensionMismatch(f"signal length {m.shape[-1]} != model channels {model.channels}")
    v = np.asarray(v, dtype=np.float64)
    model.check_domain(v[None, :])
    val, grad, _, b = _objective(model, v, m)
    if b == 0.0:
        raise DegenerateAtom(f"interpolated atom vanishes at {v}")
    return float(val), grad


def _objective_gn(model: SplineModel, v, m):
    return _kernels.reduced_objective_gn(
        model.flat_coefficients, model.coef_shape, model.order, model.ext,
        np.ascontiguousarray(v, dtype=np.float64), m)


def _descend(model, m, x0, lo, hi, opts: FitOptions):
    """Projected Gauss-Newton with backtracking; returns (x, f, a, b, iterations, converged).

    Bounds are handled by freezing coordinates that sit on a bound with the
    gradient pointing outwards and projecting trial points onto the box.
    """
    P = x0.size
    x = np.clip(x0, lo, hi)
    f, g, H, a, b = _objective_gn(model, x, m)
    if not np.isfinite(f):
        raise DegenerateAtom(f"interpolated atom vanishes at {x}")
    converged = False
    it = 0
    while it < opts.max_iterations:
        it += 1
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        if not np.any(free):
            converged = True
            break
        d = np.zeros(P)
        Hf = H[np.ix_(free, free)]
        damp = 1e-10 * max(np.trace(Hf), 1e-300)
        try:
            d[free] = -np.linalg.solve(Hf + damp * np.eye(Hf.shape[0]), g[free])
        except np.linalg.LinAlgError:
            d[free] = -g[free]
        if not g @ d < 0:
            d = np.where(free, -g, 0.0)
        t = min(1.0, opts.max_step / max(np.max(np.abs(d)), 1e-300))
        accepted = False
        for _ in range(40):
            xn = np.clip(x + t * d, lo, hi)
            fn, gn, Hn, an, bn = _objective_gn(model, xn, m)
            if np.isfinite(fn) and fn <= f + 1e-4 * (g @ (xn - x)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no descent left at working precision
            converged = True
            break
        decrease = f - fn
        x, f, g, H, a, b = xn, fn, gn, Hn, an, bn
        if decrease < opts.abs_decrease_tol:
            converged = True
            break
    return x, f, a, b, it, converged


def fit_spline(m, model: SplineModel, options: FitOptions | None = None,
               v0=None) -> VoxelEstimate:
    """Bounded least-squares fit of ``m`` over the grid-coordinate box of ``model``."""
    opts = options or FitOptions()
    if model.order == 0:
        raise Unsupported("fitting needs a spline order >= 1")
    m = np.ascontiguousarray(m, dtype=np.complex128)
    if m.shape[-1] != model.channels:
        raise DimensionMismatch(f"signal length {m.shape[-1]} != model channels {model.channels}")
    m_sq = float(np.vdot(m, m).real)
    lo = np.ones(model.grid.P)
    hi = np.array(model.grid.shape, dtype=np.float64)
    if m_sq == 0.0:
        v = lo.copy() if v0 is None else np.clip(np.asarray(v0, float), lo, hi)
        return VoxelEstimate(v, model.grid.grid_to_param(v), 0j, 0.0, 0, True, True)
    if v0 is None:
        res = match_dictionary(m, model)
        v0 = model.grid.unflat_index(res.index).astype(np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    starts = [v0]
    if opts.multistart:
        for p in range(model.grid.P):
            s = v0.copy()
            s[p] = s[p] + 1.0 if s[p] + 1.0 <= hi[p] else s[p] - 1.0
            starts.append(s)
    best = None
    for s in starts:
        out = _descend(model, m, s, lo, hi, opts)
        if best is None or out[1] < best[1]:
            best = out
    x, f, a, b, it, conv = best
    rho = complex(a / b)
    return VoxelEstimate(x, model.grid.grid_to_param(x), rho, float(np.sqrt(max(f, 0.0))),
                         int(it), bool(conv))


def estimate_voxel(m, model: SplineModel, options: FitOptions | None = None) -> VoxelEstimate:
    """Match against the model's own nodes, then refine by fitting."""
    return fit_spline(m, model, options)


def _fit_chunk(args):
    signals, model, opts, starts = args
    return [fit_spline(signals[i], model, opts, v0=starts[i]) for i in range(signals.shape[0])]


def _chunks(n, size):
    return [(i, min(n, i + size)) for i in range(0, n, size)]


def fit_batch(signals, model: SplineModel, options: FitOptions | None = None,
              workers: int = 1, chunk: int = VOXEL_CHUNK) -> list[VoxelEstimate]:
    """Match-initialized fits of ``(n, C)`` signals, returned in input order.

    Chunk boundaries are fixed by ``chunk`` only, so results do not depend on
    the number of workers.
    """
    opts = options or FitOptions()
    X = np.ascontiguousarray(np.atleast_2d(signals), dtype=np.complex128)
    starts = []
    for i0, i1 in _chunks(X.shape[0], chunk):
        if opts.initialization == "match":
            idx, _, _, _ = match_batch(X[i0:i1], model)
            starts.append(model.grid.unflat_index(idx).astype(np.float64))
        else:
            raise ValueError("batch fitting needs match initialization")
    jobs = [(X[i0:i1], model, opts, s) for (i0, i1), s in zip(_chunks(X.shape[0], chunk), starts)]
    if workers <= 1 or len(jobs) <= 1:
        parts = [_fit_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=single_blas_thread) as pool:
            parts = list(pool.map(_fit_chunk, jobs))
    return [e for part in parts for e in part]


def _match_chunk(args):
    signals, dictionary = args
    return match_batch(signals, dictionary)


def match_many(signals, dictionary, workers: int = 1, chunk: int = VOXEL_CHUNK):
    """``match_batch`` over fixed voxel chunks, optionally in worker processes."""
    X = np.atleast_2d(signals)
    jobs = [(X[i0:i1], dictionary) for i0, i1 in _chunks(X.shape[0], chunk)]
    if workers <= 1 or len(jobs) <= 1:
        parts = [_match_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=single_blas_thread) as pool:
            parts = list(pool.map(_match_chunk, jobs))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))


def estimates_from_match(idx, rho, zero, grid) -> list[VoxelEstimate]:
    """Wrap matching output as estimates at the matched nodes."""
    out = []
    for i, r, z in zip(idx, rho, zero):
        v = grid.unflat_index(int(i)).astype(np.float64)
        out.append(VoxelEstimate(v, grid.grid_to_param(v), complex(r), float("nan"), 0, True,
                                 bool(z)))
    return out
