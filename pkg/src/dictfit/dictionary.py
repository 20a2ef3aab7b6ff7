"""Dictionary generation over a parameter grid and truncated-SVD compression."""

from __future__ import annotations

import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .bloch import AcquisitionSchedule, SpinEnsemble, simulate_batch
from .errors import DimensionMismatch, InvalidParams, RankDeficientWarning
from .pgrid import ParameterGrid

DEFAULT_L = 30
CHUNK_ATOMS = 4096
# above this many atom entries the basis comes from the M x M Gram matrix
_GRAM_THRESHOLD = 5e7


@dataclass
class CompressionBasis:
    """Orthonormal ``M x L`` basis of the dominant atom subspace."""

    V: np.ndarray
    singular_values: np.ndarray
    energy_fraction: float = float("nan")

    @property
    def L(self) -> int:
        return int(self.V.shape[1])

    @property
    def M(self) -> int:
        return int(self.V.shape[0])


@dataclass
class Dictionary:
    """Atoms in canonical grid order; compressed when ``basis`` is set."""

    grid: ParameterGrid
    atoms: np.ndarray
    signal_length: int
    basis: CompressionBasis | None = None
    norms: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.atoms.shape[0] != self.grid.size:
            raise DimensionMismatch(
                f"{self.atoms.shape[0]} atoms for a grid of {self.grid.size}")
        if self.norms is None:
            self.norms = np.linalg.norm(self.atoms, axis=1)

    @property
    def compressed(self) -> bool:
        return self.basis is not None

    @property
    def channels(self) -> int:
        return int(self.atoms.shape[1])

    def atom(self, k) -> np.ndarray:
        """Atom at 1-based index vector ``k``."""
        return self.atoms[self.grid.flat_index(k)]


# recognised axis names -> simulator keyword
AXIS_KEYS = {"T1": "T1", "T2": "T2", "B1": "B1", "DW0": "delta_omega0",
             "T2P": "T2_prime"}


def single_blas_thread():
    """Process-pool initializer: BLAS results must not depend on thread count."""
    threadpool_limits(1)


def _simulate_rows(args):
    cols, schedule, ensemble = args
    return simulate_batch(schedule=schedule, ensemble=ensemble, **cols)


def _param_columns(grid: ParameterGrid, params: np.ndarray) -> dict:
    """Map grid columns onto simulator keywords; B1 defaults to 1."""
    cols = {"B1": np.ones(params.shape[0])}
    for p, name in enumerate(grid.names):
        key = AXIS_KEYS.get(name.upper())
        if key is None:
            raise InvalidParams(f"unknown parameter axis {name!r}; known: {sorted(AXIS_KEYS)}")
        cols[key] = params[:, p]
    if "T1" not in cols or "T2" not in cols:
        raise InvalidParams("grid needs T1 and T2 axes")
    return cols


def simulate_params(grid: ParameterGrid, params, schedule: AcquisitionSchedule,
                    ensemble: SpinEnsemble, workers: int = 1,
                    chunk: int = CHUNK_ATOMS) -> np.ndarray:
    """Simulate rows of physical parameters laid out like ``grid`` axes."""
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    cols = _param_columns(grid, params)
    n = params.shape[0]
    chunks = [{k: v[i:i + chunk] for k, v in cols.items()} for i in range(0, n, chunk)]
    if not chunks:
        return np.empty((0, schedule.length), dtype=np.complex128)
    jobs = [(c, schedule, ensemble) for c in chunks]
    if workers <= 1 or len(chunks) == 1:
        parts = [_simulate_rows(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=single_blas_thread) as pool:
            parts = list(pool.map(_simulate_rows, jobs))
    return np.concatenate(parts, axis=0)


def generate_dictionary(grid: ParameterGrid, schedule: AcquisitionSchedule,
                        ensemble: SpinEnsemble, workers: int = 1) -> Dictionary:
    """Simulate every grid node. Combinations with T2 > T1 are kept: the grid is a box."""
    atoms = simulate_params(grid, grid.node_params(), schedule, ensemble, workers)
    meta = {
        "schedule_hash": schedule.digest(),
        "ensemble_hash": ensemble.digest(),
        "n_spins": ensemble.size,
    }
    return Dictionary(grid, atoms, schedule.length, metadata=meta)


def _basis_from_gram(atoms: np.ndarray, L: int, block: int = 65536):
    M = atoms.shape[1]
    gram = np.zeros((M, M), dtype=np.complex128)
    for i in range(0, atoms.shape[0], block):
        a = atoms[i:i + block].astype(np.complex128)
        gram += a.T @ a.conj()
    w, U = np.linalg.eigh(gram)
    w = np.clip(w[::-1], 0.0, None)
    U = U[:, ::-1]
    return U, np.sqrt(w)


def compression_basis(atoms: np.ndarray, L: int) -> CompressionBasis:
    """Top-``L`` basis of the span of the atoms (atoms are rows)."""
    A = np.asarray(atoms)
    n_atoms, M = A.shape
    if not 1 <= L <= min(M, n_atoms):
        raise InvalidParams(f"L={L} outside [1, min(M, atoms)={min(M, n_atoms)}]")
    if A.size > _GRAM_THRESHOLD:
        U, sv = _basis_from_gram(A, L)
    else:
        _, sv, Vh = np.linalg.svd(A.astype(np.complex128), full_matrices=False)
        # rows of Vh span the row space; as columns they are the time-domain basis
        U = Vh.T
    total = float(np.sum(sv**2))
    energy = float(np.sum(sv[:L] ** 2) / total) if total > 0 else 1.0
    if sv[L - 1] < 1e-12 * sv[0]:
        warnings.warn(f"sigma_L={sv[L - 1]:.3g} is negligible relative to sigma_1",
                      RankDeficientWarning, stacklevel=2)
    return CompressionBasis(np.ascontiguousarray(U[:, :L]), sv[:L].copy(), energy)


def project_signal(m, basis: CompressionBasis) -> np.ndarray:
    """``V_L^H m`` for one signal ``(M,)`` or a batch ``(n, M)``."""
    m = np.asarray(m)
    if m.shape[-1] != basis.M:
        raise DimensionMismatch(f"signal length {m.shape[-1]} != basis length {basis.M}")
    return m @ basis.V.conj()


def svd_truncate(dictionary: Dictionary, L: int = DEFAULT_L):
    """Basis and compressed atoms ``(n_atoms, L)``."""
    if dictionary.compressed:
        raise InvalidParams("dictionary is already compressed")
    basis = compression_basis(dictionary.atoms, L)
    return basis, project_signal(dictionary.atoms, basis)


def compress(dictionary: Dictionary, L: int = DEFAULT_L) -> Dictionary:
    basis, comp = svd_truncate(dictionary, L)
    return replace(dictionary, atoms=comp, basis=basis, norms=None)


def build_compressed(grid: ParameterGrid, schedule: AcquisitionSchedule,
                     ensemble: SpinEnsemble, L: int = DEFAULT_L, workers: int = 1,
                     chunk: int = 65536, scratch_dir=None) -> Dictionary:
    """Generate and compress a dictionary too large to hold uncompressed in memory.

    Raw atoms are streamed to a complex64 scratch file while the ``M x M``
    Gram matrix accumulates in double precision; a second pass projects them.
    Compressed atoms are kept as complex64.
    """
    M = schedule.length
    n = grid.size
    L = min(L, M, n)
    fd, path = tempfile.mkstemp(suffix=".c8", dir=scratch_dir)
    row_bytes = M * np.dtype(np.complex64).itemsize
    try:
        gram = np.zeros((M, M), dtype=np.complex128)
        with os.fdopen(fd, "wb") as fh:
            for lo in range(0, n, chunk):
                rows = np.arange(lo, min(n, lo + chunk))
                k = np.stack(np.unravel_index(rows, grid.shape), axis=-1) + 1
                a = simulate_params(grid, grid.grid_to_param(k.astype(np.float64)), schedule,
                                    ensemble, workers)
                gram += a.T @ a.conj()
                fh.write(a.astype("<c8").tobytes())
        w, U = np.linalg.eigh(gram)
        w = np.clip(w[::-1], 0.0, None)
        U = U[:, ::-1]
        sv = np.sqrt(w)
        total = float(np.sum(w))
        basis = CompressionBasis(np.ascontiguousarray(U[:, :L]), sv[:L].copy(),
                                 float(np.sum(w[:L]) / total) if total > 0 else 1.0)
        comp = np.empty((n, L), dtype=np.complex64)
        norms = np.empty(n)
        Vc = basis.V.conj()
        with open(path, "rb") as fh:
            for lo in range(0, n, chunk):
                cnt = min(chunk, n - lo)
                raw = np.frombuffer(fh.read(cnt * row_bytes), dtype="<c8").reshape(cnt, M)
                c = raw.astype(np.complex128) @ Vc
                comp[lo:lo + cnt] = c
                norms[lo:lo + cnt] = np.linalg.norm(c, axis=1)
    finally:
        os.unlink(path)
    meta = {"schedule_hash": schedule.digest(), "ensemble_hash": ensemble.digest(),
            "n_spins": ensemble.size}
    return Dictionary(grid, comp, M, basis=basis, norms=norms, metadata=meta)
