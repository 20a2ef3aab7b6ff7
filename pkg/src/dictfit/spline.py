"""Tensor-product B-spline interpolation of vector-valued dictionary atoms.

Nodes sit at integer grid coordinates ``1..K`` on every axis. For orders
0 and 1 the coefficients are the atoms themselves. For orders 2 and 3 one
extra coefficient is added beyond each boundary and fixed by requiring the
interpolant's derivative at the boundary node to equal a one-sided finite
difference of the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import _kernels
from .errors import OutOfDomain, SingularSystem, Unsupported
from .pgrid import ParameterGrid

ORDERS = (0, 1, 2, 3)

# one-sided first-derivative stencils at the lower boundary, by accuracy order
_STENCILS = {
    1: np.array([-1.0, 1.0]),
    2: np.array([-1.5, 2.0, -0.5]),
    3: np.array([-11.0 / 6.0, 3.0, -1.5, 1.0 / 3.0]),
}


def basis_value(n: int, x):
    """Centered B-spline of degree ``n`` (support width ``n + 1``).

    Order 0 is the box on ``(-1/2, 1/2]`` so that half-integer ties resolve
    to the lower node.
    """
    _check_order(n)
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    if n == 0:
        return ((x > -0.5) & (x <= 0.5)).astype(np.float64)
    if n == 1:
        return np.maximum(1.0 - ax, 0.0)
    if n == 2:
        return np.where(ax < 0.5, 0.75 - ax**2,
                        np.where(ax < 1.5, 0.5 * (1.5 - ax) ** 2, 0.0))
    return np.where(ax < 1.0, 2.0 / 3.0 - ax**2 + 0.5 * ax**3,
                    np.where(ax < 2.0, (2.0 - ax) ** 3 / 6.0, 0.0))


def basis_derivative(n: int, x):
    """d/dx of ``basis_value(n, x)``, i.e. beta^(n-1)(x + 1/2) - beta^(n-1)(x - 1/2)."""
    _check_order(n)
    if n == 0:
        raise Unsupported("order-0 splines have no derivative")
    x = np.asarray(x, dtype=np.float64)
    return basis_value(n - 1, x + 0.5) - basis_value(n - 1, x - 0.5)


def _check_order(n):
    if n not in ORDERS:
        raise Unsupported(f"spline order {n} not in {ORDERS}")


def extension(n: int) -> int:
    return 1 if n >= 2 else 0


def boundary_stencil(n: int, K: int) -> np.ndarray:
    """Lower-boundary derivative stencil used for order ``n`` with ``K`` nodes.

    Accuracy order ``n`` keeps the boundary error at the interpolant's own
    ``O(h^(n+1))`` rate; short axes fall back to what the data supports.
    """
    return _STENCILS[max(1, min(n, K - 1, 3))]


def collocation_matrix(n: int, K: int) -> np.ndarray:
    """Dense ``(K + 2e) x (K + 2e)`` system mapping coefficients to [d1, s1..sK, dK].

    Used for the banded solve (after conversion) and as a test oracle.
    """
    e = extension(n)
    size = K + 2 * e
    A = np.zeros((size, size))
    cols = np.arange(size)
    node_of_col = cols - e + 1
    for i in range(K):
        A[i + e] = basis_value(n, (i + 1) - node_of_col)
    if e:
        A[0] = basis_derivative(n, 1 - node_of_col)
        A[-1] = basis_derivative(n, K - node_of_col)
    return A


def _banded_collocation(n: int, K: int) -> np.ndarray:
    """``collocation_matrix`` in ``solve_banded`` layout with two sub- and super-diagonals."""
    e = extension(n)
    size = K + 2 * e
    ab = np.zeros((5, size))
    rows = np.arange(size)
    for d in range(-2, 3):
        cols = rows + d
        ok = (cols >= 0) & (cols < size)
        r, c = rows[ok], cols[ok]
        x = r - c  # row node minus column node, both shifted by e - 1
        vals = basis_value(n, x)
        if e:
            # derivative rows sit at the first and last nodes, not at the extension
            vals = np.where(r == 0, basis_derivative(n, x + 1), vals)
            vals = np.where(r == size - 1, basis_derivative(n, x - 1), vals)
        ab[2 - d, c] = vals
    return ab


def _rhs(data: np.ndarray, n: int) -> np.ndarray:
    """Stack boundary derivatives around the data along axis 0."""
    if extension(n) == 0:
        return data
    K = data.shape[0]
    w = boundary_stencil(n, K)
    lo = np.tensordot(w, data[: w.size], axes=(0, 0))
    hi = -np.tensordot(w, data[::-1][: w.size], axes=(0, 0))
    return np.concatenate([lo[None], data, hi[None]], axis=0)


def _solve_axis(data: np.ndarray, n: int, axis: int) -> np.ndarray:
    moved = np.moveaxis(data, axis, 0)
    K = moved.shape[0]
    flat = moved.reshape(K, -1)
    rhs = _rhs(flat, n)
    ab = _banded_collocation(n, K)
    try:
        coef = solve_banded((2, 2), ab, rhs, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    out = coef.reshape((ab.shape[1],) + moved.shape[1:])
    return np.moveaxis(out, 0, axis)


@dataclass
class SplineModel:
    """Prefiltered B-spline model of a dictionary over grid coordinates.

    ``coefficients`` has shape ``(*extended_shape, C)`` where ``C`` is the
    signal length (``M`` raw or ``L`` compressed).
    """

    order: int
    grid: ParameterGrid
    coefficients: np.ndarray
    atoms: np.ndarray | None = None
    basis: object = None
    _flat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_order(self.order)
        self.coefficients = np.asarray(self.coefficients, dtype=np.complex128)
        self._flat = np.ascontiguousarray(
            self.coefficients.reshape(-1, self.coefficients.shape[-1]))
        self._shape = np.array(self.coefficients.shape[:-1], dtype=np.int64)

    @property
    def ext(self) -> int:
        return extension(self.order)

    @property
    def channels(self) -> int:
        return int(self.coefficients.shape[-1])

    @property
    def flat_coefficients(self) -> np.ndarray:
        return self._flat

    @property
    def coef_shape(self) -> np.ndarray:
        return self._shape

    def check_domain(self, v: np.ndarray) -> None:
        hi = np.array(self.grid.shape, dtype=np.float64)
        if (v.shape[-1] != self.grid.P or np.any(v < 1.0) or np.any(v > hi)
                or not np.all(np.isfinite(v))):
            raise OutOfDomain(f"grid coordinate outside [1, K]: {v}")

    def node_atoms(self) -> np.ndarray:
        """Atoms at the grid nodes, rebuilt from the coefficients if not kept."""
        if self.atoms is None:
            self.atoms = evaluate(self, self.grid.index_array().astype(np.float64))
        return self.atoms

    def evaluate(self, v) -> np.ndarray:
        return evaluate(self, v)

    def evaluate_with_gradient(self, v):
        return evaluate_with_gradient(self, v)


def prefilter_coefficients(atoms, grid: ParameterGrid, n: int) -> SplineModel:
    """Solve for coefficients so the interpolant passes through every atom.

    ``atoms`` is ``(grid.size, C)`` in canonical order or already shaped
    ``(*grid.shape, C)``.
    """
    _check_order(n)
    atoms = np.asarray(atoms)
    data = atoms.reshape(grid.shape + (atoms.shape[-1],)).astype(np.complex128)
    if n >= 2 and min(grid.shape) < 2:
        raise Unsupported("orders >= 2 need at least two nodes per axis")
    coef = data
    if n >= 2:
        for axis in range(grid.P):
            coef = _solve_axis(coef, n, axis)
    if not np.all(np.isfinite(coef)):
        raise SingularSystem("non-finite spline coefficients")
    return SplineModel(n, grid, coef, atoms=atoms.reshape(grid.size, -1))


def evaluate(model: SplineModel, v) -> np.ndarray:
    """Interpolated signal at grid coordinate(s) ``v`` (``(P,)`` or ``(n, P)``)."""
    V = np.asarray(v, dtype=np.float64)
    single = V.ndim == 1
    V = np.atleast_2d(V)
    model.check_domain(V)
    out = np.empty((V.shape[0], model.channels), dtype=np.complex128)
    dummy = np.empty((V.shape[0], 1, 1), dtype=np.complex128)
    _kernels.tensor_eval_many(model.flat_coefficients, model.coef_shape, model.order,
                              model.ext, np.ascontiguousarray(V), False, out, dummy)
    return out[0] if single else out


def evaluate_with_gradient(model: SplineModel, v):
    """Value and gradient (``(P, C)`` per point) with respect to grid coordinates."""
    if model.order == 0:
        raise Unsupported("order-0 interpolant has no usable gradient")
    V = np.asarray(v, dtype=np.float64)
    single = V.ndim == 1
    V = np.atleast_2d(V)
    model.check_domain(V)
    out = np.empty((V.shape[0], model.channels), dtype=np.complex128)
    grad = np.empty((V.shape[0], model.grid.P, model.channels), dtype=np.complex128)
    _kernels.tensor_eval_many(model.flat_coefficients, model.coef_shape, model.order,
                              model.ext, np.ascontiguousarray(V), True, out, grad)
    if single:
        return out[0], grad[0]
    return out, grad
