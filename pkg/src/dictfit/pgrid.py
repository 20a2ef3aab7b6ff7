"""Parameter grids: the map between 1-based grid coordinates and physical values."""

from __future__ import annotations

import itertools
import shlex
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import InvalidParams, OutOfDomain

_REL_TOL = 1e-12


@dataclass(frozen=True)
class ParameterAxis:
    """One grid axis: ``K`` nodes spanning ``[min, max]`` on a log or linear scale."""

    name: str
    min: float
    max: float
    K: int
    spacing: str = "linear"

    def __post_init__(self):
        if self.spacing not in ("log", "linear"):
            raise InvalidParams(f"unknown spacing {self.spacing!r}")
        if not self.min < self.max:
            raise InvalidParams(f"axis {self.name}: min must be below max")
        if self.spacing == "log" and self.min <= 0:
            raise InvalidParams(f"axis {self.name}: log spacing needs min > 0")
        if int(self.K) != self.K or self.K < 2:
            raise InvalidParams(f"axis {self.name}: K must be an integer >= 2")
        object.__setattr__(self, "K", int(self.K))

    @property
    def is_log(self) -> bool:
        return self.spacing == "log"

    def with_count(self, K: int) -> "ParameterAxis":
        return ParameterAxis(self.name, self.min, self.max, K, self.spacing)

    def _lo_hi(self):
        if self.is_log:
            return np.log(self.min), np.log(self.max)
        return self.min, self.max

    def unit_to_param(self, u):
        """Physical value at normalized position ``u`` in [0, 1]."""
        lo, hi = self._lo_hi()
        u = np.asarray(u, dtype=np.float64)
        x = lo + u * (hi - lo)
        out = np.exp(x) if self.is_log else x
        # pin the endpoints exactly
        out = np.where(u == 0.0, self.min, out)
        return np.where(u == 1.0, self.max, out)

    def param_to_unit(self, theta):
        lo, hi = self._lo_hi()
        x = np.log(theta) if self.is_log else np.asarray(theta, dtype=np.float64)
        return (x - lo) / (hi - lo)

    def to_param(self, v):
        return self.unit_to_param((np.asarray(v, dtype=np.float64) - 1.0) / (self.K - 1))

    def to_grid(self, theta):
        return 1.0 + (self.K - 1) * self.param_to_unit(theta)

    def nodes(self) -> np.ndarray:
        return self.to_param(np.arange(1, self.K + 1))


class ParameterGrid:
    """Tensor grid of ``P`` axes. Canonical atom order is lexicographic, last axis fastest."""

    def __init__(self, axes: Sequence[ParameterAxis]):
        if len(axes) < 1:
            raise InvalidParams("a grid needs at least one axis")
        self.axes = tuple(axes)

    def __repr__(self):
        inner = ", ".join(f"{a.name}:{a.spacing}[{a.min:g},{a.max:g}]x{a.K}" for a in self.axes)
        return f"ParameterGrid({inner})"

    def __eq__(self, other):
        return isinstance(other, ParameterGrid) and self.axes == other.axes

    def __hash__(self):
        return hash(self.axes)

    @property
    def P(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.K for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    def with_counts(self, counts: Sequence[int]) -> "ParameterGrid":
        return ParameterGrid([a.with_count(k) for a, k in zip(self.axes, counts)])

    def _check_box(self, v: np.ndarray, ext: float) -> None:
        lo = 1.0 - ext
        hi = np.array(self.shape, dtype=np.float64) + ext
        tol = 1e-9
        if np.any(v < lo - tol) or np.any(v > hi + tol) or not np.all(np.isfinite(v)):
            raise OutOfDomain(f"grid coordinate {v} outside box [{lo}, {hi}]")

    def grid_to_param(self, v, ext: float = 0.0) -> np.ndarray:
        """Physical values at grid coordinates ``v`` (shape ``(..., P)``)."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.P:
            raise OutOfDomain(f"expected {self.P} coordinates, got shape {v.shape}")
        self._check_box(v, ext)
        return np.stack([a.to_param(v[..., p]) for p, a in enumerate(self.axes)], axis=-1)

    def param_to_grid(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape[-1] != self.P:
            raise OutOfDomain(f"expected {self.P} parameters, got shape {theta.shape}")
        for p, a in enumerate(self.axes):
            t = theta[..., p]
            span = _REL_TOL * max(abs(a.min), abs(a.max))
            if np.any(t < a.min - span) or np.any(t > a.max + span):
                raise OutOfDomain(f"{a.name} outside [{a.min}, {a.max}]")
        v = np.stack([a.to_grid(theta[..., p]) for p, a in enumerate(self.axes)], axis=-1)
        return np.clip(v, 1.0, np.array(self.shape, dtype=np.float64))

    def iter_indices(self) -> Iterator[tuple[int, ...]]:
        """1-based index vectors in canonical order."""
        return itertools.product(*(range(1, k + 1) for k in self.shape))

    def index_array(self) -> np.ndarray:
        """All 1-based index vectors as an ``(size, P)`` integer array, canonical order."""
        mesh = np.meshgrid(*(np.arange(1, k + 1) for k in self.shape), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node_params(self) -> np.ndarray:
        return self.grid_to_param(self.index_array().astype(np.float64))

    def flat_index(self, k) -> np.ndarray:
        """Canonical row of 1-based index vectors ``k``."""
        k = np.asarray(k, dtype=np.int64) - 1
        return np.ravel_multi_index(tuple(np.moveaxis(k, -1, 0)), self.shape)

    def unflat_index(self, row) -> np.ndarray:
        return np.stack(np.unravel_index(row, self.shape), axis=-1) + 1


def paper_axes(K=(13, 8, 20)) -> ParameterGrid:
    """T1 [5, 6000] ms log, T2 [5, 2000] ms log, B1+ [0.5, 1.5] linear."""
    return ParameterGrid([
        ParameterAxis("T1", 5.0, 6000.0, K[0], "log"),
        ParameterAxis("T2", 5.0, 2000.0, K[1], "log"),
        ParameterAxis("B1", 0.5, 1.5, K[2], "linear"),
    ])


def parse_axis_line(line: str) -> ParameterAxis:
    """Parse ``axis T1 log 5 6000 13``."""
    parts = shlex.split(line)
    if len(parts) != 6 or parts[0] != "axis":
        raise InvalidParams(f"bad axis declaration: {line!r}")
    _, name, spacing, lo, hi, k = parts
    return ParameterAxis(name, float(lo), float(hi), int(k), spacing)


def read_grid_config(path) -> ParameterGrid:
    axes = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if line:
                axes.append(parse_axis_line(line))
    return ParameterGrid(axes)


def format_grid_config(grid: ParameterGrid) -> str:
    return "".join(
        f"axis {a.name} {a.spacing} {a.min!r} {a.max!r} {a.K}\n" for a in grid.axes
    )
