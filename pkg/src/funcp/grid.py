"""Structured cell-centered grids on the unit box and quadrature-weighted norms.

A :class:`Grid` is described by its cell edges along each axis. Samples live at
cell centers, and every cell carries a quadrature weight equal to its volume,
so that ``sum(w * v**2)`` is a midpoint-rule approximation of the squared
:math:`L^2` norm over ``[0, 1]^D``.

Fields are stored flat in row-major (C) order over the cell multi-index, i.e.
the last axis varies fastest.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateDenominatorError, InvalidArgumentError, NumericError

__all__ = [
    "GridKind",
    "Grid",
    "Field",
    "make_grid",
    "quadrature_weights",
    "weighted_norm",
    "relative_weighted_error",
    "relative_error",
    "discretize",
    "resample",
]


class GridKind(enum.IntEnum):
    """Coordinate mapping used to place cell edges.

    The integer values are the on-disk codes of the FCPD dataset format.
    """

    UNIFORM = 0
    CLUSTERED_CENTER = 1
    CLUSTERED_BOUNDARY = 2
    EXPLICIT = 3

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().upper().replace("-", "_")
            aliases = {"CENTER": "CLUSTERED_CENTER", "BOUNDARY": "CLUSTERED_BOUNDARY"}
            key = aliases.get(key, key)
            try:
                return cls[key]
            except KeyError:
                raise InvalidArgumentError(f"unknown grid kind {value!r}") from None
        try:
            return cls(int(value))
        except ValueError:
            raise InvalidArgumentError(f"unknown grid kind {value!r}") from None


# Mappings T: [-1, 1] -> [0, 1] applied to uniformly spaced parameters.
_MAPPINGS = {
    GridKind.UNIFORM: lambda t: 0.5 * (t + 1.0),
    GridKind.CLUSTERED_CENTER: lambda t: 0.5 * (t**3 + 1.0),
    GridKind.CLUSTERED_BOUNDARY: lambda t: 0.5 * (np.sin(0.5 * np.pi * t) + 1.0),
}


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor-product grid of cells on ``[0, 1]^D``.

    Parameters
    ----------
    edges : sequence of 1-D arrays
        Ascending edge coordinates per axis, starting at 0 and ending at 1.
    kind : GridKind
        How the edges were produced. Only informational, except that
        :attr:`GridKind.UNIFORM` grids are relied on by spectral code.
    """

    edges: tuple
    kind: GridKind = GridKind.EXPLICIT
    _weights: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self):
        if len(self.edges) < 1:
            raise InvalidArgumentError("a grid needs at least one axis")
        edges = []
        for axis, e in enumerate(self.edges):
            e = np.asarray(e, dtype=np.float64)
            if e.ndim != 1 or e.size < 2:
                raise InvalidArgumentError(f"axis {axis}: need at least one cell (two edges)")
            if not np.all(np.isfinite(e)):
                raise InvalidArgumentError(f"axis {axis}: non-finite edge coordinates")
            if e[0] != 0.0 or e[-1] != 1.0:
                raise InvalidArgumentError(
                    f"axis {axis}: edges must start at 0 and end at 1, got {e[0]!r}..{e[-1]!r}"
                )
            if np.any(np.diff(e) <= 0):
                raise InvalidArgumentError(f"axis {axis}: edges must be strictly increasing")
            edges.append(_readonly(e))
        object.__setattr__(self, "edges", tuple(edges))
        object.__setattr__(self, "kind", GridKind.parse(self.kind))

        w = np.ones(())
        for e in edges:
            w = np.multiply.outer(w, np.diff(e))
        object.__setattr__(self, "_weights", _readonly(w.ravel()))

    @property
    def dim(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> tuple[int, ...]:
        """Cell counts per axis."""
        return tuple(e.size - 1 for e in self.edges)

    @property
    def size(self) -> int:
        """Total number of cells."""
        return math.prod(self.shape)

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinates per axis."""
        return tuple(0.5 * (e[1:] + e[:-1]) for e in self.edges)

    @property
    def spacings(self) -> tuple[np.ndarray, ...]:
        return tuple(np.diff(e) for e in self.edges)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Center coordinates broadcast to the full grid shape (``ij`` indexing)."""
        return tuple(np.meshgrid(*self.centers, indexing="ij"))

    @property
    def is_uniform(self) -> bool:
        if self.kind == GridKind.UNIFORM:
            return True
        return all(np.allclose(np.diff(e), 1.0 / (e.size - 1), rtol=0, atol=1e-14) for e in self.edges)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.kind == other.kind and len(self.edges) == len(other.edges) and all(
            np.array_equal(a, b) for a, b in zip(self.edges, other.edges)
        )

    def __hash__(self):
        return hash((int(self.kind), tuple(e.tobytes() for e in self.edges)))

    def __repr__(self):
        return f"Grid(kind={self.kind.name}, shape={self.shape})"


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples at the cell centers of a grid, flat in row-major order."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape == self.grid.shape:
            v = v.ravel()
        if v.ndim != 1 or v.size != self.grid.size:
            raise InvalidArgumentError(
                f"field has {v.size} values, grid {self.grid.shape} has {self.grid.size} cells"
            )
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise NumericError(f"non-finite field value at flat index {bad}")
        object.__setattr__(self, "values", _readonly(v))

    def as_array(self) -> np.ndarray:
        """Values reshaped to the grid shape (a read-only view)."""
        return self.values.reshape(self.grid.shape)

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)

    def _check(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise InvalidArgumentError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._check(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._check(other))

    def __rsub__(self, other):
        return Field(self.grid, self._check(other) - self.values)

    def __mul__(self, c):
        return Field(self.grid, self.values * self._check(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return Field(self.grid, self.values / self._check(c))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __repr__(self):
        return f"Field(grid={self.grid!r})"


def make_grid(kind, cell_counts) -> Grid:
    """Build a grid whose edges are mapped images of uniform parameters.

    For each axis with ``N`` cells, ``N + 1`` parameters are spaced uniformly in
    ``[-1, 1]`` and mapped by the geometry's ``T`` onto ``[0, 1]``:

    - uniform: ``T(t) = (t + 1) / 2``
    - clustered center: ``T(t) = (t**3 + 1) / 2``
    - clustered boundary: ``T(t) = (sin(pi t / 2) + 1) / 2``

    Parameters
    ----------
    kind : GridKind or str
    cell_counts : int or sequence of int
        Cells per axis. An int gives a 1-D grid.
    """
    kind = GridKind.parse(kind)
    if kind == GridKind.EXPLICIT:
        raise InvalidArgumentError("explicit grids are built with Grid(edges) directly")
    if np.isscalar(cell_counts):
        cell_counts = (cell_counts,)
    counts = []
    for n in cell_counts:
        if int(n) != n or n < 1:
            raise InvalidArgumentError(f"cell counts must be integers >= 1, got {n!r}")
        counts.append(int(n))
    if not counts:
        raise InvalidArgumentError("need at least one axis")
    mapping = _MAPPINGS[kind]
    edges = []
    for n in counts:
        e = mapping(np.linspace(-1.0, 1.0, n + 1))
        e[0], e[-1] = 0.0, 1.0
        edges.append(e)
    return Grid(tuple(edges), kind)


def quadrature_weights(grid: Grid) -> np.ndarray:
    """Cell volumes in field order; they sum to one."""
    return grid.weights


def weighted_norm(field: Field) -> float:
    """Quadrature-weighted L2 norm ``sqrt(sum_j w_j v_j**2)``."""
    return float(np.sqrt(np.dot(field.grid.weights, field.values**2)))


def relative_weighted_error(pred: Field, truth: Field) -> float:
    """``||pred - truth||_w / ||pred||_w``.

    Raises
    ------
    DegenerateDenominatorError
        If the prediction has zero weighted norm.
    """
    if pred.grid != truth.grid:
        raise InvalidArgumentError("prediction and truth live on different grids")
    w = pred.grid.weights
    denom = np.dot(w, pred.values**2)
    if denom == 0.0:
        raise DegenerateDenominatorError("prediction has zero weighted norm")
    diff = pred.values - truth.values
    return float(np.sqrt(np.dot(w, diff**2) / denom))


def relative_error(pred: Field, truth: Field) -> float:
    """Unweighted relative L2 error ``||pred - truth||_2 / ||pred||_2``.

    This is the grid-blind baseline; on uniform grids it coincides with
    :func:`relative_weighted_error`.
    """
    if pred.grid != truth.grid:
        raise InvalidArgumentError("prediction and truth live on different grids")
    denom = np.dot(pred.values, pred.values)
    if denom == 0.0:
        raise DegenerateDenominatorError("prediction has zero norm")
    diff = pred.values - truth.values
    return float(np.sqrt(np.dot(diff, diff) / denom))


def discretize(f: Callable[..., np.ndarray], grid: Grid) -> Field:
    """Sample ``f`` at cell centers.

    ``f`` is called once with ``D`` coordinate arrays of the grid shape and must
    broadcast over them (scalars are accepted).
    """
    values = np.broadcast_to(np.asarray(f(*grid.mesh()), dtype=np.float64), grid.shape)
    flat = values.ravel()
    if not np.all(np.isfinite(flat)):
        bad = int(np.flatnonzero(~np.isfinite(flat))[0])
        raise NumericError(f"function is not finite at cell {np.unravel_index(bad, grid.shape)} (flat index {bad})")
    return Field(grid, flat.copy())


def _interp_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Linear interpolation matrix from ``src`` nodes to ``dst`` points.

    Points outside ``[src[0], src[-1]]`` take the nearest node's value.
    """
    m = np.zeros((dst.size, src.size))
    if src.size == 1:
        m[:, 0] = 1.0
        return m
    x = np.clip(dst, src[0], src[-1])
    i = np.clip(np.searchsorted(src, x, side="right") - 1, 0, src.size - 2)
    t = (x - src[i]) / (src[i + 1] - src[i])
    rows = np.arange(dst.size)
    m[rows, i] = 1.0 - t
    m[rows, i + 1] += t
    return m


def resample(field: Field, target: Grid) -> Field:
    """Multilinear interpolation between cell centers of two grids.

    Exact for affine functions at target centers inside the hull of the source
    centers; outside the hull the nearest source cell is used per axis.
    """
    src = field.grid
    if src.dim != target.dim:
        raise InvalidArgumentError(f"dimension mismatch: {src.dim} vs {target.dim}")
    if src == target:
        return Field(target, field.values)
    a = field.as_array()
    for axis, (cs, ct) in enumerate(zip(src.centers, target.centers)):
        m = _interp_matrix(cs, ct)
        a = np.moveaxis(np.tensordot(m, a, axes=([1], [axis])), 0, axis)
    return Field(target, a.ravel())
