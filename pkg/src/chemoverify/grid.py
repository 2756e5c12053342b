"""
Cell-centered uniform grids on intervals and rectangles.

Fields are plain numpy arrays whose shape equals ``Grid.shape``. All
quadratures are midpoint rules with the uniform cell measure ``w``, and the
Neumann Laplacian is the finite-volume stencil with zero flux through the
boundary faces (equivalently, reflected ghost cells). That stencil has zero
column sums, so ``integrate(laplacian_neumann(f))`` vanishes identically.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import GridError

MIN_CELLS = 3


@dataclass(frozen=True)
class Grid:
    dimension: int
    lower: tuple[float, ...]
    extent: tuple[float, ...]
    cells: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @cached_property
    def h(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extent, self.cells))

    @property
    def h_max(self) -> float:
        return max(self.h)

    @property
    def h_min(self) -> float:
        return min(self.h)

    @cached_property
    def w(self) -> float:
        """Measure of one cell (length in 1D, area in 2D)."""
        return float(np.prod(self.h))

    @cached_property
    def measure(self) -> float:
        return float(np.prod(self.extent))

    def axes(self) -> list[np.ndarray]:
        """Cell-center coordinates along each axis."""
        return [lo + (np.arange(n) + 0.5) * h for lo, n, h in zip(self.lower, self.cells, self.h)]

    def coordinates(self) -> list[np.ndarray]:
        """Cell-center coordinates broadcast to the field shape, one array per axis."""
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def field(self, fill: float = 0.0) -> np.ndarray:
        return np.full(self.shape, float(fill))

    def evaluate(self, fn) -> np.ndarray:
        """Sample ``fn(x)`` / ``fn(x, y)`` at cell centers."""
        return np.asarray(fn(*self.coordinates()), dtype=float) * np.ones(self.shape)


def build_grid(dimension: int, extent, cells) -> Grid:
    """Build a uniform cell-centered grid.

    ``extent`` per axis is either a length ``L`` (meaning ``[0, L]``) or a
    ``(lo, hi)`` pair; ``cells`` is an int or one int per axis.
    """
    if dimension not in (1, 2):
        raise GridError(f"dimension must be 1 or 2, got {dimension}")
    if dimension == 1 and (np.isscalar(extent) or _is_pair(extent)):
        extent = [extent]
    if np.isscalar(cells):
        cells = [cells] * dimension
    extent = list(extent)
    cells = list(cells)
    if len(extent) != dimension or len(cells) != dimension:
        raise GridError(f"need {dimension} extents and cell counts, got {len(extent)} and {len(cells)}")
    lower, lengths = [], []
    for e in extent:
        if np.isscalar(e):
            lo, hi = 0.0, float(e)
        else:
            lo, hi = (float(x) for x in e)
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi - lo <= 0:
            raise GridError(f"extent must be positive, got {e!r}")
        lower.append(lo)
        lengths.append(hi - lo)
    ncells = []
    for n in cells:
        if int(n) != n or n < MIN_CELLS:
            raise GridError(f"cells >= {MIN_CELLS} required per axis, got {n}")
        ncells.append(int(n))
    return Grid(dimension, tuple(lower), tuple(lengths), tuple(ncells))


def _is_pair(e) -> bool:
    return isinstance(e, (tuple, list)) and len(e) == 2 and all(np.isscalar(x) for x in e)


def _check(f: np.ndarray, g: Grid) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != g.shape:
        raise GridError(f"field shape {f.shape} does not match grid {g.shape}")
    return f


def laplacian_neumann(f: np.ndarray, g: Grid) -> np.ndarray:
    f = _check(f, g)
    out = np.zeros_like(f)
    for axis, h in enumerate(g.h):
        flux = np.diff(f, axis=axis) / (h * h)
        lo = [slice(None)] * f.ndim
        hi = [slice(None)] * f.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        out[tuple(lo)] += flux
        out[tuple(hi)] -= flux
    return out


def face_gradients(f: np.ndarray, g: Grid) -> list[np.ndarray]:
    """Difference quotients on interior faces, one array per axis."""
    f = _check(f, g)
    return [np.diff(f, axis=axis) / h for axis, h in enumerate(g.h)]


def max_face_gradient(f: np.ndarray, g: Grid) -> float:
    return max(float(np.max(np.abs(d))) for d in face_gradients(f, g))


def integrate(f: np.ndarray, g: Grid) -> float:
    return float(np.sum(_check(f, g)) * g.w)


def inner(f: np.ndarray, q: np.ndarray, g: Grid) -> float:
    """w-weighted inner product."""
    return float(np.sum(_check(f, g) * _check(q, g)) * g.w)


def sup_norm(f: np.ndarray) -> float:
    """Largest cell value (not the absolute value: fields here are nonnegative)."""
    return float(np.max(f))


def inf_val(f: np.ndarray) -> float:
    return float(np.min(f))


def grad_norm_sq(v: np.ndarray, g: Grid) -> float:
    """Face quadrature of |grad v|^2; boundary faces carry zero flux."""
    return sum(float(np.sum(d * d)) for d in face_gradients(v, g)) * g.w


def h1_energy(v: np.ndarray, g: Grid) -> float:
    """(||grad_h v||^2 + ||v||^2) / 2."""
    v = _check(v, g)
    return 0.5 * (grad_norm_sq(v, g) + float(np.sum(v * v)) * g.w)


def laplacian_matrix(g: Grid):
    """Sparse matrix of ``laplacian_neumann`` acting on C-order flattened fields."""
    import scipy.sparse as sp

    def lap1d(n: int, h: float):
        main = np.full(n, -2.0)
        main[0] = main[-1] = -1.0
        off = np.ones(n - 1)
        return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (h * h)

    if g.dimension == 1:
        return lap1d(g.cells[0], g.h[0])
    nx, ny = g.cells
    Lx = lap1d(nx, g.h[0])
    Ly = lap1d(ny, g.h[1])
    return (sp.kron(Lx, sp.identity(ny)) + sp.kron(sp.identity(nx), Ly)).tocsr()
