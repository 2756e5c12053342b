"""
The screened Poisson operator A = I - Delta_h with Neumann conditions.

The assembled matrix is a symmetric M-matrix (positive diagonal, nonpositive
off-diagonals, weak diagonal dominance, strict on every row thanks to the
identity), so its inverse is entrywise positive on a connected grid. That is
the discrete comparison principle the checks below rely on.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.linalg import lapack

from .errors import GridTooLarge, NonConvergence
from .grid import Grid, laplacian_matrix, laplacian_neumann

EPS_ELL = 1e-11
GREEN_MAX_CELLS = 10_000


class HelmholtzOperator:
    """I - Delta_h on a grid, factorized once and reused for every solve.

    ``solver="direct"`` uses a tridiagonal LDL^T factorization in 1D and a
    banded Cholesky factorization in 2D. ``solver="cg"`` runs Jacobi
    preconditioned conjugate gradients (capped at 10 * cells iterations).
    """

    def __init__(self, grid: Grid, solver: str = "direct", tol: float = EPS_ELL):
        if solver not in ("direct", "cg"):
            raise ValueError(f"unknown solver {solver!r}")
        self.grid = grid
        self.solver = solver
        self.tol = tol
        n = grid.size
        self.matrix = (sp.identity(n, format="csr") - laplacian_matrix(grid)).tocsr()
        self.diagonal = self.matrix.diagonal()
        if solver == "direct":
            if grid.dimension == 1:
                d = self.diagonal.copy()
                e = self.matrix.diagonal(1).copy()
                d, e, info = lapack.dpttrf(d, e)
                if info != 0:
                    raise np.linalg.LinAlgError(f"dpttrf failed with info={info}")
                self._ldl = (d, e)
            else:
                band = grid.cells[1]
                ab = np.zeros((band + 1, n))
                ab[0] = self.diagonal
                for k in range(1, band + 1):
                    ab[k, : n - k] = self.matrix.diagonal(k)
                self._chol = la.cholesky_banded(ab, lower=True)
                self._band = band

    def apply(self, v: np.ndarray) -> np.ndarray:
        return v - laplacian_neumann(v, self.grid)

    def solve(self, u: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.grid.shape:
            raise ValueError(f"field shape {u.shape} does not match grid {self.grid.shape}")
        if self.solver == "cg":
            return self._cg(u, x0)
        b = u.reshape(-1)
        if self.grid.dimension == 1:
            x, info = lapack.dpttrs(self._ldl[0], self._ldl[1], b)
            if info != 0:
                raise np.linalg.LinAlgError(f"dpttrs failed with info={info}")
        else:
            x = la.cho_solve_banded((self._chol, True), b, check_finite=False)
        return x.reshape(self.grid.shape)

    def solve_many(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for every column of a (cells, k) right-hand side block."""
        if self.solver == "direct" and self.grid.dimension == 1:
            x, info = lapack.dpttrs(self._ldl[0], self._ldl[1], rhs)
            if info != 0:
                raise np.linalg.LinAlgError(f"dpttrs failed with info={info}")
            return x
        if self.solver == "direct":
            return la.cho_solve_banded((self._chol, True), rhs, check_finite=False)
        return np.column_stack([self._cg(c.reshape(self.grid.shape)).ravel() for c in rhs.T])

    def _cg(self, u: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        A = self.matrix
        b = u.ravel()
        scale = float(np.max(np.abs(b)))
        if scale == 0.0:
            return np.zeros_like(u)
        target = self.tol * scale
        inv_diag = 1.0 / self.diagonal
        x = b * inv_diag if x0 is None else x0.ravel().astype(float).copy()
        r = b - A @ x
        z = inv_diag * r
        p = z.copy()
        rz = float(r @ z)
        for _ in range(10 * b.size):
            # stop a little below the contract so the residual survives roundoff in x
            if float(np.max(np.abs(r))) <= 0.1 * target:
                return x.reshape(u.shape)
            Ap = A @ p
            alpha = rz / float(p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            z = inv_diag * r
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        if float(np.max(np.abs(b - A @ x))) <= target:
            return x.reshape(u.shape)
        raise NonConvergence(f"CG hit its cap of {10 * b.size} iterations")

    def residual(self, v: np.ndarray, u: np.ndarray) -> float:
        """||A v - u||_inf."""
        return float(np.max(np.abs(self.apply(v) - u)))

    def green_matrix(self) -> np.ndarray:
        """Dense inverse: column j solves A x = e_j."""
        n = self.grid.size
        if n > GREEN_MAX_CELLS:
            raise GridTooLarge(f"Green's matrix scan refused for {n} > {GREEN_MAX_CELLS} cells")
        return self.solve_many(np.eye(n))


def solve_A(u: np.ndarray, op: HelmholtzOperator) -> np.ndarray:
    return op.solve(u)


def omega_star_discrete(op: HelmholtzOperator, block: int = 512) -> float:
    """min_ij G_ij / w over the discrete Green's matrix.

    For every nonnegative f with integral m, solve_A(f) >= m * omega by
    linearity. The scan costs one solve per cell, hence the size limit.
    """
    n = op.grid.size
    if n > GREEN_MAX_CELLS:
        raise GridTooLarge(f"Green's matrix scan refused for {n} > {GREEN_MAX_CELLS} cells")
    best = np.inf
    for start in range(0, n, block):
        stop = min(start + block, n)
        rhs = np.zeros((n, stop - start))
        rhs[np.arange(start, stop), np.arange(stop - start)] = 1.0
        best = min(best, float(op.solve_many(rhs).min()))
    return best / op.grid.w


def omega_star_spot(op: HelmholtzOperator) -> float:
    """Corner-column estimate of omega*_h for grids too large for the full scan.

    Not a rigorous bound; the Green's function of a rectangle is smallest
    between opposite corners, so corner columns usually attain the minimum.
    """
    shape = op.grid.shape
    corners = {tuple(c) for c in np.ndindex(*(2,) * len(shape))}
    best = np.inf
    for c in corners:
        idx = tuple(0 if ci == 0 else n - 1 for ci, n in zip(c, shape))
        e = np.zeros(shape)
        e[idx] = 1.0
        best = min(best, float(op.solve(e).min()))
    return best / op.grid.w


def check_elliptic_comparison(f: np.ndarray, g: np.ndarray, op: HelmholtzOperator,
                              tol: float = 1e-10) -> bool:
    """solve_A(f) <= solve_A(g) + tol pointwise (for f <= g)."""
    return bool(np.all(op.solve(f) <= op.solve(g) + tol))


def is_m_matrix(op: HelmholtzOperator) -> bool:
    """Sign pattern and weak diagonal dominance of the assembled matrix."""
    A = op.matrix.tocoo()
    off = A.row != A.col
    if np.any(A.data[off] > 0) or np.any(op.diagonal <= 0):
        return False
    offsum = np.asarray(abs(op.matrix).sum(axis=1)).ravel() - np.abs(op.diagonal)
    return bool(np.all(op.diagonal >= offsum))
