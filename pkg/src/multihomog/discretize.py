"""Conservative flux-form finite differences on uniform grids.

Unknowns live on nodes. Gradients are differences on faces (staggered flux
grid); the diagonal coefficient entries are sampled at face midpoints and
the off-diagonal entries at cell centres, where the transverse gradient is
the average of the two adjacent face differences.  The resulting bilinear
form

    a_h(u, v) = sum_xfaces A11 D1u D1v + sum_yfaces A22 D2u D2v
              + sum_cells (A12 G2u G1v + A21 G1u G2v)        (times h^d)

is symmetric whenever A is, and reduces to the classical three/five point
stencil for diagonal A.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence

DEFAULT_TOL = 1e-10
DEFAULT_MAXITER = 100_000


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``cells`` cells per axis starting at ``lower``.

    Periodic grids carry ``cells`` nodes per axis (the last node wraps to
    the first); Dirichlet grids carry ``cells + 1`` nodes including the
    boundary.
    """

    lower: tuple[float, ...]
    cells: int
    h: float
    periodic: bool = False

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def nodes_per_axis(self) -> int:
        return self.cells if self.periodic else self.cells + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.nodes_per_axis**self.dim

    def axis(self, k: int = 0) -> np.ndarray:
        return self.lower[k] + self.h * np.arange(self.nodes_per_axis)

    def face_axis(self, k: int = 0) -> np.ndarray:
        return self.lower[k] + self.h * (np.arange(self.cells) + 0.5)

    def _points(self, *axes) -> np.ndarray:
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node_points(self) -> np.ndarray:
        return self._points(*(self.axis(k) for k in range(self.dim)))

    def xface_points(self) -> np.ndarray:
        if self.dim == 1:
            return self.face_axis(0)[:, None]
        return self._points(self.face_axis(0), self.axis(1))

    def yface_points(self) -> np.ndarray:
        return self._points(self.axis(0), self.face_axis(1))

    def cell_points(self) -> np.ndarray:
        return self._points(*(self.face_axis(k) for k in range(self.dim)))

    def boundary_mask(self) -> np.ndarray:
        if self.periodic:
            return np.zeros(self.shape, dtype=bool)
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask


def unit_grid(dim: int, cells: int, periodic: bool = False, lower=None, length: float = 1.0) -> Grid:
    lower = tuple([0.0] * dim) if lower is None else tuple(float(v) for v in lower)
    return Grid(lower=lower, cells=int(cells), h=length / cells, periodic=periodic)


# ------------------------------------------------------------ operators


def _diff_1d(N: int, h: float, periodic: bool) -> sp.csr_matrix:
    cols = N if periodic else N + 1
    rows = np.arange(N)
    right = (rows + 1) % cols
    data = np.concatenate([-np.ones(N), np.ones(N)]) / h
    return sp.csr_matrix((data, (np.concatenate([rows, rows]), np.concatenate([rows, right]))), shape=(N, cols))


def _avg_1d(N: int, periodic: bool) -> sp.csr_matrix:
    cols = N if periodic else N + 1
    rows = np.arange(N)
    right = (rows + 1) % cols
    data = np.full(2 * N, 0.5)
    return sp.csr_matrix((data, (np.concatenate([rows, rows]), np.concatenate([rows, right]))), shape=(N, cols))


@dataclass
class FluxOperators:
    grid: Grid
    D1: sp.csr_matrix
    D2: sp.csr_matrix | None = None
    G1: sp.csr_matrix | None = None
    G2: sp.csr_matrix | None = None


def flux_operators(grid: Grid) -> FluxOperators:
    N, h, per = grid.cells, grid.h, grid.periodic
    d = _diff_1d(N, h, per)
    if grid.dim == 1:
        return FluxOperators(grid, d)
    m = _avg_1d(N, per)
    eye = sp.identity(grid.nodes_per_axis, format="csr")
    D1 = sp.kron(d, eye, format="csr")
    D2 = sp.kron(eye, d, format="csr")
    G1 = sp.kron(d, m, format="csr")
    G2 = sp.kron(m, d, format="csr")
    return FluxOperators(grid, D1, D2, G1, G2)


@dataclass
class FaceCoefficients:
    """Coefficient samples at the locations the stencil needs."""

    a11: np.ndarray  # x-faces
    a22: np.ndarray | None = None  # y-faces
    a12: np.ndarray | None = None  # cells
    a21: np.ndarray | None = None  # cells

    @property
    def symmetric(self) -> bool:
        if self.a12 is None:
            return True
        return bool(np.allclose(self.a12, self.a21, rtol=0, atol=1e-14))

    @property
    def has_cross(self) -> bool:
        return self.a12 is not None and (np.any(self.a12 != 0) or np.any(self.a21 != 0))

    def minimum(self) -> float:
        vals = [self.a11.min()] + ([] if self.a22 is None else [self.a22.min()])
        return float(min(vals))


def sample_coefficients(grid: Grid, field: Callable[[np.ndarray], np.ndarray]) -> FaceCoefficients:
    """Sample ``field(points (P, d)) -> (P, d, d)`` at faces and cell centres."""
    if grid.dim == 1:
        return FaceCoefficients(a11=field(grid.xface_points())[:, 0, 0])
    ax = field(grid.xface_points())
    ay = field(grid.yface_points())
    ac = field(grid.cell_points())
    return FaceCoefficients(a11=ax[:, 0, 0], a22=ay[:, 1, 1], a12=ac[:, 0, 1], a21=ac[:, 1, 0])


def assemble(ops: FluxOperators, coef: FaceCoefficients) -> sp.csr_matrix:
    K = ops.D1.T @ sp.diags(coef.a11) @ ops.D1
    if ops.grid.dim == 2:
        K = K + ops.D2.T @ sp.diags(coef.a22) @ ops.D2
        if coef.has_cross:
            K = K + ops.G1.T @ sp.diags(coef.a12) @ ops.G2 + ops.G2.T @ sp.diags(coef.a21) @ ops.G1
    return K.tocsr()


def flux_divergence(ops: FluxOperators, f1, f2=None, c1=None, c2=None) -> np.ndarray:
    """``D1^T f1 + D2^T f2 + G1^T c1 + G2^T c2``: the weak divergence adjoint.

    ``f1``/``f2`` are face samples, ``c1``/``c2`` cell samples of the two
    flux components. The result is minus the discrete divergence.
    """
    out = ops.D1.T @ f1
    if f2 is not None:
        out = out + ops.D2.T @ f2
    if c1 is not None:
        out = out + ops.G1.T @ c1
    if c2 is not None:
        out = out + ops.G2.T @ c2
    return out


# --------------------------------------------------------- preconditioners


def fft_preconditioner(grid: Grid, c: tuple[float, ...]) -> Callable[[np.ndarray], np.ndarray]:
    """Exact inverse of the constant-coefficient periodic operator (mean removed)."""
    N, h = grid.cells, grid.h
    lam1 = 4.0 / h**2 * np.sin(np.pi * np.arange(N) / N) ** 2
    if grid.dim == 1:
        lam = c[0] * lam1
    else:
        lam = c[0] * lam1[:, None] + c[1] * lam1[None, :]
    inv = np.zeros_like(lam)
    inv[lam > 0] = 1.0 / lam[lam > 0]
    shape = grid.shape

    def apply(r):
        rh = scipy.fft.fftn(r.reshape(shape))
        return np.real(scipy.fft.ifftn(rh * inv)).ravel()

    return apply


def dst_preconditioner(cells: int, h: float, dim: int, c: tuple[float, ...]) -> Callable[[np.ndarray], np.ndarray]:
    """Exact inverse of the constant-coefficient Dirichlet operator on interior nodes."""
    M = cells - 1
    lam1 = 4.0 / h**2 * np.sin(np.pi * np.arange(1, M + 1) / (2 * cells)) ** 2
    if dim == 1:
        lam = c[0] * lam1
    else:
        lam = c[0] * lam1[:, None] + c[1] * lam1[None, :]
    inv = 1.0 / lam
    shape = (M,) * dim

    def apply(r):
        rh = scipy.fft.dstn(r.reshape(shape), type=1, norm="ortho")
        return scipy.fft.idstn(rh * inv, type=1, norm="ortho").ravel()

    return apply


# ------------------------------------------------------------------ solvers


BACKWARD_TOL = 1e-14


@dataclass
class SolveInfo:
    iterations: int
    residual: float  # relative residual ||b - K x|| / ||b||
    method: str
    backward_error: float = 0.0


def backward_error(K, x: np.ndarray, b: np.ndarray) -> float:
    """Normwise backward error ||b - Kx|| / (||K|| ||x|| + ||b||) in the max norm.

    For fine grids cond(K) ~ h^-2 and the relative residual has a round-off
    floor far above machine precision; the backward error does not.
    """
    normK = float(abs(K).sum(axis=1).max())
    denom = normK * np.max(np.abs(x)) + np.max(np.abs(b))
    return float(np.max(np.abs(b - K @ x)) / denom) if denom else 0.0


def converged(info: SolveInfo, tol: float) -> bool:
    return info.residual <= tol or info.backward_error <= BACKWARD_TOL


def pcg(K, b: np.ndarray, precond=None, tol: float = DEFAULT_TOL, maxiter: int = DEFAULT_MAXITER,
        x0=None, zero_mean: bool = False) -> tuple[np.ndarray, SolveInfo]:
    """Preconditioned conjugate gradients for symmetric positive (semi)definite K.

    With ``zero_mean`` the iteration is kept orthogonal to constants, which
    is the kernel of the periodic operator.
    """
    def project(v):
        return v - v.mean() if zero_mean else v

    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else project(np.array(x0, dtype=float))
    if bnorm == 0.0:
        return x, SolveInfo(0, 0.0, "pcg")
    r = project(b - K @ x)
    z = project(precond(r)) if precond else r.copy()
    d = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        Kd = K @ d
        alpha = rz / (d @ Kd)
        x += alpha * d
        r -= alpha * Kd
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            xp = project(x)
            r_true = project(b - K @ xp)
            info = SolveInfo(k, float(np.linalg.norm(r_true) / bnorm), "pcg", backward_error(K, xp, b))
            if converged(info, tol):
                return xp, info
            r = r_true
        z = project(precond(r)) if precond else r.copy()
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise NoConvergence(f"PCG did not reach {tol:g} in {maxiter} iterations (residual {res:.3g})")


def gmres_solve(K, b, precond=None, tol: float = DEFAULT_TOL, maxiter: int = DEFAULT_MAXITER,
                zero_mean: bool = False) -> tuple[np.ndarray, SolveInfo]:
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveInfo(0, 0.0, "gmres")
    M = spla.LinearOperator((n, n), matvec=precond) if precond else None
    count = [0]

    def callback(_):
        count[0] += 1

    restart = 60
    x, info = spla.gmres(K, b, M=M, rtol=tol * 0.5, atol=0.0, restart=restart,
                         maxiter=max(1, maxiter // restart), callback=callback, callback_type="pr_norm")
    if zero_mean:
        x = x - x.mean()
    out = SolveInfo(count[0], float(np.linalg.norm(b - K @ x) / bnorm), "gmres", backward_error(K, x, b))
    if not converged(out, tol):
        raise NoConvergence(f"GMRES did not reach {tol:g} (residual {out.residual:.3g}, info={info})")
    return x, out


def krylov(K, b, precond, symmetric: bool, tol=DEFAULT_TOL, maxiter=DEFAULT_MAXITER, zero_mean=False):
    if symmetric:
        return pcg(K, b, precond, tol, maxiter, zero_mean=zero_mean)
    return gmres_solve(K, b, precond, tol, maxiter, zero_mean=zero_mean)
