"""Periodic corrector cell problems and effective matrices.

For a kernel A(y) on the torus the corrector chi_j solves

    -div_y(A grad chi_j) = div_y(A e_j),   chi_j periodic, mean zero,

and the effective matrix is the cell average of A (I + grad chi).  In one
dimension both have closed forms (harmonic mean, chi' = a_hat/a - 1); in two
dimensions the problem is discretised with the flux-form scheme of
:mod:`multihomog.discretize` and solved by FFT-preconditioned CG.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .coefficients import MultiscaleCoefficient
from .discretize import (
    DEFAULT_TOL,
    assemble,
    fft_preconditioner,
    flux_divergence,
    flux_operators,
    krylov,
    sample_coefficients,
    unit_grid,
)
from .errors import InvalidInput, NonElliptic

MEAN_ZERO_TOL = 1e-8


@dataclass
class CorrectorField:
    """Samples of chi_j (``values[j]``) and grad chi_j (``gradient[j]``) on
    the periodic grid ``y_k = k h``."""

    h: float
    values: np.ndarray  # (d, *grid)
    gradient: np.ndarray  # (d, d, *grid); gradient[j, i] = d chi_j / d y_i
    mean_residual: np.ndarray  # (d,)
    weak_residual: float = 0.0
    energy: np.ndarray | None = None  # ||grad chi_j||_{L2(Y)}

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def energy_norm(self) -> float:
        """||grad chi||_{L2(Y)} over all j."""
        if self.energy is not None:
            return float(np.sqrt(np.sum(self.energy**2)))
        return float(np.sqrt(np.mean(np.sum(self.gradient**2, axis=(0, 1)))))


@dataclass
class EffectiveMatrix:
    value: np.ndarray
    h: float | None = None
    tol: float | None = None
    iterations: tuple[int, ...] = ()

    def min_rayleigh(self, n_samples: int = 1000, seed=0) -> float:
        d = self.value.shape[0]
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal((n_samples, d))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        return float(np.min(np.einsum("pi,ij,pj->p", xi, self.value, xi)))


def _as_scalar_function(a) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(a, MultiscaleCoefficient):
        if a.n != 1 or a.dim != 1:
            raise InvalidInput("solve_cell_1d needs a single-slot scalar kernel")
        return lambda y: a(np.asarray(y, dtype=float).reshape(-1, 1, 1))[:, 0, 0]
    return lambda y: np.broadcast_to(np.asarray(a(np.asarray(y, dtype=float)), dtype=float),
                                     np.shape(y))


def solve_cell_1d(a, cells: int = 1024, pieces: int = 1, probe: int = 4096):
    """Harmonic-mean effective coefficient and corrector of a 1-periodic ``a``.

    ``pieces`` splits [0, 1] for the adaptive quadrature, which helps when
    ``a`` oscillates many times per cell.  Returns ``(CorrectorField,
    EffectiveMatrix)``.
    """
    fn = _as_scalar_function(a)
    samples = fn((np.arange(probe) + 0.5) / probe)
    if np.min(samples) <= 0 or not np.all(np.isfinite(samples)):
        raise NonElliptic(f"coefficient not positive: min sample {np.min(samples):.3g}")
    h = 1.0 / cells
    y = np.arange(cells) * h
    if np.ptp(samples) == 0.0 and np.ptp(fn(y)) == 0.0:
        ahat = float(samples[0])
        zero = np.zeros((1, cells))
        field_ = CorrectorField(h=h, values=zero, gradient=zero[None], mean_residual=np.zeros(1),
                                energy=np.zeros(1))
        return field_, EffectiveMatrix(np.array([[ahat]]), h=None, tol=0.0)

    def inv(t):
        return 1.0 / fn(np.atleast_1d(t))[0]

    edges = np.linspace(0.0, 1.0, pieces + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(inv, lo, hi, epsabs=1e-15, epsrel=1e-13, limit=400)
        total += val
    ahat = 1.0 / total

    # cumulative integral of chi' = ahat/a - 1 with 5-point Gauss per cell
    nodes, weights = np.polynomial.legendre.leggauss(5)
    pts = y[:, None] + 0.5 * h * (nodes[None, :] + 1.0)
    incr = 0.5 * h * ((ahat / fn(pts.ravel()).reshape(pts.shape) - 1.0) @ weights)
    chi = np.concatenate([[0.0], np.cumsum(incr)[:-1]])
    chi -= chi.mean()
    grad = ahat / fn(y) - 1.0
    # ||chi'||^2 = ahat^2 <1/a^2> - 1 by quadrature of the same closed form
    sq, _ = integrate.quad(lambda t: (ahat * inv(t) - 1.0) ** 2, 0.0, 1.0, limit=400 * pieces)
    energy = np.array([math.sqrt(sq)])
    field_ = CorrectorField(h=h, values=chi[None], gradient=grad[None, None],
                            mean_residual=np.array([abs(chi.mean())]), energy=energy)
    return field_, EffectiveMatrix(np.array([[ahat]]), h=None, tol=1e-13)


def _as_matrix_function(A):
    if isinstance(A, MultiscaleCoefficient):
        if A.n != 1 or A.dim != 2:
            raise InvalidInput("solve_cell_2d needs a single-slot 2x2 kernel")
        return lambda pts: A(pts[:, None, :])
    return A


def solve_cell_2d(A, h: float, tol: float = DEFAULT_TOL, maxiter: int = 100_000):
    """Discrete periodic correctors and effective matrix of a 2x2 kernel.

    ``A(points (P, 2)) -> (P, 2, 2)`` or a single-slot coefficient. ``h``
    must divide 1.
    """
    fn = _as_matrix_function(A)
    cells = int(round(1.0 / h))
    if cells < 4 or abs(cells * h - 1.0) > 1e-12:
        raise InvalidInput(f"h={h} must divide 1 into at least 4 cells")
    grid = unit_grid(2, cells, periodic=True)
    coef = sample_coefficients(grid, fn)
    Ac = fn(grid.cell_points())
    sym = 0.5 * (Ac + np.swapaxes(Ac, 1, 2))
    if coef.minimum() <= 0 or np.min(np.linalg.eigvalsh(sym)) <= 0:
        raise NonElliptic("kernel is not positive definite on the grid")
    ops = flux_operators(grid)
    K = assemble(ops, coef)
    precond = fft_preconditioner(grid, (float(coef.a11.mean()), float(coef.a22.mean())))
    symmetric = coef.symmetric
    shape = grid.shape
    values = np.zeros((2,) + shape)
    gradient = np.zeros((2, 2) + shape)
    means = np.zeros(2)
    energy = np.zeros(2)
    ahat = np.zeros((2, 2))
    iters = []
    worst = 0.0
    for j in range(2):
        g = np.zeros(2)
        g[j] = 1.0
        rhs = -flux_divergence(ops, coef.a11 * g[0], coef.a22 * g[1], coef.a12 * g[1], coef.a21 * g[0])
        chi, info = krylov(K, rhs, precond, symmetric, tol, maxiter, zero_mean=True)
        iters.append(info.iterations)
        worst = max(worst, info.residual)
        d1 = ops.D1 @ chi + g[0]
        d2 = ops.D2 @ chi + g[1]
        c1 = ops.G1 @ chi + g[0]
        c2 = ops.G2 @ chi + g[1]
        ahat[0, j] = np.mean(coef.a11 * d1) + np.mean(coef.a12 * c2)
        ahat[1, j] = np.mean(coef.a22 * d2) + np.mean(coef.a21 * c1)
        u = chi.reshape(shape)
        values[j] = u
        gradient[j, 0] = (np.roll(u, -1, axis=0) - np.roll(u, 1, axis=0)) / (2 * h)
        gradient[j, 1] = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2 * h)
        means[j] = abs(u.mean())
        energy[j] = math.sqrt(np.mean((d1 - g[0]) ** 2) + np.mean((d2 - g[1]) ** 2))
    field_ = CorrectorField(h=h, values=values, gradient=gradient, mean_residual=means,
                            weak_residual=worst, energy=energy)
    return field_, EffectiveMatrix(ahat, h=h, tol=tol, iterations=tuple(iters))


# ------------------------------------------------------ reiterated problems


def slow_lattice(coords: int, points_per_axis: int) -> np.ndarray:
    """Regular lattice on [0,1)^coords, shape (points_per_axis**coords, coords)."""
    axis = np.arange(points_per_axis) / points_per_axis
    mesh = np.meshgrid(*([axis] * coords), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1) if coords else np.zeros((1, 0))


@dataclass
class ReiteratedTable:
    """Effective matrices (and optionally correctors) per slow point."""

    slow_points: np.ndarray  # (S, n-1, cell_dim)
    matrices: np.ndarray  # (S, d, d)
    h: float
    correctors: list | None = None
    lattice: int | None = None  # points per axis when slow_points is a regular lattice
    _interp: Callable | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def interpolator(self) -> Callable[[np.ndarray], np.ndarray]:
        """Periodic cubic interpolant of the matrices over the slow torus."""
        if self._interp is not None:
            return self._interp
        if self.lattice is None:
            raise InvalidInput("interpolation needs a regular slow lattice")
        S, m, cd = self.slow_points.shape
        k = m * cd
        L = self.lattice
        d = self.dim
        if k == 0:
            const = self.matrices[0]
            self._interp = lambda z: np.broadcast_to(const, (np.shape(z)[0], d, d)).copy()
            return self._interp
        vals = self.matrices.reshape((L,) * k + (d, d))
        axis = np.arange(L) / L
        if k == 1:
            ext = np.concatenate([vals, vals[:1]], axis=0)
            spline = CubicSpline(np.append(axis, 1.0), ext, bc_type="periodic", axis=0)
            self._interp = lambda z: spline(np.mod(np.asarray(z).reshape(-1), 1.0))
            return self._interp
        pad = 3
        ext_axis = np.arange(-pad, L + pad) / L
        ext = vals
        for ax in range(k):
            ext = np.take(ext, np.arange(-pad, L + pad) % L, axis=ax)
        rgi = RegularGridInterpolator((ext_axis,) * k, ext, method="cubic")
        self._interp = lambda z: rgi(np.mod(np.asarray(z).reshape(-1, k), 1.0))
        return self._interp

    def __call__(self, slow: np.ndarray) -> np.ndarray:
        return self.interpolator()(slow)


def _cell_kernel(coef: MultiscaleCoefficient, z: np.ndarray):
    cd = coef.cell_dim

    def kernel(pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, cd)
        P = pts.shape[0]
        ys = np.empty((P, coef.n, cd))
        ys[:, : coef.n - 1, :] = z[None]
        ys[:, -1, :] = pts
        return coef(ys)

    return kernel


def reiterated_effective(coef: MultiscaleCoefficient, slow_points, h: float, threads: int = 1,
                         keep_correctors: bool = False, lattice: int | None = None,
                         tol: float = DEFAULT_TOL) -> ReiteratedTable:
    """Solve the cell problem in the finest slot at each slow point.

    ``slow_points`` has shape ``(S, n-1, cell_dim)`` (a flat ``(S,)`` array
    is accepted when n = 2 and d = 1).  The returned matrices sample the
    reduced kernel over the slow torus.
    """
    if coef.cell_dim != coef.dim:
        raise InvalidInput("reiterated_effective needs cell_dim == dim")
    d = coef.dim
    pts = np.asarray(slow_points, dtype=float)
    pts = np.zeros((1, 0, d)) if coef.n == 1 else pts.reshape(-1, coef.n - 1, d)
    cells = int(round(1.0 / h))

    def solve(z):
        kern = _cell_kernel(coef, z)
        if not coef.depends_on(coef.n - 1):
            zero = np.zeros((d,) + (cells,) * d)
            A = kern(np.zeros((1, d)))[0]
            corr = CorrectorField(h=h, values=zero, gradient=np.zeros((d,) + zero.shape),
                                  mean_residual=np.zeros(d), energy=np.zeros(d))
            return corr, EffectiveMatrix(A.copy(), h=h, tol=0.0)
        if d == 1:
            pieces = max(1, int(round(1.0 / (32 * h))))
            return solve_cell_1d(lambda y: kern(np.asarray(y).reshape(-1, 1))[:, 0, 0],
                                 cells=cells, pieces=pieces)
        return solve_cell_2d(kern, h, tol=tol)

    if threads > 1 and len(pts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, pts))
    else:
        results = [solve(z) for z in pts]
    mats = np.stack([r[1].value for r in results])
    return ReiteratedTable(slow_points=pts, matrices=mats, h=h,
                           correctors=[r[0] for r in results] if keep_correctors else None,
                           lattice=lattice)


def reiterated_on_lattice(coef: MultiscaleCoefficient, points_per_axis: int, h: float, threads: int = 1,
                          keep_correctors: bool = False) -> ReiteratedTable:
    m = coef.n - 1
    lat = slow_lattice(m * coef.dim, points_per_axis)
    pts = lat.reshape(-1, m, coef.dim) if m else np.zeros((1, 0, coef.dim))
    return reiterated_effective(coef, pts, h, threads=threads, keep_correctors=keep_correctors,
                                lattice=points_per_axis)
