"""Dirichlet problems -div(A grad u) = div f + F on an interval or square."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .coefficients import MultiscaleCoefficient, eval_multiscale, parse_expression
from .discretize import (
    DEFAULT_TOL,
    FaceCoefficients,
    Grid,
    SolveInfo,
    assemble,
    backward_error,
    dst_preconditioner,
    flux_divergence,
    flux_operators,
    krylov,
    sample_coefficients,
    unit_grid,
)
from .errors import InvalidInput, UnresolvedScale
from .rates import fit_rate

DEFAULT_CELLS_PER_SCALE = 16
MIN_CELLS_PER_SCALE = 8


@dataclass(frozen=True)
class GridField:
    """Samples on a uniform grid over a box.

    ``location`` is ``"node"`` (values on the ``cells+1`` nodes per axis,
    boundary included) or ``"cell"`` (values at cell centres). Vector fields
    carry a leading component axis.
    """

    grid: Grid
    values: np.ndarray
    kind: str = "scalar"
    location: str = "node"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def domain(self) -> tuple[tuple[float, float], ...]:
        L = self.grid.cells * self.grid.h
        return tuple((lo, lo + L) for lo in self.grid.lower)

    def axes(self) -> list[np.ndarray]:
        if self.location == "node":
            return [self.grid.axis(k) for k in range(self.dim)]
        return [self.grid.face_axis(k) for k in range(self.dim)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def magnitude_squared(self) -> np.ndarray:
        if self.kind == "vector":
            return np.sum(self.values**2, axis=0)
        return self.values**2

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights for nodes, midpoint weights for cells."""
        h = self.grid.h
        if self.location == "cell":
            return np.full((self.grid.cells,) * self.dim, h**self.dim)
        w1 = np.full(self.grid.cells + 1, h)
        w1[0] = w1[-1] = h / 2
        w = w1
        for _ in range(self.dim - 1):
            w = np.multiply.outer(w, w1)
        return w

    def restrict(self, lower: Sequence[float], cells: int) -> "GridField":
        """Sub-box of ``cells`` cells per axis whose lower corner is a node."""
        offsets = [int(round((lo - g) / self.h)) for lo, g in zip(lower, self.grid.lower)]
        sub = Grid(lower=tuple(self.grid.lower[k] + offsets[k] * self.h for k in range(self.dim)),
                   cells=cells, h=self.h)
        n = cells + 1 if self.location == "node" else cells
        idx = tuple(slice(o, o + n) for o in offsets)
        vals = self.values[(slice(None),) + idx] if self.kind == "vector" else self.values[idx]
        return GridField(sub, vals.copy(), self.kind, self.location)


# ------------------------------------------------------------ inputs


def coefficient_field(coef) -> Callable[[np.ndarray], np.ndarray]:
    """Callable ``points (P, d) -> (P, d, d)`` for a coefficient-like object."""
    if isinstance(coef, MultiscaleCoefficient):
        return lambda pts: eval_multiscale(coef, pts)
    if callable(coef):
        return coef
    raise InvalidInput(f"unsupported coefficient {coef!r}")


def _scalar_source(F, dim: int) -> Callable[[np.ndarray], np.ndarray] | None:
    if F is None:
        return None
    if isinstance(F, (int, float)):
        value = float(F)
        return lambda pts: np.full(pts.shape[0], value)
    if isinstance(F, str):
        ex = parse_expression(F, ("x",))
        return lambda pts: np.broadcast_to(ex(x=pts), (pts.shape[0],)).astype(float)
    if isinstance(F, GridField):
        raise TypeError("GridField sources are handled separately")
    return lambda pts: np.asarray(F(pts), dtype=float).reshape(pts.shape[0])


def _vector_source(f, dim: int) -> Callable[[np.ndarray], np.ndarray] | None:
    if f is None:
        return None
    if isinstance(f, str) or (isinstance(f, (list, tuple)) and all(isinstance(s, str) for s in f)):
        texts = [f] if isinstance(f, str) else list(f)
        if len(texts) != dim:
            raise InvalidInput(f"f needs {dim} component expressions, got {len(texts)}")
        exprs = [parse_expression(t, ("x",)) for t in texts]
        return lambda pts: np.stack(
            [np.broadcast_to(e(x=pts), (pts.shape[0],)).astype(float) for e in exprs], axis=-1)
    if isinstance(f, GridField):
        raise TypeError("GridField sources are handled separately")
    return lambda pts: np.asarray(f(pts), dtype=float).reshape(pts.shape[0], dim)


def _field_to_faces(f: GridField) -> tuple[np.ndarray, ...]:
    """Average nodal vector components onto the faces they act on."""
    v = f.values
    if f.location != "node":
        raise InvalidInput("vector forcing fields must be nodal")
    if f.dim == 1:
        return (0.5 * (v[0, 1:] + v[0, :-1]),)
    f1 = 0.5 * (v[0, 1:, :] + v[0, :-1, :])
    f2 = 0.5 * (v[1, :, 1:] + v[1, :, :-1])
    return f1.ravel(), f2.ravel()


# ------------------------------------------------------------ solver


def solve_on_grid(grid: Grid, coefs: FaceCoefficients, F_nodes=None, f_faces=None,
                  boundary=None, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, SolveInfo]:
    """Solve the flux-form system with Dirichlet data ``boundary`` (node array;
    only boundary entries are read). Returns nodal values of shape ``grid.shape``."""
    ops = flux_operators(grid)
    n = grid.size
    rhs = np.zeros(n) if F_nodes is None else np.asarray(F_nodes, dtype=float).ravel().copy()
    if f_faces is not None:
        rhs -= flux_divergence(ops, *f_faces)
    bmask = grid.boundary_mask().ravel()
    ub = np.zeros(n)
    if boundary is not None:
        ub[bmask] = np.asarray(boundary, dtype=float).ravel()[bmask]
    interior = ~bmask
    K = assemble(ops, coefs)
    if np.any(ub):
        rhs -= K @ ub
    KI = K[interior][:, interior]
    bI = rhs[interior]
    if grid.dim == 1:
        a = coefs.a11 / grid.h**2
        ab = np.zeros((3, interior.sum()))
        ab[1] = a[:-1] + a[1:]
        ab[0, 1:] = -a[1:-1]
        ab[2, :-1] = -a[1:-1]
        uI = scipy.linalg.solve_banded((1, 1), ab, bI)
        bn = np.linalg.norm(bI)
        info = SolveInfo(1, float(np.linalg.norm(KI @ uI - bI) / bn) if bn else 0.0, "banded",
                         backward_error(KI, uI, bI))
    else:
        c = (float(np.mean(coefs.a11)), float(np.mean(coefs.a22)))
        precond = dst_preconditioner(grid.cells, grid.h, 2, c)
        uI, info = krylov(KI, bI, precond, coefs.symmetric, tol)
    u = ub.copy()
    u[interior] = uI
    return u.reshape(grid.shape), info


def check_resolution(coef, h: float, override: bool = False, minimum: int = MIN_CELLS_PER_SCALE):
    if isinstance(coef, MultiscaleCoefficient) and not override:
        finest = coef.scales[-1]
        if h > finest / minimum:
            raise UnresolvedScale(f"h={h:.3g} exceeds eps_n/{minimum} = {finest / minimum:.3g}")


def default_h(coef, cells_per_scale: int = DEFAULT_CELLS_PER_SCALE, length: float = 1.0) -> float:
    """Largest h = length/N with N a power of two and h <= eps_n/cells_per_scale."""
    finest = coef.scales[-1] if isinstance(coef, MultiscaleCoefficient) else length / 64
    N = 2 ** int(np.ceil(np.log2(length * cells_per_scale / finest)))
    return length / N


def solve_dirichlet(coef, f=None, F=None, h: float | None = None, *, dim: int | None = None,
                    lower=None, length: float = 1.0, boundary=None, override: bool = False,
                    tol: float = DEFAULT_TOL) -> GridField:
    """Discrete weak solution of -div(A grad u) = div f + F with u = boundary data.

    ``coef`` is a :class:`MultiscaleCoefficient` or any callable
    ``points (P, d) -> (P, d, d)``. ``f``/``F`` may be expressions in ``x``
    (``x`` or ``x[k]``), callables on points, numbers or :class:`GridField`.
    ``boundary`` is a callable on points or a nodal array; default zero.
    """
    if dim is None:
        dim = getattr(coef, "dim", None)
        if dim is None:
            raise InvalidInput("dim is required for callable coefficients")
    if h is None:
        h = default_h(coef, length=length)
    cells = int(round(length / h))
    if abs(cells * h - length) > 1e-9 * length:
        raise InvalidInput(f"h={h} must divide the domain length {length}")
    check_resolution(coef, h, override)
    grid = unit_grid(dim, cells, lower=lower, length=length)
    coefs = sample_coefficients(grid, coefficient_field(coef))
    if coefs.minimum() <= 0:
        raise InvalidInput("coefficient is not positive on the grid")

    if isinstance(F, GridField):
        F_nodes = F.values
    else:
        src = _scalar_source(F, dim)
        F_nodes = None if src is None else src(grid.node_points())
    if isinstance(f, GridField):
        f_faces = _field_to_faces(f)
    else:
        vsrc = _vector_source(f, dim)
        if vsrc is None:
            f_faces = None
        elif dim == 1:
            f_faces = (vsrc(grid.xface_points())[:, 0],)
        else:
            f_faces = (vsrc(grid.xface_points())[:, 0], vsrc(grid.yface_points())[:, 1])
    bvals = None
    if boundary is not None:
        bvals = boundary(grid.node_points()) if callable(boundary) else np.asarray(boundary, dtype=float)
    values, info = solve_on_grid(grid, coefs, F_nodes, f_faces, bvals, tol)
    return GridField(grid, values, meta={"iterations": info.iterations, "residual": info.residual,
                                         "backward_error": info.backward_error, "method": info.method})


def gradient(u: GridField) -> GridField:
    """Nodal gradient: central differences inside, one-sided at the boundary."""
    if u.kind != "scalar":
        raise InvalidInput("gradient needs a scalar field")
    if u.dim == 1:
        comps = [np.gradient(u.values, u.h, edge_order=1)]
    else:
        comps = np.gradient(u.values, u.h, edge_order=1)
    return GridField(u.grid, np.stack(comps), kind="vector", location=u.location)


def face_gradient(u: GridField) -> GridField:
    """Cell-centred gradient of the discrete solution, consistent with the fluxes."""
    v, h = u.values, u.h
    if u.dim == 1:
        comps = [np.diff(v) / h]
    else:
        dx = np.diff(v, axis=0) / h
        dy = np.diff(v, axis=1) / h
        comps = [0.5 * (dx[:, 1:] + dx[:, :-1]), 0.5 * (dy[1:, :] + dy[:-1, :])]
    return GridField(u.grid, np.stack(comps), kind="vector", location="cell")


# ------------------------------------------------------------ refinement


@dataclass
class ConvergenceTable:
    h: list[float]
    differences: list[float]  # max-norm difference between levels k and k+1 on coarse nodes
    local_orders: list[float]
    order: float | None
    r2: float | None
    flagged: bool
    reason: str = ""

    def rows(self):
        for k, (h, d) in enumerate(zip(self.h, self.differences)):
            yield {"h": h, "difference": d,
                   "local_order": self.local_orders[k - 1] if k else None}


def refine_study(problem: Callable[[float], GridField], h_list: Sequence[float],
                 r2_min: float = 0.95, spread_max: float = 0.5) -> ConvergenceTable:
    """Observed order from successive differences on nested grids.

    The order is the log-log slope of ``|u_h - u_{h/k}|`` against ``h``.
    The study is flagged (no order claimed) when the differences do not
    behave like a single power law.
    """
    hs = sorted((float(h) for h in h_list), reverse=True)
    if len(hs) < 3:
        raise InvalidInput("refine_study needs at least three grid levels")
    sols = [problem(h) for h in hs]
    diffs = []
    for coarse, fine in zip(sols[:-1], sols[1:]):
        ratio = coarse.h / fine.h
        k = int(round(ratio))
        if abs(ratio - k) > 1e-9:
            raise InvalidInput("grid levels must be nested")
        sl = tuple(slice(None, None, k) for _ in range(coarse.dim))
        diffs.append(float(np.max(np.abs(fine.values[sl] - coarse.values))))
    levels = hs[:-1]
    local = [float(np.log(diffs[i] / diffs[i + 1]) / np.log(levels[i] / levels[i + 1]))
             if diffs[i] > 0 and diffs[i + 1] > 0 else float("nan") for i in range(len(diffs) - 1)]
    if min(diffs) <= 1e-13 * max(1.0, max(abs(np.max(s.values)) for s in sols)):
        return ConvergenceTable(levels, diffs, local, None, None, True, "differences at round-off")
    if len(diffs) < 2:
        return ConvergenceTable(levels, diffs, local, None, None, True, "too few differences")
    if len(diffs) == 2:
        fit_slope, fit_r2 = local[0], 1.0
    else:
        fit = fit_rate(list(zip(levels, diffs)))
        fit_slope, fit_r2 = fit.slope, fit.r2
    finite = [v for v in local if np.isfinite(v)]
    spread = (max(finite) - min(finite)) if finite else np.inf
    if fit_r2 < r2_min or spread > spread_max or fit_slope <= 0:
        return ConvergenceTable(levels, diffs, local, None, fit_r2, True,
                                f"irregular convergence (R2={fit_r2:.3f}, spread={spread:.2f})")
    return ConvergenceTable(levels, diffs, local, fit_slope, fit_r2, False)
