"""One-scale reduction: reperiodize, homogenize the finest scale, solve the
reduced problem on an interior box and measure the corrected-gradient error.

Boxes ``[c - r, c + r]^d`` stand in for balls; they are snapped to the
nodes of the fine grid so that restriction of the full solution supplies
exact Dirichlet data for the reduced problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .cell import ReiteratedTable, reiterated_on_lattice
from .coefficients import MultiscaleCoefficient, parse_expression, reperiodize
from .coefficients.multiscale import frac
from .diophantine import DEFAULT_CAP
from .discretize import DEFAULT_TOL
from .elliptic import GridField, default_h, face_gradient, solve_dirichlet
from .errors import DegenerateFit, InvalidInput, UnresolvedScale
from .operators import MIN_CELLS_PER_SMOOTHING, Box, Mollifier, layer_norm, lp_norm, smooth_partial
from .rates import RateFit, fit_rate

__all__ = [
    "CorrectorTable",
    "FamilyResult",
    "RateTable",
    "ReductionReport",
    "corrector_term_U",
    "drop_slot",
    "fit_rate",
    "rate_locally_periodic",
    "reduce_one_scale",
    "reduction_family",
]

LATTICE_POINTS = 32
CELLS_PER_COMPRESSED_PERIOD = 32
THETA = 0.5


def drop_slot(coef: MultiscaleCoefficient, slot: int) -> MultiscaleCoefficient:
    """The same field with an inert slot removed (its argument frozen at 0)."""
    n, cd = coef.n, coef.cell_dim
    keep = [i for i in range(n) if i != slot]
    base = coef.kernel

    def kernel(ys):
        full = np.zeros((ys.shape[0], n, cd))
        full[:, keep, :] = ys
        return base(full)

    active = None if coef.active is None else frozenset(keep.index(i) for i in coef.active if i != slot)
    return MultiscaleCoefficient(kernel=kernel, scales=tuple(coef.scales[i] for i in keep), dim=coef.dim,
                                 ellipticity=coef.ellipticity, holder=coef.holder, cell_dim=cd, active=active)


# ------------------------------------------------------------ corrector table


@dataclass
class CorrectorTable:
    """Gradient of the reiterated corrector of ``sharp`` in its finest slot.

    ``gradient(slow, y)`` returns ``(P, d, d)`` with entry ``[i, j]`` equal to
    ``d chi_j / d y_i``.  In one dimension the closed form
    ``A_hat(slow) / A(slow, y) - 1`` is used with the interpolated effective
    coefficient; in two dimensions the stored cell solutions are read at the
    nearest slow lattice point and interpolated bilinearly in ``y``.
    """

    sharp: MultiscaleCoefficient
    table: ReiteratedTable
    zero: bool = False

    @property
    def dim(self) -> int:
        return self.sharp.dim

    @property
    def slow_slots(self) -> int:
        return self.sharp.n - 1

    def gradient(self, slow: np.ndarray, y: np.ndarray) -> np.ndarray:
        P, d = y.shape[0], self.dim
        if self.zero:
            return np.zeros((P, d, d))
        m = self.slow_slots
        slow = np.asarray(slow, dtype=float).reshape(P, m, d)
        if d == 1:
            ys = np.concatenate([slow, y.reshape(P, 1, 1)], axis=1)
            a = self.sharp(frac(ys))[:, 0, 0]
            ahat = self.table(slow.reshape(P, -1))[:, 0, 0] if m else self.table.matrices[0, 0, 0]
            return (ahat / a - 1.0).reshape(P, 1, 1)
        return self._gradient_2d(slow, y)

    def _gradient_2d(self, slow, y):
        corr = self.table.correctors
        if corr is None:
            raise InvalidInput("two-dimensional corrector tables need stored correctors")
        P, m = slow.shape[0], self.slow_slots
        if m:
            L = self.table.lattice
            idx = np.mod(np.rint(slow.reshape(P, -1) * L).astype(int), L)
            flat = np.ravel_multi_index(tuple(idx.T), (L,) * idx.shape[1])
        else:
            flat = np.zeros(P, dtype=int)
        out = np.zeros((P, 2, 2))
        cells = corr[0].gradient.shape[-1]
        s = frac(y) * cells
        i0 = np.floor(s).astype(int)
        t = s - i0
        for k in np.unique(flat):
            sel = flat == k
            g = corr[k].gradient  # (j, i, N, N)
            a0, b0 = i0[sel, 0] % cells, i0[sel, 1] % cells
            a1, b1 = (a0 + 1) % cells, (b0 + 1) % cells
            tx, ty = t[sel, 0], t[sel, 1]
            val = (g[..., a0, b0] * (1 - tx) * (1 - ty) + g[..., a1, b0] * tx * (1 - ty)
                   + g[..., a0, b1] * (1 - tx) * ty + g[..., a1, b1] * tx * ty)
            out[sel] = np.moveaxis(val, -1, 0).transpose(0, 2, 1)
        return out


def _cell_gradient_interpolant(grad: GridField) -> Callable[[np.ndarray], np.ndarray]:
    """Continuous interpolant of cell-centred gradients, zero outside the box."""
    lo = np.array([a for a, _ in grad.domain])
    hi = np.array([b for _, b in grad.domain])
    if grad.dim == 1:
        c = grad.grid.face_axis(0)
        xs = np.concatenate([[lo[0]], c, [hi[0]]])
        v = grad.values[0]
        vs = np.concatenate([[v[0]], v, [v[-1]]])

        def interp(z):
            z = z[:, 0]
            out = np.interp(z, xs, vs)
            out[(z < lo[0]) | (z > hi[0])] = 0.0
            return out[:, None]

        return interp
    axes = [grad.grid.face_axis(k) for k in range(2)]
    rgis = [RegularGridInterpolator(axes, grad.values[k], bounds_error=False, fill_value=None)
            for k in range(2)]

    def interp(z):
        inside = np.all((z >= lo) & (z <= hi), axis=1)
        zc = np.clip(z, [a[0] for a in axes], [a[-1] for a in axes])
        out = np.stack([r(zc) for r in rgis], axis=-1)
        out[~inside] = 0.0
        return out

    return interp


def corrector_term_U(correctors: CorrectorTable, u_flat: GridField, new_scales: Sequence[float],
                     target: GridField | np.ndarray | None = None,
                     mollifier: Mollifier | None = None) -> GridField | np.ndarray:
    """Smoothed first-order corrector term at the finest new scale.

    ``U(x) = int phi(w) grad_y X(z/eps'_1..z/eps'_{n-1}, x/eps'_n) grad u(z) dw``
    with ``z = x - eps'_n w`` and ``u`` extended by zero outside its box.
    Evaluated at the cell centres of ``u_flat`` unless ``target`` is given.
    """
    scales = np.asarray(new_scales, dtype=float)
    fast = scales[-1]
    slow_scales = scales[:-1]
    d = u_flat.dim
    if target is None:
        target = GridField(u_flat.grid, np.zeros((u_flat.grid.cells,) * d), location="cell")
    if isinstance(target, GridField) and target.h > fast / MIN_CELLS_PER_SMOOTHING:
        raise UnresolvedScale(f"h={target.h:.3g} does not resolve eps'_n={fast:.3g}")
    grad = _cell_gradient_interpolant(face_gradient(u_flat))

    def g(z, y):
        P = z.shape[0]
        slow = frac(z[:, None, :] / slow_scales[None, :, None]) if len(slow_scales) else np.zeros((P, 0, d))
        G = correctors.gradient(slow, y)
        return np.einsum("pij,pj->pi", G, grad(z))

    if correctors.zero:
        pts = target.points() if isinstance(target, GridField) else np.asarray(target, dtype=float)
        vals = np.zeros((len(pts), d))
    else:
        vals = smooth_partial(g, fast, target.points() if isinstance(target, GridField) else target,
                              mollifier=mollifier)
    if not isinstance(target, GridField):
        return vals
    shape = tuple(len(a) for a in target.axes())
    return GridField(target.grid, np.moveaxis(vals.reshape(shape + (d,)), -1, 0), kind="vector",
                     location=target.location)


# ------------------------------------------------------------ reduction


@dataclass
class ReductionReport:
    Q: float
    scales: tuple[float, ...]
    new_scales: tuple[float, ...]
    approximation: dict
    table: dict
    norms: dict
    error: float
    relative_error: float
    energy_constant: float
    radii: tuple[float, float]
    center: tuple[float, ...]
    h: float
    bound_proxy: float | None = None
    sigma_hat: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def separation_ratio(self) -> float:
        """Q^(n-1) eps_n / r, the small parameter of the error bound."""
        n = len(self.scales)
        return self.Q ** (n - 1) * self.scales[-1] / self.radii[0]

    def to_dict(self) -> dict:
        return {
            "Q": self.Q, "scales": list(self.scales), "new_scales": list(self.new_scales),
            "approximation": self.approximation, "table": self.table, "norms": self.norms,
            "error": self.error, "relative_error": self.relative_error,
            "energy_constant": self.energy_constant, "radii": list(self.radii),
            "center": list(self.center), "h": self.h, "bound_proxy": self.bound_proxy,
            "sigma_hat": self.sigma_hat, "separation_ratio": self.separation_ratio, "notes": list(self.notes),
        }


def _scalar_on_nodes(F, grid) -> np.ndarray:
    pts = grid.node_points()
    if F is None:
        return np.zeros(grid.shape)
    if isinstance(F, (int, float)):
        return np.full(grid.shape, float(F))
    if isinstance(F, str):
        ex = parse_expression(F, ("x",))
        return np.broadcast_to(ex(x=pts), (len(pts),)).reshape(grid.shape).astype(float)
    return np.asarray(F(pts), dtype=float).reshape(grid.shape)


def _snap_box(center, r, h, dim) -> tuple[tuple[float, ...], int]:
    c = np.broadcast_to(np.asarray(center, dtype=float), (dim,))
    cells = 2 * max(1, int(round(r / h)))
    lower = tuple(float(round((ck - r) / h) * h) for ck in c)
    if any(lo < -1e-12 or lo + cells * h > 1 + 1e-12 for lo in lower):
        raise InvalidInput(f"box of half-width {r} around {tuple(c)} leaves the unit domain")
    return lower, cells


def _cell_resolution(q: int) -> float:
    cells = 2 ** int(math.ceil(math.log2(max(64, CELLS_PER_COMPRESSED_PERIOD * q))))
    return 1.0 / cells


def reduce_one_scale(coef: MultiscaleCoefficient, F=1.0, r: float = 0.25, Q: float | None = None,
                     h: float | None = None, *, center=0.5, lattice: int = LATTICE_POINTS,
                     h_cell: float | None = None, cells_per_scale: int = 32, threads: int = 1,
                     cap: int = DEFAULT_CAP, tol: float = DEFAULT_TOL) -> tuple[GridField, ReductionReport]:
    """Compare the full solution with the reduced (one scale fewer) problem on B_r.

    ``Q`` defaults to ``(r/eps_n)^(1/2 / (n-1))``.  Returns the reduced
    solution on the snapped box and the report.
    """
    d = coef.dim
    notes = []
    eps = coef.scales
    if Q is None:
        Q = (r / eps[-1]) ** (THETA / max(1, coef.n - 1))
    if h is None:
        h = default_h(coef, cells_per_scale=cells_per_scale)
    u_eps = solve_dirichlet(coef, F=F, h=h, tol=tol)

    work = coef
    approx_info: dict = {}
    if work.n >= 2 and not work.depends_on(work.n - 1):
        work = drop_slot(work, work.n - 1)
        notes.append("finest slot inert: dropped before reduction")
        flat_kernel, new_scales, zero = work, work.scales, True
        table_info = {"kind": "exact", "points_per_axis": 0, "h_cell": None}
        table = None
    else:
        zero = not work.depends_on(work.n - 1)
        if work.n >= 2:
            rep = reperiodize(work, Q, cap)
            sharp, new_scales = rep.sharp, rep.new_scales
            approx_info = rep.to_dict()
            q = rep.approx.q
            if rep.dropped:
                notes.append(f"slots {list(rep.dropped)} absorbed exactly (gamma = 0)")
        else:
            sharp, new_scales, q = work, work.scales, 1
        hc = h_cell or _cell_resolution(q)
        if hc > 1.0 / (CELLS_PER_COMPRESSED_PERIOD * q) + 1e-15:
            raise UnresolvedScale(f"cell spacing {hc:.3g} does not resolve q={q} compressed periods")
        table = reiterated_on_lattice(sharp, lattice if sharp.n > 1 else 1, hc, threads=threads,
                                      keep_correctors=d == 2)
        table_info = {"kind": "lattice", "points_per_axis": lattice if sharp.n > 1 else 1, "h_cell": hc,
                      "solves": int(table.matrices.shape[0])}
        flat_kernel = sharp
    if not approx_info:
        approx_info = {"q": 1, "p": [], "gamma": [], "s": [], "Q": float(Q)}
    notes.append("corrector term smoothed at the finest new scale q*eps_n")

    slow_scales = np.asarray(new_scales[:-1] if table is not None else new_scales, dtype=float)
    if table is not None:
        m = len(slow_scales)

        def a_flat(pts):
            pts = np.asarray(pts, dtype=float).reshape(-1, d)
            if m == 0:
                return np.broadcast_to(table.matrices[0], (len(pts), d, d)).copy()
            z = frac(pts[:, None, :] / slow_scales[None, :, None]).reshape(len(pts), -1)
            return table(z).reshape(len(pts), d, d)

        correctors = CorrectorTable(flat_kernel, table, zero=zero)
    else:
        def a_flat(pts):
            pts = np.asarray(pts, dtype=float).reshape(-1, d)
            ys = frac(pts[:, None, :] / slow_scales[None, :, None])
            return flat_kernel(ys)

        correctors = None

    lower, cells = _snap_box(center, r, h, d)
    sub = u_eps.restrict(lower, cells)
    u_flat = solve_dirichlet(a_flat, F=F, h=h, dim=d, lower=lower, length=cells * h,
                             boundary=sub.values, tol=tol)
    u_flat = GridField(u_flat.grid, u_flat.values, meta=u_flat.meta)
    g_eps = face_gradient(sub)
    g_flat = face_gradient(u_flat)
    if correctors is None:
        U = GridField(g_flat.grid, np.zeros_like(g_flat.values), kind="vector", location="cell")
    else:
        U = corrector_term_U(correctors, u_flat, new_scales)
    diff = GridField(g_flat.grid, g_eps.values - g_flat.values - U.values, kind="vector", location="cell")
    e = lp_norm(diff)
    r_eff = cells * h / 2
    c_eff = tuple(lo + r_eff for lo in lower)
    big = Box.around(c_eff, 2 * r_eff)
    grad_full = face_gradient(u_eps)
    Fnodes = GridField(u_eps.grid, _scalar_on_nodes(F, u_eps.grid))
    n_grad_eps_r = lp_norm(g_eps)
    n_grad_eps_2r = lp_norm(grad_full, 2, big)
    n_F_2r = lp_norm(Fnodes, 2, big)
    n_grad_flat = lp_norm(g_flat)
    diff_u = GridField(u_flat.grid, sub.values - u_flat.values)
    denom = n_grad_eps_2r + r_eff * n_F_2r
    norms = {
        "grad_u_eps_Br": n_grad_eps_r, "grad_u_eps_B2r": n_grad_eps_2r, "F_B2r": n_F_2r,
        "grad_u_flat_Br": n_grad_flat, "U_Br": lp_norm(U), "u_eps_minus_u_flat_Br": lp_norm(diff_u),
        "uncorrected_error_Br": lp_norm(GridField(g_flat.grid, g_eps.values - g_flat.values,
                                                  kind="vector", location="cell")),
    }
    report = ReductionReport(
        Q=float(Q), scales=tuple(eps), new_scales=tuple(float(s) for s in new_scales), approximation=approx_info,
        table=table_info, norms=norms, error=e, relative_error=e / n_grad_eps_r if n_grad_eps_r else 0.0,
        energy_constant=n_grad_flat / denom if denom else 0.0, radii=(r_eff, 2 * r_eff), center=c_eff, h=h,
        notes=notes)
    return u_flat, report


@dataclass
class FamilyResult:
    reports: list[ReductionReport]
    rate: RateFit | None  # error against eps_n
    sigma: RateFit | None  # error against the separation ratio

    @property
    def errors(self) -> list[float]:
        return [rep.error for rep in self.reports]

    def nonincreasing(self, slack: float = 0.1) -> bool:
        """Errors ordered by decreasing eps_n never grow by more than ``slack``."""
        ordered = [rep.error for rep in sorted(self.reports, key=lambda rep: -rep.scales[-1])]
        return all(b <= (1 + slack) * a for a, b in zip(ordered, ordered[1:]))


def reduction_family(coefs: Sequence[MultiscaleCoefficient], F=1.0, r: float = 0.25, theta: float = THETA,
                     **kwargs) -> FamilyResult:
    """Run the reduction along a family with Q = (r/eps_n)^(theta/(n-1)).

    Fits the error against eps_n and against the separation ratio
    Q^(n-1) eps_n / r; the latter slope is recorded as ``sigma_hat`` and
    used for every report's ``bound_proxy``.
    """
    reports = []
    for coef in coefs:
        Q = (r / coef.scales[-1]) ** (theta / max(1, coef.n - 1))
        reports.append(reduce_one_scale(coef, F=F, r=r, Q=Q, **kwargs)[1])
    try:
        rate = fit_rate([(rep.scales[-1], rep.error) for rep in reports])
        sigma = fit_rate([(rep.separation_ratio, rep.error) for rep in reports])
    except DegenerateFit:
        return FamilyResult(reports, None, None)
    for coef, rep in zip(coefs, reports):
        rep.sigma_hat = sigma.slope
        rep.bound_proxy = rep.separation_ratio**sigma.slope + rep.Q ** (-coef.holder[0])
    return FamilyResult(reports, rate, sigma)


# ------------------------------------------------------------ locally periodic rate


@dataclass
class RateTable:
    eps: list[float]
    l2_error: list[float]
    corrected_gradient_error: list[float]
    bound_terms: list[dict]
    l2_fit: RateFit | None
    gradient_fit: RateFit | None
    flagged: bool
    reason: str = ""

    def rows(self):
        for k, e in enumerate(self.eps):
            yield {"eps": e, "l2_error": self.l2_error[k],
                   "corrected_gradient_error": self.corrected_gradient_error[k], **self.bound_terms[k]}

    def to_dict(self) -> dict:
        return {"rows": list(self.rows()),
                "l2_slope": None if self.l2_fit is None else self.l2_fit.slope,
                "gradient_slope": None if self.gradient_fit is None else self.gradient_fit.slope,
                "flagged": self.flagged, "reason": self.reason}


def _locally_periodic(A) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if isinstance(A, str):
        ex = parse_expression(A, ("x", "y"))
        return lambda x, y: np.broadcast_to(ex(x=x[:, None], y=y[:, None]), x.shape).astype(float)
    return lambda x, y: np.broadcast_to(np.asarray(A(x, y), dtype=float), x.shape)


def _harmonic_in_y(a, x: np.ndarray, samples: int) -> np.ndarray:
    """Harmonic mean over y in [0,1) at each x by the periodic trapezoid rule."""
    y = np.arange(samples) / samples
    X = np.repeat(x, samples)
    Y = np.tile(y, len(x))
    return 1.0 / np.mean(1.0 / a(X, Y).reshape(len(x), samples), axis=1)


def rate_locally_periodic(A, eps_list: Sequence[float], h=None, F=1.0, *, cells_per_period: int = 64,
                          y_samples: int = 1024, x_table: int = 4096, tol: float = DEFAULT_TOL,
                          flag_below: float = 1e-9) -> RateTable:
    """Convergence of ``-(a(x, x/eps) u')' = F`` on [0, 1] to its homogenized limit.

    ``A`` is an expression in ``x`` and ``y`` or a callable ``(x, y) -> a``.
    ``h`` is a spacing, a callable of eps, or None for ``eps/cells_per_period``.
    Both problems are solved on the same grid per eps so that differences
    measure homogenization error rather than discretization mismatch.
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps_list) < 4:
        raise InvalidInput("rate_locally_periodic needs at least four values of eps")
    a = _locally_periodic(A)
    # a_hat is smooth in x: tabulate once and interpolate
    xs = np.linspace(0.0, 1.0, x_table + 1)
    spline = CubicSpline(xs, _harmonic_in_y(a, xs, y_samples))

    def ahat_at(x):
        return spline(np.clip(x, 0.0, 1.0))

    phi = Mollifier(1)
    l2, grad_err, terms = [], [], []
    for eps in eps_list:
        hh = h(eps) if callable(h) else (h if h is not None else eps / cells_per_period)
        cells = int(round(1.0 / hh))
        hh = 1.0 / cells

        def a_eps(pts):
            x = pts[:, 0]
            return a(x, x / eps).reshape(-1, 1, 1)

        def a_hat(pts):
            return ahat_at(pts[:, 0]).reshape(-1, 1, 1)

        u = solve_dirichlet(a_eps, F=F, h=hh, dim=1, tol=tol)
        u0 = solve_dirichlet(a_hat, F=F, h=hh, dim=1, tol=tol)
        l2.append(lp_norm(GridField(u.grid, u.values - u0.values)))
        g_eps, g0 = face_gradient(u), face_gradient(u0)
        grad0 = _cell_gradient_interpolant(g0)
        centres = u.grid.cell_points()

        def g(z, y):
            zs = z[:, 0]
            return (ahat_at(zs) / a(zs, y[:, 0]) - 1.0) * grad0(z)[:, 0]

        S = smooth_partial(g, eps, centres, mollifier=phi)
        grad_err.append(float(np.sqrt(np.sum(hh * (g_eps.values[0] - g0.values[0] - S) ** 2))))
        second = np.diff(g0.values[0]) / hh
        mids = u.grid.axis(0)[1:-1]
        interior = (mids >= 3 * eps) & (mids <= 1 - 3 * eps)
        terms.append({"grad_u0_L2": lp_norm(g0),
                      "hess_u0_interior_L2": float(np.sqrt(np.sum(hh * second[interior] ** 2))),
                      "grad_u0_layer_L2": layer_norm(g0, 4 * eps), "h": hh})
    scale = max(1.0, max(t["grad_u0_L2"] for t in terms))
    if max(l2) <= flag_below * scale and max(grad_err) <= flag_below * scale:
        return RateTable(eps_list, l2, grad_err, terms, None, None, True,
                         "errors at solver tolerance: no rate claimed")
    l2_fit = fit_rate(list(zip(eps_list, l2)))
    gradient_fit = fit_rate(list(zip(eps_list, grad_err)))
    return RateTable(eps_list, l2, grad_err, terms, l2_fit, gradient_fit, False)
