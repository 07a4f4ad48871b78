"""Mollification, partial smoothing, ball averages and grid norms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

from .elliptic import GridField
from .errors import InvalidInput, UnresolvedScale

SUBSAMPLES = 4  # per axis per grid cell for ball quadrature
MIN_CELLS_PER_SMOOTHING = 4


def _bump(s2: np.ndarray) -> np.ndarray:
    """exp(-1/(1 - 4 s^2)) on s < 1/2, zero outside; ``s2`` is |s|^2."""
    s2 = np.asarray(s2, dtype=float)
    out = np.zeros_like(s2)
    inside = s2 < 0.25
    out[inside] = np.exp(-1.0 / (1.0 - 4.0 * s2[inside]))
    return out


@dataclass(frozen=True)
class Mollifier:
    """Normalised radial bump supported in the ball of radius 1/2."""

    dim: int = 1
    radial_nodes: int | None = None
    angles: int = 16

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise InvalidInput("mollifier dimension must be 1 or 2")
        if self.radial_nodes is None:
            object.__setattr__(self, "radial_nodes", 48 if self.dim == 1 else 24)

    @cached_property
    def constant(self) -> float:
        opts = dict(epsabs=1e-16, epsrel=1e-13, limit=200)
        if self.dim == 1:
            mass, _ = integrate.quad(lambda s: _bump(s * s), -0.5, 0.5, **opts)
        else:
            mass, _ = integrate.quad(lambda r: 2 * math.pi * r * _bump(r * r), 0.0, 0.5, **opts)
        return 1.0 / mass

    @property
    def radius(self) -> float:
        return 0.5

    def __call__(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        s2 = w**2 if self.dim == 1 and (w.ndim == 0 or w.shape[-1] != 1) else np.sum(w**2, axis=-1)
        return self.constant * _bump(s2)

    def mass(self) -> float:
        """Total mass by adaptive quadrature (should be 1)."""
        opts = dict(epsabs=1e-16, epsrel=1e-13, limit=200)
        if self.dim == 1:
            val, _ = integrate.quad(lambda s: float(self(s)), -0.5, 0.5, **opts)
        else:
            val, _ = integrate.quad(lambda r: 2 * math.pi * r * float(self(r)), 0.0, 0.5, **opts)
        return val

    @cached_property
    def rule(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``(K, d)`` and weights ``(K,)`` with sum(weights * g(nodes)) ~ int g phi.

        Nodes are symmetric under w -> -w, so odd moments vanish exactly, and
        the weights are rescaled to sum to one so constants are reproduced.
        """
        t, wt = np.polynomial.legendre.leggauss(self.radial_nodes)
        if self.dim == 1:
            s = 0.5 * t
            w = 0.5 * wt * _bump(s * s)
            return s[:, None], w / w.sum()
        r = 0.25 * (t + 1.0)
        wr = 0.25 * wt * r * _bump(r * r)
        theta = 2 * math.pi * (np.arange(self.angles) + 0.5) / self.angles
        nodes = np.stack([np.outer(r, np.cos(theta)).ravel(), np.outer(r, np.sin(theta)).ravel()], axis=-1)
        w = np.repeat(wr, self.angles)
        return nodes, w / w.sum()


def _points_of(target) -> tuple[np.ndarray, GridField | None]:
    if isinstance(target, GridField):
        return target.points(), target
    pts = np.asarray(target, dtype=float)
    return (pts[:, None] if pts.ndim == 1 else pts), None


def smooth_partial(g: Callable[[np.ndarray, np.ndarray], np.ndarray], eps: float, target,
                   mollifier: Mollifier | None = None) -> np.ndarray | GridField:
    """Mollify the slow slot of ``g(z, y)`` at scale ``eps`` and evaluate at ``y = x/eps``.

    ``g`` takes arrays ``z (P, d)`` and ``y (P, d)`` and returns ``(P,)`` or
    ``(P, ...)``.  ``target`` is a point array or a :class:`GridField` whose
    sample locations are used; in the latter case the grid must resolve
    ``eps`` and a field on the same grid is returned.
    """
    if eps <= 0:
        raise InvalidInput("eps must be positive")
    pts, fieldctx = _points_of(target)
    d = pts.shape[1]
    if fieldctx is not None and fieldctx.h > eps / MIN_CELLS_PER_SMOOTHING:
        raise UnresolvedScale(f"h={fieldctx.h:.3g} does not resolve eps={eps:.3g}")
    phi = mollifier or Mollifier(d)
    if phi.dim != d:
        raise InvalidInput("mollifier dimension does not match the points")
    nodes, weights = phi.rule
    y = pts / eps
    total = None
    for w_k, c_k in zip(nodes, weights):
        val = c_k * np.asarray(g(pts - eps * w_k, y), dtype=float)
        total = val if total is None else total + val
    if fieldctx is None:
        return total
    shape = tuple(len(a) for a in fieldctx.axes())
    extra = total.shape[1:]
    values = np.moveaxis(total.reshape(shape + extra), list(range(d)), list(range(len(extra), len(extra) + d))) \
        if extra else total.reshape(shape)
    return GridField(fieldctx.grid, values, kind="vector" if extra else "scalar", location=fieldctx.location)


# ------------------------------------------------------------ regions


class Box(NamedTuple):
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @classmethod
    def around(cls, center: Sequence[float], r: float) -> "Box":
        """Axis-aligned square of half-width ``r`` standing in for a ball."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(tuple(c - r), tuple(c + r))

    @property
    def measure(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))


def _overlap(centres: np.ndarray, half: float, lo: float, hi: float) -> np.ndarray:
    return np.clip(np.minimum(centres + half, hi) - np.maximum(centres - half, lo), 0.0, None)


def region_weights(field: GridField, region: Box | None = None) -> np.ndarray:
    """Measure of each sample's dual cell inside ``region`` and the domain.

    Exact integration weights for boxes aligned with the dual grid; the
    whole-domain case reproduces the trapezoid (nodes) or midpoint (cells)
    weights.
    """
    dom = field.domain
    h = field.h
    w = None
    for k, axis in enumerate(field.axes()):
        lo, hi = dom[k]
        if region is not None:
            lo, hi = max(lo, region.lower[k]), min(hi, region.upper[k])
        wk = _overlap(axis, h / 2, lo, hi) if hi > lo else np.zeros_like(axis)
        w = wk if w is None else np.multiply.outer(w, wk)
    return w


def _magnitude(field: GridField) -> np.ndarray:
    return np.sqrt(field.magnitude_squared())


def lp_norm(field: GridField, p: float = 2.0, region: Box | None = None) -> float:
    """(int_region |field|^p)^(1/p); ``p = inf`` gives the max over the region."""
    if not (p >= 1):
        raise InvalidInput(f"p must lie in [1, inf], got {p}")
    w = region_weights(field, region)
    mag = _magnitude(field)
    if math.isinf(p):
        inside = w > 0
        return float(mag[inside].max()) if inside.any() else 0.0
    return float(np.sum(w * mag**p) ** (1.0 / p))


def inner(f: GridField, g: GridField, region: Box | None = None) -> float:
    """Discrete L2 inner product with the same weights as :func:`lp_norm`."""
    if f.values.shape != g.values.shape:
        raise InvalidInput("fields live on different grids")
    w = region_weights(f, region)
    prod = np.sum(f.values * g.values, axis=0) if f.kind == "vector" else f.values * g.values
    return float(np.sum(w * prod))


def mean_square(field: GridField, region: Box | None = None) -> float:
    """Average of |field|^2 over the region (clipped to the domain)."""
    w = region_weights(field, region)
    total = w.sum()
    if total <= 0:
        raise InvalidInput("region does not meet the domain")
    return float(np.sum(w * field.magnitude_squared()) / total)


def layer_norm(field: GridField, t: float, p: float = 2.0) -> float:
    """L^p norm over the boundary strip {x : dist(x, boundary) < t}."""
    dom = field.domain
    full = region_weights(field)
    lower = tuple(lo + t for lo, _ in dom)
    upper = tuple(hi - t for _, hi in dom)
    core = region_weights(field, Box(lower, upper)) if all(u > l for l, u in zip(lower, upper)) else 0.0
    w = full - core
    mag = _magnitude(field)
    if math.isinf(p):
        return float(mag[w > 0].max()) if np.any(w > 0) else 0.0
    return float(np.sum(w * mag**p) ** (1.0 / p))


# ------------------------------------------------------------ ball averages


class _Subsampler:
    """|f|^2 on a grid refined ``SUBSAMPLES`` times per axis.

    Cell fields are piecewise constant on their cells; nodal fields are
    multilinear between nodes.
    """

    def __init__(self, field: GridField):
        self.field = field
        self.sq = field.magnitude_squared()
        self.h = field.h
        self.hs = field.h / SUBSAMPLES
        self.lower = np.array([lo for lo, _ in field.domain])
        self.count = field.grid.cells * SUBSAMPLES

    def centres(self, k: int, idx: np.ndarray) -> np.ndarray:
        return self.lower[k] + (idx + 0.5) * self.hs

    def values(self, idx: Sequence[np.ndarray]) -> np.ndarray:
        if self.field.location == "cell":
            cell = [i // SUBSAMPLES for i in idx]
            return self.sq[np.ix_(*cell)]
        # multilinear interpolation of nodal |f|^2
        out = None
        parts = []
        for i in idx:
            s = (i + 0.5) / SUBSAMPLES
            base = np.floor(s).astype(int)
            parts.append((base, s - base))
        corners = np.array(np.meshgrid(*([[0, 1]] * len(idx)), indexing="ij")).reshape(len(idx), -1).T
        for corner in corners:
            sel, wts = [], None
            for k, (base, frac) in enumerate(parts):
                j = np.minimum(base + corner[k], self.field.grid.cells)
                sel.append(j)
                wk = frac if corner[k] else 1.0 - frac
                wts = wk if wts is None else np.multiply.outer(wts, wk)
            term = wts * self.sq[np.ix_(*sel)]
            out = term if out is None else out + term
        return out


def _interp_square(field: GridField, x: np.ndarray) -> float:
    axes = field.axes()
    x = np.clip(x, [a[0] for a in axes], [a[-1] for a in axes])
    method = "nearest" if field.location == "cell" else "linear"
    return float(RegularGridInterpolator(axes, field.magnitude_squared(), method=method)(x[None])[0])


def average_Mt(field: GridField, t: float, points) -> np.ndarray:
    """Root mean square of ``field`` over the balls B_t(x) clipped to the domain.

    Ball integrals use ``SUBSAMPLES**d`` subsamples per grid cell, so the
    clipped-ball volume enters through the sample count.  A ball too small
    to contain any subsample falls back to the interpolated point value.
    """
    if t <= 0:
        raise InvalidInput("t must be positive")
    d = field.dim
    pts = np.asarray(points, dtype=float).reshape(-1, d)
    sub = _Subsampler(field)
    out = np.empty(len(pts))
    for m, x in enumerate(pts):
        idx = []
        for k in range(d):
            lo = max(0, int(math.floor((x[k] - t - sub.lower[k]) / sub.hs - 0.5)))
            hi = min(sub.count, int(math.ceil((x[k] + t - sub.lower[k]) / sub.hs + 0.5)))
            idx.append(np.arange(lo, hi))
        dist2 = None
        for k in range(d):
            dk = (sub.centres(k, idx[k]) - x[k]) ** 2
            dist2 = dk if dist2 is None else np.add.outer(dist2, dk)
        inside = dist2 <= t * t
        if not inside.any():
            out[m] = _interp_square(field, x)
            continue
        out[m] = sub.values(idx)[inside].mean()
    return np.sqrt(out)


def averaging_ratio(field: GridField, t: float, r: float, center) -> float:
    """Mean of M_t[f]^2 over B_r(center) divided by the mean of |f|^2 over B_2r(center).

    The numerator samples M_t at the field's own sample points inside B_r;
    the denominator uses the same ball quadrature as :func:`average_Mt`.
    """
    if not 0 < t <= r:
        raise InvalidInput("need 0 < t <= r")
    c = np.atleast_1d(np.asarray(center, dtype=float))
    pts = field.points()
    inside = np.sum((pts - c) ** 2, axis=1) <= r * r
    if not inside.any():
        raise InvalidInput("B_r contains no sample points")
    num = float(np.mean(average_Mt(field, t, pts[inside]) ** 2))
    den = float(average_Mt(field, 2 * r, c[None])[0] ** 2)
    return num / den
