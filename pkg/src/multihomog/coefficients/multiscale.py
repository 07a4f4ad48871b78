"""Multiscale periodic coefficients A(x/eps_1, ..., x/eps_n)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..diophantine import DEFAULT_CAP, RationalApproximation, simultaneous_approx
from ..errors import DegenerateMatrix, InvalidInput
from .expr import parse_coefficient

Kernel = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MultiscaleCoefficient:
    """Kernel ``A(y_1, ..., y_n)`` (1-periodic in every slot) plus scales.

    The kernel maps an array of shape ``(P, n, cell_dim)`` to ``(P, dim, dim)``.
    ``scales`` are sorted nonincreasing, so the last slot is the finest.
    ``holder = (tau, L)`` is the declared Hölder data in the slow slots.
    """

    kernel: Kernel
    scales: tuple[float, ...]
    dim: int = 1
    ellipticity: float = 1.0
    holder: tuple[float, float] = (1.0, 1.0)
    cell_dim: int | None = None
    expr: str | None = field(default=None, compare=False)
    # slots on which the kernel provably depends (None: unknown)
    active: frozenset[int] | None = field(default=None, compare=False)

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if self.cell_dim is None:
            object.__setattr__(self, "cell_dim", self.dim)
        if self.dim not in (1, 2):
            raise InvalidInput(f"dim must be 1 or 2, got {self.dim}")
        if not scales or any(not (s > 0 and math.isfinite(s)) for s in scales):
            raise InvalidInput(f"scales must be positive and finite, got {scales}")
        if any(a < b for a, b in zip(scales, scales[1:])):
            raise InvalidInput(f"scales must be nonincreasing, got {scales}")
        if not 0 < self.ellipticity <= 1:
            raise InvalidInput(f"ellipticity constant must lie in (0, 1], got {self.ellipticity}")

    @property
    def n(self) -> int:
        return len(self.scales)

    @classmethod
    def from_expr(cls, text: str, scales: Sequence[float], dim: int | None = None,
                  ellipticity: float = 1.0, holder=(1.0, 1.0), cell_dim: int | None = None):
        parsed = parse_coefficient(text, n=len(scales), dim=dim, cell_dim=cell_dim)
        return cls(kernel=parsed, scales=tuple(scales), dim=parsed.dim, ellipticity=ellipticity,
                   holder=tuple(holder), cell_dim=parsed.cell_dim, expr=text,
                   active=frozenset(i - 1 for i in parsed.variables()))

    def with_scales(self, scales: Sequence[float]) -> "MultiscaleCoefficient":
        return replace(self, scales=tuple(scales))

    def __call__(self, ys: np.ndarray) -> np.ndarray:
        return self.kernel(np.asarray(ys, dtype=float))

    def depends_on(self, slot: int, n_samples: int = 64, seed: int = 0) -> bool:
        """Whether the kernel varies in slot ``slot`` (0-based)."""
        if self.active is not None:
            return slot in self.active
        rng = np.random.default_rng(seed)
        ys = rng.random((n_samples, self.n, self.cell_dim))
        moved = ys.copy()
        moved[:, slot, :] = rng.random((n_samples, self.cell_dim))
        return not np.array_equal(self(ys), self(moved))


def frac(v):
    return np.mod(v, 1.0)


def eval_multiscale(coef: MultiscaleCoefficient, x) -> np.ndarray:
    """``A(frac(x/eps_1), ..., frac(x/eps_n))`` at points ``x``.

    ``x`` of shape ``(d,)`` returns ``(d, d)``; shape ``(P, d)`` (or ``(P,)``
    when d = 1) returns ``(P, d, d)``.
    """
    x = np.asarray(x, dtype=float)
    if coef.cell_dim != coef.dim:
        raise InvalidInput("eval_multiscale needs cell_dim == dim; lift the coefficient first")
    single = x.ndim == 0 if coef.dim == 1 else x.ndim == 1
    pts = x.reshape(-1, coef.dim)
    scales = np.asarray(coef.scales)
    ys = frac(pts[:, None, :] / scales[None, :, None])
    out = coef(ys)
    return out[0] if single else out


# ------------------------------------------------------------------ lifting


def lift_quasiperiodic(B: MultiscaleCoefficient, M, eps: float) -> MultiscaleCoefficient:
    """Rewrite ``B(M x / eps)`` as a periodic coefficient with N*d scales.

    Slot (i, j) carries the variable y_ij in R^d, of which only component j
    enters ``B``: ``w_i = sum_j sign(M_ij) (y_ij)_j`` with scale
    ``eps/|M_ij|``. Zero entries of M are dropped.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    N, d = M.shape
    if B.n != 1 or B.cell_dim != N:
        raise InvalidInput(f"B must have one slot of dimension {N}, got n={B.n}, cell_dim={B.cell_dim}")
    if d != B.dim:
        raise InvalidInput(f"M is {N}x{d} but B produces {B.dim}x{B.dim} matrices")
    if not eps > 0:
        raise InvalidInput("eps must be positive")
    entries = [(i, j, M[i, j]) for i in range(N) for j in range(d) if M[i, j] != 0.0]
    if not entries:
        raise DegenerateMatrix("all entries of M are zero")
    scales = [eps / abs(m) for _, _, m in entries]
    order = sorted(range(len(entries)), key=lambda k: (-scales[k], k))
    entries = [entries[k] for k in order]
    scales = [scales[k] for k in order]
    base = B.kernel

    def lifted(ys):
        P = ys.shape[0]
        w = np.zeros((P, 1, N))
        for k, (i, j, m) in enumerate(entries):
            w[:, 0, i] += math.copysign(1.0, m) * ys[:, k, j]
        return base(w)

    return MultiscaleCoefficient(kernel=lifted, scales=tuple(scales), dim=d,
                                 ellipticity=B.ellipticity, holder=B.holder)


# ---------------------------------------------------------- reperiodization


@dataclass(frozen=True)
class ReperiodizationResult:
    sharp: MultiscaleCoefficient
    new_scales: tuple[float, ...]
    approx: RationalApproximation
    dropped: tuple[int, ...]
    # original slow slot (0-based) feeding each retained slow slot of ``sharp``
    slot_map: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {"new_scales": list(self.new_scales), "dropped": list(self.dropped),
                "slot_map": list(self.slot_map), **self.approx.to_dict()}


def reperiodize(coef: MultiscaleCoefficient, Q: float, cap: int = DEFAULT_CAP) -> ReperiodizationResult:
    """Rewrite ``A(x/eps_1..x/eps_n)`` as ``A#(x/eps'_1..x/eps'_n)`` with the
    finest new scale ``q eps_n`` Q-separated from the others.

    ``A#(y_1..y_n) = A(s_1 y_1 + p_1 y_n, ..., s_{n-1} y_{n-1} + p_{n-1} y_n, q y_n)``
    with ``eps'_i = eps_n/gamma_i`` and ``eps'_n = q eps_n``. Slots with
    ``gamma_i = 0`` disappear; the remaining slow slots are ordered by
    nonincreasing new scale.
    """
    n = coef.n
    if n < 2:
        raise InvalidInput("reperiodization needs at least two scales")
    eps = np.asarray(coef.scales)
    alphas = eps[-1] / eps[:-1]
    approx = simultaneous_approx(np.clip(alphas, 0.0, 1.0), Q, cap)
    q, p, gamma, s = approx.q, approx.p, approx.gamma, approx.s
    kept = [i for i in range(n - 1) if s[i] != 0]
    dropped = tuple(i for i in range(n - 1) if s[i] == 0)
    slow_scales = {i: eps[-1] / gamma[i] for i in kept}
    kept.sort(key=lambda i: (-slow_scales[i], i))
    new_scales = tuple(float(slow_scales[i]) for i in kept) + (float(q * eps[-1]),)
    base = coef.kernel
    cd = coef.cell_dim
    position = {orig: k for k, orig in enumerate(kept)}
    signs = np.array(s, dtype=float)
    pints = np.array(p, dtype=float)
    m = len(kept)

    def sharp_kernel(ys):
        P = ys.shape[0]
        fast = ys[:, m, :]
        args = np.empty((P, n, cd))
        for i in range(n - 1):
            if i in position:
                args[:, i, :] = signs[i] * ys[:, position[i], :] + pints[i] * fast
            else:
                args[:, i, :] = pints[i] * fast
        args[:, n - 1, :] = q * fast
        return base(frac(args))

    active = None
    if coef.active is not None:
        active = set()
        for i in range(n - 1):
            if i in coef.active:
                if i in position:
                    active.add(position[i])
                if p[i] != 0:
                    active.add(m)
        if (n - 1) in coef.active:
            active.add(m)
        active = frozenset(active)
    sharp = MultiscaleCoefficient(kernel=sharp_kernel, scales=new_scales, dim=coef.dim,
                                  ellipticity=coef.ellipticity, holder=coef.holder,
                                  cell_dim=cd, active=active)
    return ReperiodizationResult(sharp=sharp, new_scales=new_scales, approx=approx,
                                 dropped=dropped, slot_map=tuple(kept))


def identity_residual(a: MultiscaleCoefficient, b: MultiscaleCoefficient, x) -> float:
    """max |A(x) - B(x)| / (1 + |A(x)|) over the sample points (entrywise max norm)."""
    va = eval_multiscale(a, x)
    vb = eval_multiscale(b, x)
    va = va.reshape(-1, a.dim, a.dim)
    vb = vb.reshape(-1, a.dim, a.dim)
    diff = np.max(np.abs(va - vb), axis=(1, 2))
    size = np.max(np.abs(va), axis=(1, 2))
    return float(np.max(diff / (1.0 + size)))


# ---------------------------------------------------------------- checks


@dataclass(frozen=True)
class CheckReport:
    passed: bool
    min_quotient: float = math.nan
    max_stretch: float = math.nan
    max_shift_error: float = math.nan
    n_samples: int = 0

    def to_dict(self):
        return {k: getattr(self, k) for k in ("passed", "min_quotient", "max_stretch",
                                              "max_shift_error", "n_samples")}


def _random_unit(rng, count, d):
    xi = rng.standard_normal((count, d))
    return xi / np.linalg.norm(xi, axis=1, keepdims=True)


def check_ellipticity(coef: MultiscaleCoefficient, n_samples: int = 1000, seed=0) -> CheckReport:
    """Sample y and unit xi; pass iff xi.A xi >= Lambda and |A xi| <= 1/Lambda."""
    rng = np.random.default_rng(seed)
    ys = rng.random((n_samples, coef.n, coef.cell_dim))
    xi = _random_unit(rng, n_samples, coef.dim)
    A = coef(ys)
    Axi = np.einsum("pij,pj->pi", A, xi)
    quotient = np.einsum("pi,pi->p", xi, Axi)
    stretch = np.linalg.norm(Axi, axis=1)
    lam = coef.ellipticity
    mn, mx = float(quotient.min()), float(stretch.max())
    tol = 1e-12
    return CheckReport(passed=bool(mn >= lam - tol and mx <= 1.0 / lam + tol),
                       min_quotient=mn, max_stretch=mx, n_samples=n_samples)


def check_periodicity(coef: MultiscaleCoefficient, n_samples: int = 1000, seed=0) -> CheckReport:
    """Compare A(y) with A(y + z) for random integer shifts z in every slot."""
    rng = np.random.default_rng(seed)
    ys = rng.random((n_samples, coef.n, coef.cell_dim))
    shifts = rng.integers(-5, 6, size=ys.shape)
    a = coef(ys)
    b = coef(ys + shifts)
    err = float(np.max(np.abs(a - b)))
    # integer shifts are multiplied by q inside reperiodized kernels, so allow round-off
    tol = 1e-10 * (1.0 + float(np.max(np.abs(a))))
    return CheckReport(passed=err <= tol, max_shift_error=err, n_samples=n_samples)


def holder_quotient(coef: MultiscaleCoefficient, slots: Sequence[int], n_samples: int = 1000,
                    seed=0, max_step: float = 0.1) -> float:
    """Largest |A(y) - A(y')| / |y - y'|^tau over random pairs differing in ``slots``."""
    tau = coef.holder[0]
    rng = np.random.default_rng(seed)
    ys = rng.random((n_samples, coef.n, coef.cell_dim))
    moved = ys.copy()
    step = (rng.random((n_samples, len(slots), coef.cell_dim)) - 0.5) * 2 * max_step
    moved[:, list(slots), :] += step
    dist = np.sum(np.linalg.norm(step, axis=2), axis=1)
    diff = np.linalg.norm(coef(ys) - coef(moved), ord=2, axis=(1, 2))
    ok = dist > 0
    return float(np.max(diff[ok] / dist[ok] ** tau))
