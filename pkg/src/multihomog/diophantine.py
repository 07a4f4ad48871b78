"""Simultaneous rational approximation with a certified residual bound.

Given reals alpha_1..alpha_m in [0, 1] and Q > 1, Dirichlet's theorem
guarantees integers q, p_i with 1 <= q < Q**m and

    max_i |alpha_i - p_i/q| < 1/(q Q).

:func:`simultaneous_approx` finds the smallest such q by a linear scan
(p_i is the nearest integer to q*alpha_i), which is the minimiser of the
residual for each fixed q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CapExceeded, DimensionMismatch, InvalidInput, NoApproximation

DEFAULT_CAP = 10**7
ZERO_TOL = 1e-14


@dataclass(frozen=True)
class RationalApproximation:
    """Common denominator ``q``, numerators ``p``, residuals ``gamma``,
    signs ``s`` of ``alpha_i - p_i/q`` and the separation target ``Q``."""

    q: int
    p: tuple[int, ...]
    gamma: tuple[float, ...]
    s: tuple[int, ...]
    Q: float

    @property
    def m(self) -> int:
        return len(self.p)

    def separation(self) -> tuple[float, ...]:
        """Ratios 1/(q gamma_i); infinite where gamma_i vanishes."""
        return tuple(math.inf if g == 0.0 else 1.0 / (self.q * g) for g in self.gamma)

    def to_dict(self) -> dict:
        return {"q": self.q, "p": list(self.p), "gamma": list(self.gamma),
                "s": list(self.s), "Q": self.Q}


class Certificate(NamedTuple):
    ok: bool
    worst: float  # max_i q*Q*gamma_i, must be < 1
    reasons: tuple[str, ...] = ()


def search_bound(Q: float, m: int) -> int:
    return int(math.ceil(Q**m))


def _residuals(alphas: np.ndarray, q: int, p: np.ndarray) -> np.ndarray:
    return np.abs(alphas - p / q)


def _signs(alphas, q, p, gamma):
    s = []
    for a, pi, g in zip(alphas, p, gamma):
        if g <= ZERO_TOL:
            s.append(0)
        else:
            s.append(1 if a - pi / q > 0 else -1)
    return tuple(s)


def _validate(alphas: Sequence[float], Q: float) -> np.ndarray:
    arr = np.asarray(alphas, dtype=float).reshape(-1)
    if arr.size == 0:
        raise InvalidInput("need at least one alpha")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidInput(f"alphas must lie in [0, 1], got {arr.tolist()}")
    if not (math.isfinite(Q) and Q > 1.0):
        raise InvalidInput(f"Q must be a finite real > 1, got {Q}")
    return arr


def simultaneous_approx(alphas: Sequence[float], Q: float, cap: int = DEFAULT_CAP) -> RationalApproximation:
    """Smallest q with max_i |alpha_i - round(q alpha_i)/q| < 1/(q Q).

    Raises :class:`CapExceeded` when ``ceil(Q**m) > cap`` and
    :class:`NoApproximation` in the (measure-zero) boundary cases where the
    strict inequality cannot be met below ``ceil(Q**m)``.
    """
    arr = _validate(alphas, Q)
    m = arr.size
    bound = search_bound(Q, m)
    if bound > cap:
        raise CapExceeded(f"ceil(Q**m) = {bound} exceeds search cap {cap}")

    start = 1
    chunk = 64
    while start < bound:
        stop = min(bound, start + chunk)
        qs = np.arange(start, stop, dtype=float)
        # np.rint rounds half to even
        ps = np.rint(qs[:, None] * arr[None, :])
        worst = np.max(np.abs(arr[None, :] - ps / qs[:, None]), axis=1)
        hits = np.nonzero(worst < 1.0 / (qs * Q))[0]
        if hits.size:
            k = int(hits[0])
            q = int(qs[k])
            p = ps[k].astype(np.int64)
            gamma = _residuals(arr, q, p)
            return RationalApproximation(
                q=q,
                p=tuple(int(v) for v in p),
                gamma=tuple(float(g) for g in gamma),
                s=_signs(arr, q, p, gamma),
                Q=float(Q),
            )
        start = stop
        chunk = min(chunk * 2, 1 << 16)
    raise NoApproximation(
        f"no q < {bound} satisfies the strict bound for alphas={arr.tolist()}, Q={Q}; "
        "choose Q strictly below the boundary"
    )


def verify_approx(approx: RationalApproximation, alphas: Sequence[float], Q: float) -> Certificate:
    """Check every invariant of ``approx`` against ``alphas`` and ``Q``."""
    arr = np.asarray(alphas, dtype=float).reshape(-1)
    if arr.size != len(approx.p) or len(approx.gamma) != len(approx.p) or len(approx.s) != len(approx.p):
        raise DimensionMismatch(f"approximation has {len(approx.p)} numerators, got {arr.size} alphas")
    q = approx.q
    p = np.asarray(approx.p, dtype=float)
    reasons = []
    if not (1 <= q < search_bound(Q, arr.size)):
        reasons.append(f"q={q} outside [1, ceil(Q^m))")
    gamma = _residuals(arr, q, p)
    worst = float(np.max(gamma) * q * Q)
    if not np.max(gamma) < 1.0 / (q * Q):
        reasons.append(f"residual bound violated: max q*Q*gamma = {worst:.6g}")
    if np.all((arr >= 0) & (arr <= 1)) and np.any((p < 0) | (p > q)):
        reasons.append("numerator outside [0, q]")
    for i, (g, s) in enumerate(zip(gamma, approx.s)):
        if (s == 0) != (g <= ZERO_TOL):
            reasons.append(f"sign s[{i}]={s} inconsistent with gamma={g:.3g}")
    return Certificate(ok=not reasons, worst=worst, reasons=tuple(reasons))


def approx_with_integer_parts(ratios: Sequence[float], Q: float, cap: int = DEFAULT_CAP) -> RationalApproximation:
    """Approximate arbitrary nonnegative ratios by splitting off integer parts.

    alpha = k + frac with frac approximated by p'/q gives p = k q + p'; the
    residuals and the Dirichlet bound are unchanged.
    """
    arr = np.asarray(ratios, dtype=float).reshape(-1)
    if np.any(arr < 0):
        raise InvalidInput("ratios must be nonnegative")
    whole = np.floor(arr)
    frac = arr - whole
    base = simultaneous_approx(frac, Q, cap)
    p = tuple(int(w) * base.q + pi for w, pi in zip(whole, base.p))
    return RationalApproximation(q=base.q, p=p, gamma=base.gamma, s=base.s, Q=base.Q)
