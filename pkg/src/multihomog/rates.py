"""Least-squares power-law fits in log-log coordinates."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateFit


class RateFit(NamedTuple):
    slope: float
    intercept: float
    r2: float


def fit_rate(pairs: Sequence[tuple[float, float]]) -> RateFit:
    """Fit ``log(error) = slope * log(scale) + intercept`` by ordinary least squares.

    >>> fit_rate([(0.1, 0.3), (0.01, 0.03), (0.001, 0.003)]).slope  # doctest: +ELLIPSIS
    1.0...
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3 or arr.shape[1] != 2:
        raise DegenerateFit("need at least three (scale, error) pairs")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise DegenerateFit("scales and errors must be positive and finite")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    if np.ptp(x) == 0:
        raise DegenerateFit("all scales coincide")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), float(r2))
