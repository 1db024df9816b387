"""Rate estimation helpers: log-log slope fits and C/N envelope checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.slope, self.intercept, self.r2)


def fit_slope(pairs) -> SlopeFit:
    """Least-squares slope of log(value) against log(n).

    `pairs` is a sequence of (n, value) with n > 0 and value > 0; at least
    three pairs are required.  Nonpositive values are rejected because the
    fit lives on the log-log plane.
    """
    arr = np.asarray(list(pairs), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValueError("need at least 3 (n, value) pairs")
    if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        raise ValueError("all n and values must be positive and finite")
    logn = np.log(arr[:, 0])
    logv = np.log(arr[:, 1])
    slope, intercept = np.polyfit(logn, logv, 1)
    pred = slope * logn + intercept
    ss_res = float(np.sum((logv - pred) ** 2))
    ss_tot = float(np.sum((logv - logv.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-20 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return SlopeFit(float(slope), float(intercept), float(r2))


def envelope_constant(pairs) -> float:
    """Constant C such that value <= C / n, estimated from the two largest n."""
    arr = np.asarray(list(pairs), dtype=float)
    order = np.argsort(arr[:, 0])
    top = arr[order][-2:]
    return float(np.max(top[:, 0] * top[:, 1]))


def envelope_holds(pairs, c: float, slack: float = 0.05) -> bool:
    """Check value_n <= (1 + slack) * C / n for every pair."""
    arr = np.asarray(list(pairs), dtype=float)
    return bool(np.all(arr[:, 1] <= (1.0 + slack) * c / arr[:, 0] + 1e-300))
