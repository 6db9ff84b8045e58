"""Equity imputation from interbank positions.

Equity is modelled as a power law of the average interbank position,

    log E = a + b * log((s_in + s_out) / 2),

fitted by ordinary least squares on natural logarithms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .network import NodeMargins


@dataclass(frozen=True)
class RegressionFit:
    intercept: float
    slope: float
    r: float = float("nan")
    r2: float = float("nan")
    count: int = 0

    def predict(self, position) -> np.ndarray:
        position = np.asarray(position, dtype=np.float64)
        if np.any(position <= 0):
            raise ValueError("imputation needs a strictly positive interbank position")
        return np.exp(self.intercept + self.slope * np.log(position))

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "slope": self.slope,
            "r": self.r,
            "r2": self.r2,
            "count": self.count,
        }


def fit_log_regression(position, equity) -> RegressionFit:
    """OLS of ``log(equity)`` on ``log(position)``."""
    x = np.asarray(position, dtype=np.float64)
    y = np.asarray(equity, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("position and equity must be 1-d arrays of equal length")
    if x.size < 3:
        raise ValueError("need at least three observations")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("positions and equities must be strictly positive")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise ValueError("positions have no variance")
    if np.ptp(ly) == 0:
        return RegressionFit(float(ly[0]), 0.0, 0.0, 0.0, int(x.size))
    res = stats.linregress(lx, ly)
    return RegressionFit(float(res.intercept), float(res.slope), float(res.rvalue), float(res.rvalue**2), int(x.size))


def average_position(margins: NodeMargins) -> np.ndarray:
    return 0.5 * (np.asarray(margins.s_in) + np.asarray(margins.s_out))


def impute_equity(fit: RegressionFit, margins: NodeMargins) -> np.ndarray:
    """Point prediction of equity for every bank; no residual noise is added."""
    return fit.predict(average_position(margins))
