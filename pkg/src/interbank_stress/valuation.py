"""Valuation functions for interbank claims.

Each function maps the current equity of a borrower to the fraction of the
face value of claims on it that its lenders book. All functions accept
scalars or arrays.

The non-linear DebtRank function is implemented as

    V = 1 - (1 - v) * exp(-alpha * v),    v = clip(E / E0, 0, 1)

which reduces to linear DebtRank at ``alpha = 0`` and tends to a
contagion-on-default step as ``alpha`` grows. The form with ``exp(-alpha *
(v - 1))`` can be selected with ``verbatim_exponent=True``; it is negative at
``v = 0`` for ``alpha > 0`` and is kept only for comparison.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Kind(str, Enum):
    FURFINE = "furfine"
    LINEAR_DR = "dr"
    NONLINEAR_DR = "nldr"


@dataclass(frozen=True)
class ValuationSpec:
    """Which valuation function to apply and its parameter."""

    kind: Kind = Kind.LINEAR_DR
    recovery: float = 0.4
    alpha: float = 0.0
    verbatim_exponent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not 0.0 <= self.recovery < 1.0:
            raise ValueError(f"recovery rate must lie in [0, 1), got {self.recovery}")
        if not self.alpha >= 0.0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")

    @classmethod
    def furfine(cls, recovery: float = 0.4) -> "ValuationSpec":
        return cls(Kind.FURFINE, recovery=recovery)

    @classmethod
    def linear(cls) -> "ValuationSpec":
        return cls(Kind.LINEAR_DR)

    @classmethod
    def nonlinear(cls, alpha: float) -> "ValuationSpec":
        return cls(Kind.NONLINEAR_DR, alpha=alpha)

    @property
    def label(self) -> str:
        if self.kind is Kind.FURFINE:
            return f"furfine(R={self.recovery:g})"
        if self.kind is Kind.NONLINEAR_DR:
            return f"nldr(alpha={self.alpha:g})"
        return "dr"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "recovery": self.recovery,
            "alpha": self.alpha,
            "verbatim_exponent": self.verbatim_exponent,
        }

    def __call__(self, equity, equity0, defaulted=None):
        """Evaluate the valuation for borrowers with the given equities.

        ``defaulted`` flags borrowers in default regardless of their current
        equity; only the Furfine function uses it.
        """
        if self.kind is Kind.FURFINE:
            return furfine_value(equity, self.recovery, defaulted)
        if self.kind is Kind.LINEAR_DR:
            return linear_dr_value(equity, equity0)
        return nonlinear_dr_value(equity, equity0, self.alpha, self.verbatim_exponent)


def furfine_value(equity, recovery: float, defaulted=None):
    """1 for solvent borrowers, the recovery rate for defaulted ones."""
    equity = np.asarray(equity, dtype=np.float64)
    failed = equity < 0
    if defaulted is not None:
        failed = failed | np.asarray(defaulted, bool)
    out = np.where(failed, recovery, 1.0)
    return out if out.ndim else float(out)


def linear_dr_value(equity, equity0):
    equity = np.asarray(equity, dtype=np.float64)
    equity0 = np.asarray(equity0, dtype=np.float64)
    if np.any(equity0 <= 0):
        raise ValueError("initial equity must be strictly positive")
    out = np.minimum(np.maximum(equity / equity0, 0.0), 1.0)
    return out if out.ndim else float(out)


def nonlinear_dr_value(equity, equity0, alpha: float, verbatim_exponent: bool = False):
    v = np.asarray(linear_dr_value(equity, equity0))
    if alpha == 0:
        return v if v.ndim else float(v)
    exponent = -alpha * (v - 1.0) if verbatim_exponent else -alpha * v
    out = (v - 1.0) * np.exp(exponent) + 1.0
    return out if out.ndim else float(out)
