"""Synthetic interbank snapshots with heavy-tailed, degree-coupled margins.

Each bank gets a lending and a borrowing fitness drawn log-normally. Links
follow a fitness model

    p_ij = z (x_i y_j)^c / (1 + z (x_i y_j)^c),

with ``z`` chosen so that the expected number of links equals
``density * n * (n - 1)``. A present link carries ``x_i y_j / (p_ij Y)``
(``Y`` the total borrowing fitness) times unit-mean exponential noise, so
expected strengths track the fitnesses. Equity follows the power law of
:mod:`interbank_stress.equity` applied to the average fitness.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .equity import RegressionFit
from .network import InterbankNetwork
from .sdecm import FitTargets


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 100
    strength_median: float = 100.0
    strength_sigma: float = 1.0
    coupling: float = 1.0
    density: float = 0.05
    equity_slope: float = 0.83
    equity_ratio: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two banks")
        if not 0 < self.density < 1:
            raise ValueError("density must lie in (0, 1)")
        if self.strength_median <= 0 or self.strength_sigma < 0:
            raise ValueError("invalid strength distribution")
        if self.coupling <= 0 or self.equity_ratio <= 0:
            raise ValueError("coupling and equity_ratio must be positive")

    @property
    def regression(self) -> RegressionFit:
        """Equity law: ``equity_ratio`` times the position at the median, slope ``equity_slope``."""
        a = math.log(self.equity_ratio) + (1 - self.equity_slope) * math.log(self.strength_median)
        return RegressionFit(a, self.equity_slope)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SyntheticSnapshot:
    net: InterbankNetwork
    equity: np.ndarray
    link_prob: np.ndarray


def _fitness_probs(xy: np.ndarray, density: float, n: int) -> np.ndarray:
    target = density * n * (n - 1)
    off = ~np.eye(n, dtype=bool)
    logxy = np.log(xy[off])

    def excess(logz):
        return (1.0 / (1.0 + np.exp(-(logz + logxy)))).sum() - target

    logz = brentq(excess, -200.0, 200.0, xtol=1e-14, rtol=1e-15, maxiter=500)
    p = np.zeros((n, n))
    p[off] = 1.0 / (1.0 + np.exp(-(logz + logxy)))
    return p


def generate(spec: SyntheticSpec) -> SyntheticSnapshot:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    n = spec.n
    mu = math.log(spec.strength_median)
    x = rng.lognormal(mu, spec.strength_sigma, n)
    y = rng.lognormal(mu, spec.strength_sigma, n)
    p = _fitness_probs(np.outer(x, y) ** spec.coupling, spec.density, n)
    links = rng.random((n, n)) < p
    mean_w = np.zeros((n, n))
    np.divide(np.outer(x, y) / y.sum(), p, out=mean_w, where=p > 0)
    w = np.where(links, mean_w * rng.exponential(1.0, (n, n)), 0.0)
    banks = [f"B{k:0{len(str(n - 1))}d}" for k in range(n)]
    net = InterbankNetwork.from_dense(w, banks)
    equity = spec.regression.predict(0.5 * (x + y))
    FitTargets.from_network(net)  # raises if the margins are not fittable
    return SyntheticSnapshot(net, equity, p)


def synth(spec: SyntheticSpec, out_dir) -> tuple[Path, Path]:
    """Write ``edges.csv`` and ``banks.csv`` for ``spec`` into ``out_dir``."""
    from .io import write_edges, write_equity

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snap = generate(spec)
    edges, banks = out / "edges.csv", out / "banks.csv"
    write_edges(snap.net, edges)
    write_equity(snap.net.banks, snap.equity, banks)
    return edges, banks
