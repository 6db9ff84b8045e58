"""Observed versus expected systemic risk.

The contagion metrics are computed on the empirical network and on every
member of a null-model ensemble. Each bank keeps its empirical equity in
every sampled network; its net external assets absorb the sampled interbank
totals so that the balance-sheet identity still holds.

Sample ``m`` of an ensemble seeded with ``seed`` uses an RNG stream derived
from ``(seed, m)`` only, so results do not depend on how samples are spread
across workers. Reductions always run in sample order.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .contagion import RunConfig, default_cascades, shock_scenarios
from .network import InterbankNetwork, derive_balance_sheets
from .sdecm import Sampler, SdecmParams
from .valuation import ValuationSpec

FINAL = "final"


@dataclass(frozen=True)
class AggregateScenario:
    """Proportional shocks to every bank; H recorded at given rounds and at convergence."""

    lams: tuple = (0.005, 0.01, 0.05)
    rounds: tuple = (3, 5, 10)

    name = "shock"


@dataclass(frozen=True)
class RelevanceScenario:
    """One single-default run per bank, giving impact and vulnerability."""

    name = "default"


Scenario = AggregateScenario | RelevanceScenario


class MetricKey(NamedTuple):
    metric: str
    valuation: str
    scenario: str
    bank: str
    round: str


def network_metrics(
    net: InterbankNetwork,
    equity: np.ndarray,
    scenario: Scenario,
    valuations: Sequence[ValuationSpec],
    cfg: RunConfig,
) -> tuple[list[MetricKey], np.ndarray, int]:
    """Every metric of ``scenario`` on one network.

    Returns the metric keys, their values and the number of runs that hit
    ``cfg.max_rounds`` without converging.
    """
    sheets = derive_balance_sheets(net, equity)
    keys: list[MetricKey] = []
    vals: list[float] = []
    stuck = 0
    for val in valuations:
        if isinstance(scenario, AggregateScenario):
            out = shock_scenarios(net, sheets, scenario.lams, val, cfg, rounds=scenario.rounds)
            stuck += int((~out["converged"]).sum())
            for a, lam in enumerate(scenario.lams):
                lab = f"shock(lam={lam:g})"
                for c, r in enumerate(scenario.rounds):
                    keys.append(MetricKey("H", val.label, lab, "aggregate", str(r)))
                    vals.append(out["by_round"][a, c])
                keys.append(MetricKey("H", val.label, lab, "aggregate", FINAL))
                vals.append(out["terminal"][a])
        elif isinstance(scenario, RelevanceScenario):
            casc = default_cascades(net, sheets, val, cfg)
            stuck += int((~casc.converged).sum())
            for metric, arr in (("impact", casc.impact()), ("vulnerability", casc.vulnerability())):
                for b, v in zip(net.banks, arr):
                    keys.append(MetricKey(metric, val.label, "default", b, FINAL))
                    vals.append(v)
        else:
            raise TypeError(f"unsupported scenario {scenario!r}")
    return keys, np.asarray(vals, dtype=np.float64), stuck


@dataclass(eq=False)
class EnsembleSamples:
    keys: list
    values: np.ndarray  # (M, K)
    seed: int
    nonconverged: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def column(self, key: MetricKey) -> np.ndarray:
        return self.values[:, self.keys.index(key)]


def _chunk_worker(args):
    params, equity, scenario, valuations, cfg, seed, indices = args
    sampler = Sampler(params)
    keys, rows, stuck = None, [], []
    for m in indices:
        net = sampler.network(seed, m)
        keys, vals, s = network_metrics(net, equity, scenario, valuations, cfg)
        rows.append(vals)
        stuck.append(s)
    return keys, rows, stuck


def default_workers() -> int:
    env = os.environ.get("INTERBANK_STRESS_THREADS")
    return max(1, int(env)) if env else 1


def run_ensemble(
    params: SdecmParams,
    equity: np.ndarray,
    scenario: Scenario,
    valuations: Sequence[ValuationSpec],
    cfg: RunConfig | None = None,
    size: int = 1000,
    seed: int = 0,
    workers: int | None = None,
) -> EnsembleSamples:
    """Evaluate the scenario on ``size`` networks drawn from ``params``."""
    if size < 1:
        raise ValueError("ensemble size must be at least 1")
    cfg = cfg or RunConfig()
    workers = default_workers() if workers is None else max(1, int(workers))
    equity = np.asarray(equity, dtype=np.float64)
    n_chunks = min(size, workers * 4) if workers > 1 else 1
    bounds = np.linspace(0, size, n_chunks + 1).astype(int)
    jobs = [
        (params, equity, scenario, tuple(valuations), cfg, seed, range(bounds[c], bounds[c + 1]))
        for c in range(n_chunks)
    ]
    if workers == 1:
        results = [_chunk_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chunk_worker, jobs))
    keys = results[0][0]
    values = np.vstack([r for res in results for r in res[1]])
    stuck = np.array([s for res in results for s in res[2]], dtype=np.int64)
    return EnsembleSamples(keys, values, seed, stuck)


@dataclass(frozen=True)
class EnsembleStats:
    key: MetricKey
    observed: float
    mean: float
    std: float
    z: float | None
    rel_dev: float | None
    size: int

    @property
    def metric(self) -> str:
        return self.key.metric


def _z(observed: float, mean: float, std: float) -> float | None:
    if not std > 0:
        return None
    return (observed - mean) / std


def compare(keys: Sequence[MetricKey], observed: np.ndarray, samples: np.ndarray) -> list[EnsembleStats]:
    """Mean, unbiased std, z-score and relative deviation for every metric.

    ``z`` is ``None`` when the ensemble std is zero or undefined (one sample);
    ``rel_dev`` is ``None`` when the mean is zero.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    m = samples.shape[0]
    mean = samples.mean(axis=0)
    if m > 1:
        std = np.sqrt(((samples - mean) ** 2).sum(axis=0) / (m - 1))
    else:
        std = np.full(samples.shape[1], np.nan)
    out = []
    for k, key in enumerate(keys):
        obs = float(observed[k])
        mu = float(mean[k])
        sd = float(std[k])
        rel = (obs - mu) / mu if mu != 0 else None
        out.append(EnsembleStats(key, obs, mu, sd, _z(obs, mu, sd), rel, m))
    return out


@dataclass(frozen=True, eq=False)
class DecileProfile:
    """Group means of per-bank metrics, banks grouped by equity rank.

    ``groups[g]`` lists bank positions in group ``g`` (ascending equity);
    group sizes differ by at most one.
    """

    groups: tuple
    equity_min: np.ndarray
    equity_max: np.ndarray
    means: dict


def decile_groups(equity, n_groups: int = 10) -> list[np.ndarray]:
    equity = np.asarray(equity, dtype=np.float64)
    order = np.argsort(equity, kind="stable")
    return [g for g in np.array_split(order, min(n_groups, len(order))) if g.size]


def decile_aggregate(metrics: dict, equity, n_groups: int = 10) -> DecileProfile:
    """Average each per-bank metric array within equity deciles.

    With fewer than ``n_groups`` banks every bank forms its own group.
    """
    equity = np.asarray(equity, dtype=np.float64)
    groups = decile_groups(equity, n_groups)
    means = {
        name: np.array([np.asarray(v, dtype=np.float64)[g].mean() for g in groups])
        for name, v in metrics.items()
    }
    return DecileProfile(
        groups=tuple(groups),
        equity_min=np.array([equity[g].min() for g in groups]),
        equity_max=np.array([equity[g].max() for g in groups]),
        means=means,
    )


@dataclass(eq=False)
class ComparisonReport:
    stats: list
    deciles: dict  # (metric, valuation) -> DecileProfile with "observed"/"expected"
    samples: EnsembleSamples
    observed_nonconverged: int


def observed_vs_expected(
    net: InterbankNetwork,
    equity: np.ndarray,
    params: SdecmParams,
    scenario: Scenario,
    valuations: Sequence[ValuationSpec],
    cfg: RunConfig | None = None,
    size: int = 1000,
    seed: int = 0,
    workers: int | None = None,
) -> ComparisonReport:
    """Full comparison pipeline for one empirical snapshot."""
    cfg = cfg or RunConfig()
    if tuple(params.banks) != tuple(net.banks):
        raise ValueError("null-model banks do not match the empirical network")
    keys, observed, stuck = network_metrics(net, equity, scenario, valuations, cfg)
    samples = run_ensemble(params, equity, scenario, valuations, cfg, size, seed, workers)
    if samples.keys != keys:
        raise RuntimeError("metric layout differs between observed and sampled networks")
    stats = compare(keys, observed, samples.values)
    deciles = {}
    if isinstance(scenario, RelevanceScenario):
        expected = samples.values.mean(axis=0)
        for val in valuations:
            for metric in ("impact", "vulnerability"):
                cols = [k for k, key in enumerate(keys) if key.metric == metric and key.valuation == val.label]
                deciles[(metric, val.label)] = decile_aggregate(
                    {"observed": observed[cols], "expected": expected[cols]}, equity
                )
    return ComparisonReport(stats, deciles, samples, stuck)


def mean_abs_deviation(stats: Sequence[EnsembleStats], metric: str, valuation: str) -> float:
    d = [abs(s.observed - s.mean) for s in stats if s.key.metric == metric and s.key.valuation == valuation]
    return float(np.mean(d)) if d else math.nan
