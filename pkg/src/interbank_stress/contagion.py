"""Equity re-valuation dynamics and the systemic risk metrics built on them.

After a shock, every bank re-values its interbank claims and updates its
equity,

    E_i(t+1) = N_i + sum_j W_ij V(E_j(t)) - s_in_i,

until equities stop changing. ``N`` are the post-shock net external assets.
Since ``E(1) = N + s_out - s_in`` (all claims at face value), the map is
iterated in the equivalent loss form

    E_i(t+1) = E_i(1) - sum_j W_ij (1 - V(E_j(t))),

which keeps an unshocked system exactly at its fixed point in floating
point. A bank defaulted by assumption is pinned at zero equity for the
whole run.

The engine iterates several scenarios at once (one row per scenario) so that
the ``n`` single-default runs behind impact and vulnerability cost one
batched sparse product per round.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .network import BalanceSheets, InterbankNetwork
from .valuation import Kind, ValuationSpec

EPS_FACTOR = 1e-12


@dataclass(frozen=True)
class ProportionalAll:
    """Every bank loses a fraction ``lam`` of its equity."""

    lam: float

    def __post_init__(self):
        # lam = 0 is accepted for zero-shock checks.
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"shock size must lie in (0, 1), got {self.lam}")

    @property
    def label(self) -> str:
        return f"shock(lam={self.lam:g})"


@dataclass(frozen=True)
class DefaultOne:
    """A single bank loses all of its equity and is flagged defaulted."""

    bank: str

    @property
    def label(self) -> str:
        return f"default({self.bank})"


ShockSpec = ProportionalAll | DefaultOne


@dataclass(frozen=True)
class RunConfig:
    tolerance: float = 1e-10
    max_rounds: int = 5000
    record_steps: tuple = (3, 5, 10)

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        object.__setattr__(self, "record_steps", tuple(int(r) for r in self.record_steps))


@dataclass(frozen=True)
class ShockedState:
    """Balance sheets after the shock together with ``E(1)``."""

    sheets: BalanceSheets
    equity1: np.ndarray

    @property
    def equity0(self) -> np.ndarray:
        return self.sheets.equity0


@dataclass(frozen=True, eq=False)
class EquityTrajectory:
    """Equities per round; row ``t`` holds ``E(t)`` for ``t = 0 .. t*``."""

    equity: np.ndarray
    converged: bool
    rounds: int

    @property
    def equity0(self) -> np.ndarray:
        return self.equity[0]

    @property
    def equity1(self) -> np.ndarray:
        return self.equity[1]

    @property
    def terminal(self) -> np.ndarray:
        return self.equity[-1]

    def at_round(self, r: int) -> np.ndarray:
        """Equity after ``r`` re-valuation rounds (terminal if the run stopped earlier)."""
        return self.equity[min(1 + r, len(self.equity) - 1)]


def apply_shock(sheets: BalanceSheets, shock: ShockSpec) -> ShockedState:
    """Lower net external assets according to ``shock``."""
    net_ext = np.array(sheets.net_external)
    defaulted = np.array(sheets.defaulted)
    if isinstance(shock, ProportionalAll):
        net_ext = net_ext - shock.lam * sheets.equity0
        e1 = (1.0 - shock.lam) * sheets.equity0
    elif isinstance(shock, DefaultOne):
        try:
            b = sheets.banks.index(shock.bank)
        except ValueError:
            raise KeyError(f"unknown bank {shock.bank!r}") from None
        net_ext[b] -= sheets.equity0[b]
        defaulted[b] = True
        e1 = np.array(sheets.equity0)
    else:
        raise TypeError(f"unsupported shock {shock!r}")
    shocked = BalanceSheets(
        banks=sheets.banks,
        equity0=sheets.equity0,
        net_external=net_ext,
        s_in=sheets.s_in,
        s_out=sheets.s_out,
        defaulted=defaulted,
    )
    e1[defaulted] = 0.0
    e1.setflags(write=False)
    return ShockedState(shocked, e1)


@dataclass(eq=False)
class _BatchResult:
    terminal: np.ndarray  # (S, n)
    rounds: np.ndarray  # (S,)
    converged: np.ndarray  # (S,)
    totals: np.ndarray | None = None  # (T + 1, S): sum of equity at t = 1 .. T + 1
    path: list = field(default_factory=list)


def _propagate(
    weights,
    equity0: np.ndarray,
    equity1: np.ndarray,
    defaulted: np.ndarray,
    valuation: ValuationSpec,
    cfg: RunConfig,
    keep_path: bool = False,
    keep_totals: bool = False,
) -> _BatchResult:
    """Iterate the re-valuation map for a batch of scenarios (rows)."""
    start = np.array(equity1, dtype=np.float64, ndmin=2)
    eq = start.copy()
    pinned = np.array(defaulted, dtype=bool, ndmin=2)
    failed = pinned | (eq < 0)
    n_scen = eq.shape[0]
    eps = EPS_FACTOR * float(equity0.mean()) if equity0.size else EPS_FACTOR
    scale = np.maximum(equity0, eps)
    active = np.ones(n_scen, bool)
    rounds = np.zeros(n_scen, dtype=np.int64)
    path = [eq.copy()] if keep_path else []
    totals = [eq.sum(axis=1)] if keep_totals else None
    is_furfine = valuation.kind is Kind.FURFINE

    for _ in range(cfg.max_rounds):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        cur = eq[rows]
        v = valuation(cur, equity0, failed[rows])
        new = start[rows] - (weights @ (1.0 - v).T).T
        new[pinned[rows]] = 0.0
        done = (np.abs(new - cur) / scale).max(axis=1, initial=0.0) < cfg.tolerance
        eq[rows] = new
        rounds[rows] += 1
        if is_furfine:
            failed[rows] |= new < 0
        active[rows[done]] = False
        if keep_path:
            path.append(eq.copy())
        if keep_totals:
            totals.append(eq.sum(axis=1))

    return _BatchResult(
        terminal=eq,
        rounds=rounds,
        converged=~active,
        totals=np.array(totals) if keep_totals else None,
        path=path,
    )


def run(
    net: InterbankNetwork,
    state: ShockedState,
    valuation: ValuationSpec,
    cfg: RunConfig | None = None,
) -> EquityTrajectory:
    """Iterate the re-valuation map from ``E(1)`` until convergence.

    Non-convergence within ``cfg.max_rounds`` is reported through
    ``converged=False`` rather than raised.
    """
    cfg = cfg or RunConfig()
    sh = state.sheets
    res = _propagate(
        net.weights,
        sh.equity0,
        state.equity1,
        sh.defaulted,
        valuation,
        cfg,
        keep_path=True,
    )
    equity = np.vstack([sh.equity0[None, :]] + [p[0][None, :] for p in res.path])
    equity.setflags(write=False)
    return EquityTrajectory(equity, bool(res.converged[0]), int(res.rounds[0]))


def aggregate_loss_H(
    traj: EquityTrajectory,
    equity0: np.ndarray | None = None,
    equity1: np.ndarray | None = None,
    round: int | None = None,
) -> float:
    """Relative equity loss caused by re-valuation rounds alone.

    The direct loss from the shock is excluded. ``round=None`` uses the
    terminal equities; an integer uses the equity after that many rounds.
    """
    e0 = traj.equity0 if equity0 is None else np.asarray(equity0)
    e1 = traj.equity1 if equity1 is None else np.asarray(equity1)
    et = traj.terminal if round is None else traj.at_round(round)
    return float((e1 - et).sum() / e0.sum())


def h_series(traj: EquityTrajectory, rounds: Sequence[int] | None = None) -> np.ndarray:
    """H after each of ``rounds`` (default: every round up to the terminal one)."""
    if rounds is None:
        rounds = range(traj.rounds + 1)
    return np.array([aggregate_loss_H(traj, round=r) for r in rounds])


def shock_scenarios(
    net: InterbankNetwork,
    sheets: BalanceSheets,
    lams: Sequence[float],
    valuation: ValuationSpec,
    cfg: RunConfig | None = None,
    rounds: Sequence[int] = (),
) -> dict:
    """Run several proportional shocks at once.

    Returns a dict with ``"terminal"`` (H at convergence per shock),
    ``"by_round"`` (array ``(len(lams), len(rounds))``), ``"converged"`` and
    ``"rounds"``.
    """
    cfg = cfg or RunConfig()
    lams = np.asarray(lams, dtype=np.float64)
    for lam in lams:
        ProportionalAll(float(lam))
    e0 = sheets.equity0
    e1 = (1.0 - lams[:, None]) * e0[None, :]
    res = _propagate(
        net.weights,
        e0,
        e1,
        np.zeros_like(e1, dtype=bool),
        valuation,
        cfg,
        keep_totals=bool(len(rounds)),
    )
    total0 = e0.sum()
    start = e1.sum(axis=1)
    terminal = (start - res.terminal.sum(axis=1)) / total0
    by_round = np.empty((len(lams), len(rounds)))
    if len(rounds):
        last = len(res.totals) - 1
        for c, r in enumerate(rounds):
            by_round[:, c] = (start - res.totals[min(r, last)]) / total0
    return {
        "terminal": terminal,
        "by_round": by_round,
        "converged": res.converged,
        "rounds": res.rounds,
    }


@dataclass(frozen=True, eq=False)
class DefaultCascades:
    """Terminal equities of every single-default scenario.

    ``terminal[j, i]`` is the equity of bank ``i`` at convergence when bank
    ``j`` defaults and all other banks start unshocked.
    """

    banks: tuple
    equity0: np.ndarray
    terminal: np.ndarray
    converged: np.ndarray
    rounds: np.ndarray

    def impact(self) -> np.ndarray:
        n = len(self.banks)
        if n < 2:
            raise ValueError("impact is undefined for fewer than two banks")
        e0 = self.equity0
        others_final = self.terminal.sum(axis=1) - np.diag(self.terminal)
        others_start = e0.sum() - e0
        return 1.0 - others_final / others_start

    def vulnerability(self) -> np.ndarray:
        n = len(self.banks)
        if n < 2:
            raise ValueError("vulnerability is undefined for fewer than two banks")
        loss = 1.0 - self.terminal / self.equity0[None, :]
        np.fill_diagonal(loss, 0.0)
        return loss.sum(axis=0) / (n - 1)

    def aggregate_loss(self) -> np.ndarray:
        """H of each single-default scenario (initially defaulted bank contributes zero)."""
        e0 = self.equity0
        start = e0.sum() - e0
        final = self.terminal.sum(axis=1) - np.diag(self.terminal)
        return (start - final) / e0.sum()


def default_cascades(
    net: InterbankNetwork,
    sheets: BalanceSheets,
    valuation: ValuationSpec,
    cfg: RunConfig | None = None,
    banks: Sequence[str] | None = None,
) -> DefaultCascades:
    """Run one single-default scenario per bank (or per listed bank)."""
    cfg = cfg or RunConfig()
    n = net.n
    idx = np.arange(n) if banks is None else np.array([net.index(b) for b in banks])
    e0 = sheets.equity0
    rows = np.arange(len(idx))
    defaulted = np.zeros((len(idx), n), bool)
    defaulted[rows, idx] = True
    e1 = np.tile(e0, (len(idx), 1))
    e1[rows, idx] = 0.0
    res = _propagate(net.weights, e0, e1, defaulted, valuation, cfg)
    return DefaultCascades(
        banks=tuple(net.banks[k] for k in idx) if banks is not None else net.banks,
        equity0=e0,
        terminal=res.terminal,
        converged=res.converged,
        rounds=res.rounds,
    )


def impact(
    net: InterbankNetwork,
    sheets: BalanceSheets,
    bank: str,
    valuation: ValuationSpec,
    cfg: RunConfig | None = None,
) -> float:
    """Relative equity lost by the other banks when ``bank`` defaults."""
    if net.n < 2:
        raise ValueError("impact is undefined for fewer than two banks")
    i = net.index(bank)
    traj = run(net, apply_shock(sheets, DefaultOne(bank)), valuation, cfg)
    others = np.arange(net.n) != i
    return float(1.0 - traj.terminal[others].sum() / sheets.equity0[others].sum())


def vulnerability(
    net: InterbankNetwork,
    sheets: BalanceSheets,
    bank: str,
    valuation: ValuationSpec,
    cfg: RunConfig | None = None,
) -> float:
    """Average relative equity loss of ``bank`` over every other bank's default."""
    if net.n < 2:
        raise ValueError("vulnerability is undefined for fewer than two banks")
    i = net.index(bank)
    others = [b for b in net.banks if b != bank]
    casc = default_cascades(net, sheets, valuation, cfg, banks=others)
    return float(np.mean(1.0 - casc.terminal[:, i] / sheets.equity0[i]))
