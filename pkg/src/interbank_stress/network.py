"""Interbank market snapshots: exposures, margins and balance sheets.

A snapshot is a set of ``n`` banks and a directed weighted exposure matrix
``W`` where ``W[i, j] > 0`` is the amount lent by bank ``i`` to bank ``j``.
Adjacency, degrees and strengths are always derived from ``W``.

Balance sheets close the accounting identity

    s_out + N_ext = s_in + E

so the net external assets ``N_ext`` are the residual once equity and the
interbank totals are known.
"""
from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

IDENTITY_RTOL = 1e-9


class NetworkError(ValueError):
    """Raised when a network or balance sheet cannot be built."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NodeMargins:
    """Per-bank degrees and strengths, aligned with ``InterbankNetwork.banks``."""

    k_out: np.ndarray
    k_in: np.ndarray
    s_out: np.ndarray
    s_in: np.ndarray

    @property
    def num_links(self) -> int:
        return int(self.k_out.sum())

    @property
    def total_volume(self) -> float:
        return float(self.s_out.sum())


@dataclass(frozen=True, eq=False)
class InterbankNetwork:
    """Directed weighted exposure network.

    Build it with :meth:`from_edges` or :meth:`from_dense`, which sum
    parallel loans and reject self-loops and nonpositive amounts. The raw
    constructor performs no checks so that :func:`validate` can be exercised
    on corrupted data.
    """

    banks: tuple
    weights: sp.csr_array

    def __post_init__(self):
        n = len(self.banks)
        if self.weights.shape != (n, n):
            raise NetworkError(
                f"weight matrix shape {self.weights.shape} does not match {n} banks"
            )
        if len(set(self.banks)) != n:
            raise NetworkError("bank identifiers must be unique")

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[str, str, float]],
        banks: Sequence[str] | None = None,
    ) -> "InterbankNetwork":
        """Build a network from ``(lender, borrower, amount)`` triples.

        Repeated pairs are summed. Bank order is ``banks`` if given,
        otherwise the sorted set of labels appearing in ``edges``.
        """
        edges = list(edges)
        if banks is None:
            banks = sorted({e[0] for e in edges} | {e[1] for e in edges})
        banks = tuple(str(b) for b in banks)
        index = {b: k for k, b in enumerate(banks)}
        rows, cols, vals = [], [], []
        for lender, borrower, amount in edges:
            if lender == borrower:
                raise NetworkError(f"self-loop on bank {lender!r}")
            amount = float(amount)
            if not np.isfinite(amount) or amount <= 0:
                raise NetworkError(
                    f"nonpositive or non-finite exposure {amount!r} from {lender!r} to {borrower!r}"
                )
            try:
                rows.append(index[str(lender)])
                cols.append(index[str(borrower)])
            except KeyError as err:
                raise NetworkError(f"unknown bank {err.args[0]!r}") from None
            vals.append(amount)
        n = len(banks)
        w = sp.coo_array(
            (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(n, n),
        ).tocsr()  # duplicates are summed here
        w.sort_indices()
        return cls(banks, w)

    @classmethod
    def from_dense(cls, matrix, banks: Sequence[str] | None = None) -> "InterbankNetwork":
        matrix = np.asarray(matrix, dtype=np.float64)
        n = matrix.shape[0]
        if matrix.shape != (n, n):
            raise NetworkError("exposure matrix must be square")
        if banks is None:
            banks = [str(k) for k in range(n)]
        if np.any(np.diag(matrix) != 0):
            raise NetworkError("self-loops are not allowed")
        if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
            raise NetworkError("exposures must be finite and nonnegative")
        rows, cols = np.nonzero(matrix)
        return cls.from_edges(
            zip((banks[r] for r in rows), (banks[c] for c in cols), matrix[rows, cols]),
            banks=banks,
        )

    @property
    def n(self) -> int:
        return len(self.banks)

    @property
    def num_links(self) -> int:
        return int(self.weights.nnz)

    def index(self, bank: str) -> int:
        try:
            return self.banks.index(bank)
        except ValueError:
            raise KeyError(f"unknown bank {bank!r}") from None

    def adjacency(self) -> sp.csr_array:
        a = self.weights.copy()
        a.data = (a.data != 0).astype(np.float64)
        a.eliminate_zeros()
        return a

    def dense(self) -> np.ndarray:
        return self.weights.toarray()

    def edges(self):
        """Yield ``(lender, borrower, amount)`` in row-major order."""
        w = self.weights.tocoo()
        order = np.lexsort((w.col, w.row))
        for k in order:
            yield self.banks[w.row[k]], self.banks[w.col[k]], float(w.data[k])


def compute_margins(net: InterbankNetwork) -> NodeMargins:
    """Row and column counts and sums of the exposure matrix."""
    w = net.weights
    a = net.adjacency()
    return NodeMargins(
        k_out=_frozen(a.sum(axis=1)),
        k_in=_frozen(a.sum(axis=0)),
        s_out=_frozen(w.sum(axis=1)),
        s_in=_frozen(w.sum(axis=0)),
    )


@dataclass(frozen=True, eq=False)
class BalanceSheets:
    """Balance sheets of every bank in a network, as aligned arrays.

    Attributes
    ----------
    equity0 : ndarray
        Pre-shock equity ``E(0)``.
    net_external : ndarray
        Net external assets; may be negative.
    s_in, s_out : ndarray
        Interbank liabilities and assets.
    defaulted : ndarray of bool
        Banks defaulted by assumption (set by a single-default shock).
    """

    banks: tuple
    equity0: np.ndarray
    net_external: np.ndarray
    s_in: np.ndarray
    s_out: np.ndarray
    defaulted: np.ndarray | None = None

    def __post_init__(self):
        for name in ("equity0", "net_external", "s_in", "s_out"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        d = np.zeros(len(self.banks), bool) if self.defaulted is None else np.array(self.defaulted, bool)
        d.setflags(write=False)
        object.__setattr__(self, "defaulted", d)

    @property
    def n(self) -> int:
        return len(self.banks)

    def book_equity(self) -> np.ndarray:
        """Equity implied by the identity with every claim at face value."""
        return self.net_external + self.s_out - self.s_in

    def identity_residual(self) -> np.ndarray:
        return self.s_out + self.net_external - self.s_in - self.equity0


def derive_balance_sheets(
    net: InterbankNetwork, equity: Mapping[str, float] | Sequence[float] | np.ndarray
) -> BalanceSheets:
    """Close the accounting identity with net external assets as residual.

    ``equity`` is either a mapping from bank label to equity or an array
    aligned with ``net.banks``.
    """
    if isinstance(equity, Mapping):
        missing = [b for b in net.banks if b not in equity]
        if missing:
            raise NetworkError(f"missing equity for banks {missing[:5]}")
        e = np.array([float(equity[b]) for b in net.banks])
    else:
        e = np.asarray(equity, dtype=np.float64)
        if e.shape != (net.n,):
            raise NetworkError(f"equity has shape {e.shape}, expected ({net.n},)")
    bad = [net.banks[k] for k in np.flatnonzero(~(e > 0))]
    if bad:
        raise NetworkError(f"equity must be strictly positive; offending banks {bad[:5]}")
    m = compute_margins(net)
    return BalanceSheets(
        banks=net.banks,
        equity0=e,
        net_external=m.s_in + e - m.s_out,
        s_in=m.s_in,
        s_out=m.s_out,
    )


def validate(net: InterbankNetwork, sheets: BalanceSheets | None = None) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    problems = []
    w = net.weights.tocoo()
    for i, j, v in zip(w.row, w.col, w.data):
        if i == j:
            problems.append(f"self-loop on bank {net.banks[i]!r}")
        if not v > 0:
            problems.append(
                f"nonpositive exposure {v!r} from {net.banks[i]!r} to {net.banks[j]!r}"
            )
    if sheets is None:
        return problems
    if sheets.banks != net.banks:
        problems.append("balance sheets are not aligned with the network banks")
        return problems
    m = compute_margins(net)
    for name, ours, theirs in (("s_in", m.s_in, sheets.s_in), ("s_out", m.s_out, sheets.s_out)):
        for k in np.flatnonzero(~np.isclose(ours, theirs, rtol=IDENTITY_RTOL, atol=0.0)):
            problems.append(f"{name} of bank {net.banks[k]!r} disagrees with the exposures")
    terms = np.abs(np.stack([sheets.s_out, sheets.net_external, sheets.s_in, sheets.equity0]))
    tol = IDENTITY_RTOL * terms.max(axis=0)
    for k in np.flatnonzero(np.abs(sheets.identity_residual()) > tol):
        problems.append(f"balance-sheet identity violated for bank {net.banks[k]!r}")
    for k in np.flatnonzero(~(sheets.equity0 > 0)):
        problems.append(f"nonpositive equity {sheets.equity0[k]!r} for bank {net.banks[k]!r}")
    return problems
