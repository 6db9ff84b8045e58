"""File formats: edge lists, balance sheets, regression config, reports, manifests.

Edge lists are UTF-8 CSV with header ``lender,borrower,amount``; balance
sheets use ``bank,equity``. Floats are written with ``repr`` so that a
write/read round trip is exact.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .equity import RegressionFit, fit_log_regression, impute_equity
from .network import BalanceSheets, InterbankNetwork, NetworkError, compute_margins, derive_balance_sheets, validate

EDGE_HEADER = ("lender", "borrower", "amount")
BANK_HEADER = ("bank", "equity")


class IngestError(ValueError):
    """Malformed or inconsistent input file."""


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def _parse_float(text: str, path, line: int, column: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise IngestError(f"{path}:{line}: cannot parse {column} {text!r}") from None


def _reader(path, header: Sequence[str]):
    f = open(path, newline="", encoding="utf-8")
    rd = csv.reader(f)
    first = next(rd, None)
    if first is None or tuple(h.strip() for h in first) != tuple(header):
        f.close()
        raise IngestError(f"{path}:1: expected header {','.join(header)}, got {first}")
    return f, rd


def read_edges(path) -> list[tuple[str, str, float]]:
    """Parse an edge list; self-loops and nonpositive amounts are errors."""
    f, rd = _reader(path, EDGE_HEADER)
    edges = []
    with f:
        for line, row in enumerate(rd, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise IngestError(f"{path}:{line}: expected 3 fields, got {len(row)}")
            lender, borrower = row[0].strip(), row[1].strip()
            amount = _parse_float(row[2], path, line, "amount")
            if not lender or not borrower:
                raise IngestError(f"{path}:{line}: empty bank identifier")
            if lender == borrower:
                raise IngestError(f"{path}:{line}: self-loop on bank {lender!r}")
            if not (math.isfinite(amount) and amount > 0):
                raise IngestError(f"{path}:{line}: amount must be positive, got {row[2]!r}")
            edges.append((lender, borrower, amount))
    return edges


def read_equity(path) -> dict[str, float]:
    f, rd = _reader(path, BANK_HEADER)
    out = {}
    with f:
        for line, row in enumerate(rd, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise IngestError(f"{path}:{line}: expected 2 fields, got {len(row)}")
            bank = row[0].strip()
            if bank in out:
                raise IngestError(f"{path}:{line}: duplicate bank {bank!r}")
            out[bank] = _parse_float(row[1], path, line, "equity")
    return out


def write_edges(net: InterbankNetwork, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(EDGE_HEADER)
        for lender, borrower, amount in net.edges():
            w.writerow((lender, borrower, fmt(amount)))


def write_equity(banks: Sequence[str], equity, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(BANK_HEADER)
        for b, e in zip(banks, equity):
            w.writerow((b, fmt(float(e))))


def read_regression(path) -> RegressionFit:
    """Regression config: JSON ``{"intercept": a, "slope": b}`` or a ``position,equity`` CSV."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        try:
            return RegressionFit(float(doc["intercept"]), float(doc["slope"]))
        except KeyError as err:
            raise IngestError(f"{path}: missing key {err.args[0]!r}") from None
    f, rd = _reader(path, ("position", "equity"))
    xs, ys = [], []
    with f:
        for line, row in enumerate(rd, start=2):
            if not row:
                continue
            xs.append(_parse_float(row[0], path, line, "position"))
            ys.append(_parse_float(row[1], path, line, "equity"))
    try:
        return fit_log_regression(xs, ys)
    except ValueError as err:
        raise IngestError(f"{path}: {err}") from None


@dataclass(frozen=True, eq=False)
class Snapshot:
    net: InterbankNetwork
    sheets: BalanceSheets
    imputed: tuple = ()

    @property
    def equity(self) -> np.ndarray:
        return np.asarray(self.sheets.equity0)


def ingest(edges_path, banks_path=None, regression: RegressionFit | str | os.PathLike | None = None) -> Snapshot:
    """Load a snapshot; missing equities are imputed from ``regression`` if given."""
    edges = read_edges(edges_path)
    equity = read_equity(banks_path) if banks_path else {}
    labels = sorted({e[0] for e in edges} | {e[1] for e in edges} | set(equity))
    try:
        net = InterbankNetwork.from_edges(edges, banks=labels)
    except NetworkError as err:
        raise IngestError(str(err)) from None
    missing = [b for b in net.banks if b not in equity]
    if missing:
        if regression is None:
            raise IngestError(f"no equity for banks {missing[:5]} and no regression config")
        if not isinstance(regression, RegressionFit):
            regression = read_regression(regression)
        m = compute_margins(net)
        pos = 0.5 * (m.s_in + m.s_out)
        idx = [net.index(b) for b in missing]
        if np.any(pos[idx] <= 0):
            bad = [b for b, k in zip(missing, idx) if pos[k] <= 0]
            raise IngestError(f"cannot impute equity for banks without interbank positions: {bad[:5]}")
        imputed = impute_equity(regression, m)
        for b, k in zip(missing, idx):
            equity[b] = float(imputed[k])
    try:
        sheets = derive_balance_sheets(net, equity)
    except NetworkError as err:
        raise IngestError(str(err)) from None
    problems = validate(net, sheets)
    if problems:
        raise IngestError("; ".join(problems[:5]))
    return Snapshot(net, sheets, tuple(missing))


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, inputs: Sequence, outputs: Sequence) -> dict:
    """Record everything needed to regenerate ``outputs`` from ``inputs``."""
    doc = {
        "tool": "interbank_stress",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {str(Path(p).resolve()): sha256(p) for p in inputs if p},
        "outputs": {Path(p).name: sha256(p) for p in outputs},
        "numpy": np.__version__,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return doc


def read_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("tool") != "interbank_stress":
        raise IngestError(f"{path}: not a run manifest")
    return doc
