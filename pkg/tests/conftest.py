import numpy as np
import pytest

from interbank_stress import InterbankNetwork, derive_balance_sheets

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def two_banks():
    """Bank 2 lends 5 to bank 1; equities (50, 10)."""
    net = InterbankNetwork.from_edges([("2", "1", 5.0)], banks=["1", "2"])
    return net, derive_balance_sheets(net, {"1": 50.0, "2": 10.0})


@pytest.fixture
def three_ring():
    """Ring 1 -> 3 -> 2 -> 1 of lending; bank 2 cannot absorb its loss on bank 1, bank 3 can."""
    net = InterbankNetwork.from_edges(
        [("2", "1", 8.0), ("3", "2", 3.0), ("1", "3", 2.0)], banks=["1", "2", "3"]
    )
    return net, derive_balance_sheets(net, {"1": 4.0, "2": 5.0, "3": 10.0})


def random_network(rng, n, density=0.3, scale=10.0):
    w = np.where(rng.random((n, n)) < density, rng.exponential(scale, (n, n)), 0.0)
    np.fill_diagonal(w, 0.0)
    return InterbankNetwork.from_dense(w, [f"b{k}" for k in range(n)])
