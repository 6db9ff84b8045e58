import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from interbank_stress import InterbankNetwork, compute_margins, derive_balance_sheets, validate
from interbank_stress.network import NetworkError

from conftest import random_network


def test_single_edge_margins():
    net = InterbankNetwork.from_edges([("1", "2", 5.0)])
    m = compute_margins(net)
    assert m.k_out.tolist() == [1, 0]
    assert m.k_in.tolist() == [0, 1]
    assert m.s_out.tolist() == [5, 0]
    assert m.s_in.tolist() == [0, 5]


def test_empty_network_margins_are_zero():
    net = InterbankNetwork.from_edges([], banks=["a", "b", "c"])
    m = compute_margins(net)
    for a in (m.k_out, m.k_in, m.s_out, m.s_in):
        assert not a.any()


def test_ring_margins():
    net = InterbankNetwork.from_edges([("1", "2", 1), ("2", "3", 1), ("3", "1", 1)])
    m = compute_margins(net)
    for a in (m.k_out, m.k_in, m.s_out, m.s_in):
        np.testing.assert_array_equal(a, 1.0)


def test_parallel_loans_are_summed():
    net = InterbankNetwork.from_edges([("a", "b", 3.0), ("a", "b", 2.0)])
    assert net.num_links == 1
    assert net.dense()[0, 1] == 5.0


def test_self_loop_rejected():
    with pytest.raises(NetworkError, match="self-loop"):
        InterbankNetwork.from_edges([("a", "a", 1.0)])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_margins_match_dense_sums(n, density, seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, n, density)
    w = net.dense()
    m = compute_margins(net)
    np.testing.assert_allclose(m.s_out, w.sum(axis=1), rtol=1e-12)
    np.testing.assert_allclose(m.s_in, w.sum(axis=0), rtol=1e-12)
    np.testing.assert_array_equal(m.k_out, (w > 0).sum(axis=1))
    np.testing.assert_array_equal(m.k_in, (w > 0).sum(axis=0))
    assert m.k_out.sum() == m.k_in.sum() == net.num_links


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_construction_is_order_independent(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 8, 0.4)
    edges = list(net.edges())
    rng.shuffle(edges)
    other = InterbankNetwork.from_edges(edges, banks=net.banks)
    a, b = compute_margins(net), compute_margins(other)
    for x, y in ((a.k_out, b.k_out), (a.k_in, b.k_in), (a.s_out, b.s_out), (a.s_in, b.s_in)):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize(
    "s_in, s_out, equity, expected",
    [(10.0, 4.0, 3.0, 9.0), (0.0, 0.0, 1.0, 1.0), (0.0, 8.0, 2.0, -6.0)],
)
def test_net_external_assets_close_identity(s_in, s_out, equity, expected):
    edges = []
    if s_in:
        edges.append(("lender", "x", s_in))
    if s_out:
        edges.append(("x", "borrower", s_out))
    net = InterbankNetwork.from_edges(edges, banks=["x", "lender", "borrower"])
    sheets = derive_balance_sheets(net, {"x": equity, "lender": 100.0, "borrower": 100.0})
    assert sheets.net_external[0] == expected
    assert validate(net, sheets) == []


def test_missing_or_nonpositive_equity():
    net = InterbankNetwork.from_edges([("a", "b", 1.0)])
    with pytest.raises(NetworkError, match="missing"):
        derive_balance_sheets(net, {"a": 1.0})
    with pytest.raises(NetworkError, match="positive"):
        derive_balance_sheets(net, {"a": 1.0, "b": 0.0})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_derived_sheets_never_violate_identity(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 10, 0.3, scale=1e6)
    sheets = derive_balance_sheets(net, rng.lognormal(10, 2, 10))
    assert validate(net, sheets) == []


def test_validate_reports_self_loop():
    w = sp.csr_array(np.array([[1.0, 2.0], [0.0, 0.0]]))
    net = InterbankNetwork(("a", "b"), w)
    problems = validate(net)
    assert len(problems) == 1 and "self-loop" in problems[0]


def test_validate_reports_zero_equity(two_banks):
    net, sheets = two_banks
    assert validate(net, sheets) == []
    from interbank_stress.network import BalanceSheets

    bad = BalanceSheets(sheets.banks, [0.0, 10.0], sheets.net_external - [50.0, 0.0], sheets.s_in, sheets.s_out)
    problems = validate(net, bad)
    assert len(problems) == 1 and "equity" in problems[0]
