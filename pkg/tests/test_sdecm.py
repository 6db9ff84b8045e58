import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interbank_stress import (
    FitTargets,
    InterbankNetwork,
    SdecmParams,
    analytic_margins,
    expected_weight,
    fit,
    fit_binary,
    fit_weights,
    link_probability,
    sample_network,
)
from interbank_stress.sdecm import Sampler, SdecmError


def enumerate_expected_degrees(alpha_out, alpha_in):
    """Expected degrees by summing over every adjacency matrix, each weighted
    by the product of per-pair factors exp(-theta a) / (1 + exp(-theta))."""
    n = len(alpha_out)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    k_out = np.zeros(n)
    k_in = np.zeros(n)
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        prob = 1.0
        for (i, j), a in zip(pairs, bits):
            theta = alpha_out[i] + alpha_in[j]
            prob *= math.exp(-theta * a) / (1.0 + math.exp(-theta))
        total += prob
        for (i, j), a in zip(pairs, bits):
            if a:
                k_out[i] += prob
                k_in[j] += prob
    return k_out, k_in, total


def random_targets(rng, n, scale=10.0):
    p = rng.uniform(0.05, 0.95, (n, n))
    np.fill_diagonal(p, 0.0)
    mean = rng.lognormal(np.log(scale), 0.5, (n, n))
    w = p * mean
    return FitTargets(tuple(f"b{k}" for k in range(n)), p.sum(1), p.sum(0), w.sum(1), w.sum(0))


def test_link_probability_basics():
    params = SdecmParams(("a", "b"), [0.3, -0.2], [-0.3, 0.2], [1.0, 1.0], [1.0, 1.0])
    assert link_probability(params, 0, 1) == pytest.approx(expit_neg(0.3 + 0.2))
    params = SdecmParams(("a", "b"), [0.3, 0.0], [0.0, -0.3], [1.0, 1.0], [1.0, 1.0])
    assert link_probability(params, 0, 1) == 0.5
    params = SdecmParams(("a", "b"), [800.0, 800.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0])
    assert link_probability(params, 0, 1) < 1e-300
    sym = SdecmParams(("a", "b", "c"), [0.1, 0.5, 0.9], [0.1, 0.5, 0.9], [1, 1, 1], [1, 1, 1])
    p = sym.probability_matrix()
    np.testing.assert_array_equal(p, p.T)
    with pytest.raises(ValueError):
        link_probability(sym, 1, 1)


def expit_neg(x):
    return 1.0 / (1.0 + math.exp(x))


def test_expected_weight():
    params = SdecmParams(("a", "b"), [0.0, 0.0], [0.0, 0.0], [1.5, 0.5], [0.5, 0.5])
    assert expected_weight(params, 0, 1) == 0.5
    assert expected_weight(params, 0, 1, conditional=False) == pytest.approx(0.5 * 0.5)
    double = SdecmParams(("a", "b"), [0.0, 0.0], [0.0, 0.0], [3.0, 1.0], [1.0, 1.0])
    assert expected_weight(double, 0, 1) == 0.25
    bad = SdecmParams(("a", "b"), [0.0, 0.0], [0.0, 0.0], [-1.0, 0.5], [0.5, 0.5])
    with pytest.raises(SdecmError):
        expected_weight(bad, 0, 1)


def test_enumeration_matches_analytic_degrees():
    rng = np.random.default_rng(1)
    a_out, a_in = rng.normal(0, 1, 4), rng.normal(0, 1, 4)
    k_out, k_in, total = enumerate_expected_degrees(a_out, a_in)
    assert total == pytest.approx(1.0, abs=1e-12)
    params = SdecmParams(tuple("abcd"), a_out, a_in, np.ones(4), np.ones(4))
    m = analytic_margins(params)
    np.testing.assert_allclose(m.k_out, k_out, atol=1e-10)
    np.testing.assert_allclose(m.k_in, k_in, atol=1e-10)


def test_two_bank_saturated_fit():
    net = InterbankNetwork.from_edges([("1", "2", 5.0)])
    params = fit(FitTargets.from_network(net))
    p = params.probability_matrix()
    assert p[0, 1] == 1.0 and p[1, 0] == 0.0
    assert params.beta_out[0] + params.beta_in[1] == pytest.approx(0.2, rel=1e-12)
    assert expected_weight(params, 0, 1) == pytest.approx(5.0, rel=1e-12)


def test_homogeneous_targets():
    n, c, s = 6, 2.0, 12.0
    t = FitTargets(tuple(range(n)), [c] * n, [c] * n, [s] * n, [s] * n)
    params = fit(t)
    p = params.probability_matrix()
    off = ~np.eye(n, dtype=bool)
    np.testing.assert_allclose(p[off], c / (n - 1), atol=1e-10)
    rate = params.rate_matrix()[off]
    np.testing.assert_allclose(rate, c / s, rtol=1e-9)
    np.testing.assert_allclose(analytic_margins(params).k_out, c, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_fit_reproduces_targets(seed):
    rng = np.random.default_rng(seed)
    t = random_targets(rng, 12)
    params = fit(t)
    m = analytic_margins(params)
    np.testing.assert_allclose(m.k_out, t.k_out, atol=1e-8)
    np.testing.assert_allclose(m.k_in, t.k_in, atol=1e-8)
    np.testing.assert_allclose(m.s_out, t.s_out, rtol=1e-8)
    np.testing.assert_allclose(m.s_in, t.s_in, rtol=1e-8)
    rate = params.rate_matrix()
    assert np.all(rate[params.probability_matrix() > 0] > 0)


def test_weight_fit_monte_carlo_n4():
    rng = np.random.default_rng(8)
    t = random_targets(rng, 4)
    params = fit(t)
    sampler = Sampler(params)
    m = 1_000_000
    gen = np.random.default_rng(99)
    links = gen.random((m, 4, 4)) < sampler.prob
    w = np.where(links, gen.exponential(1.0, (m, 4, 4)) * sampler.mean, 0.0)
    s_out = w.sum(axis=2)
    s_in = w.sum(axis=1)
    se_out = s_out.std(axis=0, ddof=1) / math.sqrt(m)
    se_in = s_in.std(axis=0, ddof=1) / math.sqrt(m)
    assert np.all(np.abs(s_out.mean(axis=0) - t.s_out) <= 3 * se_out)
    assert np.all(np.abs(s_in.mean(axis=0) - t.s_in) <= 3 * se_in)


def test_separability():
    rng = np.random.default_rng(2)
    t = random_targets(rng, 10)
    t2 = FitTargets(t.banks, t.k_out, t.k_in, t.s_out * 3.0, t.s_in * 3.0)
    a, b = fit(t), fit(t2)
    np.testing.assert_array_equal(a.alpha_out, b.alpha_out)
    np.testing.assert_array_equal(a.alpha_in, b.alpha_in)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.integers(0, 1000))
def test_translation_gauge(c, seed):
    rng = np.random.default_rng(seed)
    a_out, a_in = rng.normal(size=5), rng.normal(size=5)
    b_out, b_in = rng.uniform(1, 2, 5), rng.uniform(1, 2, 5)
    p1 = SdecmParams(tuple("abcde"), a_out, a_in, b_out, b_in)
    p2 = SdecmParams(tuple("abcde"), a_out + c, a_in - c, b_out + c / 10, b_in - c / 10)
    np.testing.assert_allclose(p1.probability_matrix(), p2.probability_matrix(), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(p1.rate_matrix(), p2.rate_matrix(), rtol=1e-12)


def test_infeasible_targets_rejected():
    with pytest.raises(SdecmError):
        FitTargets(("a", "b"), [2, 0], [0, 2], [1, 0], [0, 1])  # k > n - 1
    with pytest.raises(SdecmError):
        FitTargets(("a", "b", "c"), [1, 1, 0], [1, 1, 0], [0, 1, 0], [1, 0, 0])  # link without strength


def test_sampling_is_deterministic_and_respects_zero_probabilities():
    net = InterbankNetwork.from_edges([("a", "b", 2.0), ("b", "c", 1.0), ("c", "b", 4.0), ("a", "c", 1.0)])
    params = fit(FitTargets.from_network(net))
    p = params.probability_matrix()
    s1 = sample_network(params, seed=5, index=3)
    s2 = sample_network(params, seed=5, index=3)
    assert (s1.weights != s2.weights).nnz == 0
    for idx in range(200):
        w = sample_network(params, 7, idx).dense()
        assert not np.any(w[p == 0])


def test_link_frequency_and_mean_weight():
    rng = np.random.default_rng(4)
    t = random_targets(rng, 5)
    params = fit(t)
    sampler = Sampler(params)
    m = 100_000
    draws = np.stack([sampler.dense(11, k) for k in range(m)])
    freq = (draws > 0).mean(axis=0)
    p = sampler.prob
    off = ~np.eye(5, dtype=bool)
    assert np.all(np.abs(freq - p)[off] <= 4 * np.sqrt(p * (1 - p) / m)[off])
    w = draws[:, 0, 1]
    w = w[w > 0]
    mean = expected_weight(params, 0, 1)
    assert abs(w.mean() - mean) <= 3 * w.std(ddof=1) / math.sqrt(w.size)


def test_json_round_trip():
    net = InterbankNetwork.from_edges([("a", "b", 2.0), ("b", "c", 1.0), ("c", "a", 4.0)], banks=list("abcd"))
    params = fit(FitTargets.from_network(net))
    back = SdecmParams.from_json(params.to_json())
    np.testing.assert_array_equal(back.probability_matrix(), params.probability_matrix())
    np.testing.assert_array_equal(back.rate_matrix(), params.rate_matrix())
    assert np.isinf(back.alpha_out[3]) and np.isnan(back.beta_out[3])
