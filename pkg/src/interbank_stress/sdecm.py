"""Separable directed enhanced configuration model.

Maximum-entropy ensemble of directed weighted networks that preserves, on
average, the in/out-degree and in/out-strength of every node. Links are
independent Bernoulli variables

    p_ij = 1 / (1 + exp(alpha_out_i + alpha_in_j)),

and, given a link, its weight is exponential with rate
``beta_out_i + beta_in_j``. The binary layer is fitted first; the weight layer
is then fitted with the link probabilities held fixed.

Both fits start with a damped fixed-point iteration and switch to Newton's
method on the (convex) negative log-likelihood when the fixed point
stagnates. Nodes whose degree is 0 or ``n - 1`` have infinite multipliers;
they are excluded from the solve and handled exactly.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .network import InterbankNetwork, NodeMargins, compute_margins

logger = logging.getLogger(__name__)

SEED_SCHEME = "numpy-seedsequence-spawnkey-v1"
DEGREE_TOL = 1e-8
STRENGTH_RTOL = 1e-8
DAMPING = 0.5
MAX_ITER = 100_000


class SdecmError(ValueError):
    """Infeasible targets or a fit that did not reach its tolerance."""


@dataclass(frozen=True, eq=False)
class FitTargets:
    """Empirical margins the ensemble must reproduce on average."""

    banks: tuple
    k_out: np.ndarray
    k_in: np.ndarray
    s_out: np.ndarray
    s_in: np.ndarray

    def __post_init__(self):
        for name in ("k_out", "k_in", "s_out", "s_in"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        problems = self.feasibility_problems()
        if problems:
            raise SdecmError("; ".join(problems[:5]))

    @classmethod
    def from_margins(cls, banks, margins: NodeMargins) -> "FitTargets":
        return cls(tuple(banks), margins.k_out, margins.k_in, margins.s_out, margins.s_in)

    @classmethod
    def from_network(cls, net: InterbankNetwork) -> "FitTargets":
        return cls.from_margins(net.banks, compute_margins(net))

    @property
    def n(self) -> int:
        return len(self.banks)

    def feasibility_problems(self) -> list[str]:
        n = len(self.banks)
        out = []
        for name, k in (("k_out", self.k_out), ("k_in", self.k_in)):
            if k.shape != (n,):
                return [f"{name} has shape {k.shape}, expected ({n},)"]
            if np.any(k < 0) or np.any(k > n - 1):
                out.append(f"{name} outside [0, n-1]")
        for name, s, k in (("s_out", self.s_out, self.k_out), ("s_in", self.s_in, self.k_in)):
            if np.any(s < 0) or not np.all(np.isfinite(s)):
                out.append(f"{name} must be finite and nonnegative")
            bad = np.flatnonzero((k > 0) & (s <= 0))
            if bad.size:
                out.append(f"banks {[self.banks[b] for b in bad[:3]]} have {name} = 0 with links")
            bad = np.flatnonzero((k == 0) & (s > 0))
            if bad.size:
                out.append(f"banks {[self.banks[b] for b in bad[:3]]} have {name} > 0 without links")
        total_k = max(self.k_out.sum(), self.k_in.sum(), 1.0)
        if abs(self.k_out.sum() - self.k_in.sum()) > 1e-9 * total_k:
            out.append("total out-degree differs from total in-degree")
        total_s = max(self.s_out.sum(), self.s_in.sum(), 1.0)
        if abs(self.s_out.sum() - self.s_in.sum()) > 1e-9 * total_s:
            out.append("total out-strength differs from total in-strength")
        # A node linked to everybody cannot coexist with a node linked to nobody.
        full_out = np.flatnonzero(self.k_out == n - 1)
        empty_in = np.flatnonzero(self.k_in == 0)
        if n > 1 and any(i != j for i in full_out for j in empty_in):
            out.append("a bank lends to all others while another borrows from nobody")
        full_in = np.flatnonzero(self.k_in == n - 1)
        empty_out = np.flatnonzero(self.k_out == 0)
        if n > 1 and any(i != j for i in full_in for j in empty_out):
            out.append("a bank borrows from all others while another lends to nobody")
        return out


@dataclass(frozen=True, eq=False)
class SdecmParams:
    """Fitted Lagrange multipliers.

    ``alpha_*`` may be ``+inf`` (node with no links in that direction) or
    ``-inf`` (node linked to every other node). ``beta_*`` is ``nan`` where it
    plays no role because the node has no links in that direction.
    """

    banks: tuple
    alpha_out: np.ndarray
    alpha_in: np.ndarray
    beta_out: np.ndarray
    beta_in: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("alpha_out", "alpha_in", "beta_out", "beta_in"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n(self) -> int:
        return len(self.banks)

    def probability_matrix(self) -> np.ndarray:
        p = _link_probs(self.alpha_out, self.alpha_in)
        p.setflags(write=False)
        return p

    def rate_matrix(self) -> np.ndarray:
        """Exponential rates ``beta_out_i + beta_in_j``; ``inf`` where ``p_ij = 0``."""
        p = self.probability_matrix()
        with np.errstate(invalid="ignore"):
            rate = self.beta_out[:, None] + self.beta_in[None, :]
        rate = np.where(p > 0, rate, np.inf)
        rate.setflags(write=False)
        return rate

    def to_json(self) -> str:
        def enc(a):
            return [None if np.isnan(x) else ("inf" if x == np.inf else "-inf" if x == -np.inf else float(x)) for x in a]

        doc = {
            "model": "sdecm",
            "seed_scheme": SEED_SCHEME,
            "banks": list(self.banks),
            "alpha_out": enc(self.alpha_out),
            "alpha_in": enc(self.alpha_in),
            "beta_out": enc(self.beta_out),
            "beta_in": enc(self.beta_in),
            "diagnostics": self.diagnostics,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SdecmParams":
        doc = json.loads(text)
        if doc.get("model") != "sdecm":
            raise SdecmError("not an sdecm parameter document")
        if doc.get("seed_scheme") != SEED_SCHEME:
            raise SdecmError(f"unsupported seed scheme {doc.get('seed_scheme')!r}")

        def dec(xs):
            return np.array([np.nan if x is None else float(x) for x in xs])

        return cls(
            tuple(doc["banks"]),
            dec(doc["alpha_out"]),
            dec(doc["alpha_in"]),
            dec(doc["beta_out"]),
            dec(doc["beta_in"]),
            doc.get("diagnostics", {}),
        )


def _link_probs(alpha_out, alpha_in) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        theta = alpha_out[:, None] + alpha_in[None, :]
    p = expit(-theta)
    np.fill_diagonal(p, 0.0)
    return p


def link_probability(params: SdecmParams, i: int, j: int) -> float:
    if i == j:
        raise ValueError("self-loops have no link probability")
    return float(expit(-(params.alpha_out[i] + params.alpha_in[j])))


def expected_weight(params: SdecmParams, i: int, j: int, conditional: bool = True) -> float:
    """Mean weight of link ``(i, j)``, given that it exists unless ``conditional=False``."""
    if i == j:
        raise ValueError("self-loops have no weight")
    rate = params.beta_out[i] + params.beta_in[j]
    if not rate > 0:
        raise SdecmError(f"nonpositive exponential rate {rate!r} for pair ({i}, {j})")
    mean = 1.0 / rate
    return mean if conditional else link_probability(params, i, j) * mean


def analytic_margins(params: SdecmParams) -> NodeMargins:
    """Ensemble averages of degrees and strengths."""
    p = params.probability_matrix()
    w = p / params.rate_matrix()
    return NodeMargins(k_out=p.sum(axis=1), k_in=p.sum(axis=0), s_out=w.sum(axis=1), s_in=w.sum(axis=0))


# Binary layer


def _binary_objective(a_out, a_in, k_out, k_in):
    """Negative log-likelihood of the binary layer (up to a constant)."""
    with np.errstate(invalid="ignore"):
        theta = a_out[:, None] + a_in[None, :]
    # sum over off-diagonal finite pairs of log(1 + exp(-theta))
    term = np.logaddexp(0.0, -theta)
    np.fill_diagonal(term, 0.0)
    fin_o = np.isfinite(a_out)
    fin_i = np.isfinite(a_in)
    lin = (a_out[fin_o] * k_out[fin_o]).sum() + (a_in[fin_i] * k_in[fin_i]).sum()
    mask = np.outer(fin_o, fin_i)
    # Pairs forced to p = 1 by a saturated partner contribute -alpha of the free end.
    full_o = a_out == -np.inf
    full_i = a_in == -np.inf
    forced = (a_out[fin_o] * (full_i.sum() - full_i[fin_o])).sum()
    forced += (a_in[fin_i] * (full_o.sum() - full_o[fin_i])).sum()
    return lin + term[mask].sum() - forced


def _binary_residual(a_out, a_in, k_out, k_in):
    p = _link_probs(a_out, a_in)
    return p.sum(axis=1) - k_out, p.sum(axis=0) - k_in


def fit_binary(targets: FitTargets, tol: float = DEGREE_TOL, max_iter: int = MAX_ITER):
    """Solve for the degree multipliers.

    Returns ``(alpha_out, alpha_in, info)`` where ``info`` records the
    method used, iterations and the final maximum absolute residual.
    """
    n = targets.n
    k_out, k_in = targets.k_out, targets.k_in
    a_out = np.zeros(n)
    a_in = np.zeros(n)
    a_out[k_out == 0] = np.inf
    a_in[k_in == 0] = np.inf
    a_out[(k_out == n - 1) & (k_out > 0)] = -np.inf
    a_in[(k_in == n - 1) & (k_in > 0)] = -np.inf
    free_o = np.isfinite(a_out)
    free_i = np.isfinite(a_in)
    info = {"method": "closed-form", "iterations": 0}

    if free_o.any() or free_i.any():
        total = max(k_out.sum(), 1.0)
        x = np.where(free_o, k_out / np.sqrt(total), 0.0)
        y = np.where(free_i, k_in / np.sqrt(total), 0.0)
        a_out[free_o] = -np.log(x[free_o])
        a_in[free_i] = -np.log(y[free_i])
        a_out, a_in, it, ok = _binary_fixed_point(a_out, a_in, k_out, k_in, free_o, free_i, tol, max_iter)
        info = {"method": "fixed-point", "iterations": it}
        if not ok:
            a_out, a_in, nit = _binary_newton(a_out, a_in, k_out, k_in, free_o, free_i, tol)
            info = {"method": "fixed-point+newton", "iterations": it + nit}

    r_out, r_in = _binary_residual(a_out, a_in, k_out, k_in)
    resid = float(max(np.abs(r_out).max(initial=0.0), np.abs(r_in).max(initial=0.0)))
    info["max_abs_residual"] = resid
    if not resid <= tol:
        raise SdecmError(f"degree fit did not converge: max residual {resid:.3e}")
    return a_out, a_in, info


def _binary_fixed_point(a_out, a_in, k_out, k_in, free_o, free_i, tol, max_iter, patience=500):
    # x = exp(-alpha); x_i <- x_i * k_i / <k_i>, damped in x.
    best = np.inf
    since = 0
    for it in range(1, max_iter + 1):
        r_out, r_in = _binary_residual(a_out, a_in, k_out, k_in)
        err = max(np.abs(r_out[free_o]).max(initial=0.0), np.abs(r_in[free_i]).max(initial=0.0))
        if err <= tol * 0.01:
            return a_out, a_in, it, True
        if err < 0.9 * best:
            best, since = err, 0
        else:
            since += 1
            if since > patience:
                break
        exp_out = r_out + k_out
        exp_in = r_in + k_in
        x = np.exp(-a_out[free_o])
        y = np.exp(-a_in[free_i])
        x_new = x * k_out[free_o] / exp_out[free_o]
        y_new = y * k_in[free_i] / exp_in[free_i]
        a_out = a_out.copy()
        a_in = a_in.copy()
        a_out[free_o] = -np.log(DAMPING * x + (1 - DAMPING) * x_new)
        a_in[free_i] = -np.log(DAMPING * y + (1 - DAMPING) * y_new)
    return a_out, a_in, it, False


def _binary_newton(a_out, a_in, k_out, k_in, free_o, free_i, tol, max_iter=200):
    n = len(k_out)
    io = np.flatnonzero(free_o)
    ii = np.flatnonzero(free_i)
    for it in range(1, max_iter + 1):
        p = _link_probs(a_out, a_in)
        g_out = k_out - p.sum(axis=1)
        g_in = k_in - p.sum(axis=0)
        grad = np.concatenate([g_out[io], g_in[ii]])
        if np.abs(grad).max(initial=0.0) <= tol * 0.01:
            return a_out, a_in, it
        q = p * (1 - p)
        hess = np.zeros((io.size + ii.size, io.size + ii.size))
        hess[: io.size, : io.size] = np.diag(q.sum(axis=1)[io])
        hess[io.size :, io.size :] = np.diag(q.sum(axis=0)[ii])
        cross = q[np.ix_(io, ii)]
        hess[: io.size, io.size :] = cross
        hess[io.size :, : io.size] = cross.T
        step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        f0 = _binary_objective(a_out, a_in, k_out, k_in)
        slope = grad @ step
        t = 1.0
        while True:
            na_out = a_out.copy()
            na_in = a_in.copy()
            na_out[io] += t * step[: io.size]
            na_in[ii] += t * step[io.size :]
            f1 = _binary_objective(na_out, na_in, k_out, k_in)
            if f1 <= f0 + 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10:
            logger.debug("binary newton line search stalled at iteration %d", it)
            return na_out, na_in, it
        a_out, a_in = na_out, na_in
    return a_out, a_in, max_iter


# Weight layer


def _weight_terms(b_out, b_in, p):
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = b_out[:, None] + b_in[None, :]
        w = np.where(p > 0, p / rate, 0.0)
    return rate, w


def _weight_objective(b_out, b_in, p, s_out, s_in, act_o, act_i):
    """Negative expected log-likelihood of the weight layer; ``inf`` off-domain."""
    rate = b_out[:, None] + b_in[None, :]
    live = p > 0
    if np.any(rate[live] <= 0) or not np.all(np.isfinite(rate[live])):
        return np.inf
    return float(
        (b_out[act_o] * s_out[act_o]).sum()
        + (b_in[act_i] * s_in[act_i]).sum()
        - (p[live] * np.log(rate[live])).sum()
    )


def fit_weights(
    targets: FitTargets,
    alpha_out: np.ndarray,
    alpha_in: np.ndarray,
    rtol: float = STRENGTH_RTOL,
    max_iter: int = MAX_ITER,
):
    """Solve for the strength multipliers with link probabilities fixed."""
    n = targets.n
    s_out, s_in = targets.s_out, targets.s_in
    p = _link_probs(np.asarray(alpha_out, float), np.asarray(alpha_in, float))
    act_o = p.sum(axis=1) > 0
    act_i = p.sum(axis=0) > 0
    # Nodes with expected degree but no target strength are infeasible.
    if np.any(act_o & (s_out <= 0)) or np.any(act_i & (s_in <= 0)):
        raise SdecmError("banks with links must have positive strength targets")
    k_out = p.sum(axis=1)
    k_in = p.sum(axis=0)
    b_out = np.full(n, np.nan)
    b_in = np.full(n, np.nan)
    b_out[act_o] = 0.5 * k_out[act_o] / s_out[act_o]
    b_in[act_i] = 0.5 * k_in[act_i] / s_in[act_i]
    info = {"method": "closed-form", "iterations": 0}
    if act_o.any():
        b_out, b_in, it, ok = _weight_fixed_point(b_out, b_in, p, s_out, s_in, act_o, act_i, rtol, max_iter)
        info = {"method": "fixed-point", "iterations": it}
        if not ok:
            b_out, b_in, nit = _weight_newton(b_out, b_in, p, s_out, s_in, act_o, act_i, rtol)
            info = {"method": "fixed-point+newton", "iterations": it + nit}
    resid = _weight_rel_residual(b_out, b_in, p, s_out, s_in, act_o, act_i)
    info["max_rel_residual"] = resid
    if not resid <= rtol:
        raise SdecmError(f"strength fit did not converge: max relative residual {resid:.3e}")
    return b_out, b_in, info


def _weight_rel_residual(b_out, b_in, p, s_out, s_in, act_o, act_i):
    _, w = _weight_terms(np.nan_to_num(b_out), np.nan_to_num(b_in), p)
    ro = np.abs(w.sum(axis=1)[act_o] - s_out[act_o]) / s_out[act_o]
    ri = np.abs(w.sum(axis=0)[act_i] - s_in[act_i]) / s_in[act_i]
    return float(max(ro.max(initial=0.0), ri.max(initial=0.0)))


def _weight_fixed_point(b_out, b_in, p, s_out, s_in, act_o, act_i, rtol, max_iter, patience=500):
    # beta_i <- beta_i * <s_i> / s_i, damped; keeps multipliers positive.
    best = np.inf
    since = 0
    b_out = np.nan_to_num(b_out)
    b_in = np.nan_to_num(b_in)
    for it in range(1, max_iter + 1):
        _, w = _weight_terms(b_out, b_in, p)
        e_out = w.sum(axis=1)
        e_in = w.sum(axis=0)
        err = max(
            (np.abs(e_out - s_out)[act_o] / s_out[act_o]).max(initial=0.0),
            (np.abs(e_in - s_in)[act_i] / s_in[act_i]).max(initial=0.0),
        )
        if err <= rtol * 0.01:
            break
        if err < 0.9 * best:
            best, since = err, 0
        else:
            since += 1
            if since > patience:
                return _restore_nan(b_out, b_in, act_o, act_i) + (it, False)
        new_out = b_out.copy()
        new_in = b_in.copy()
        new_out[act_o] = b_out[act_o] * e_out[act_o] / s_out[act_o]
        new_in[act_i] = b_in[act_i] * e_in[act_i] / s_in[act_i]
        b_out = DAMPING * b_out + (1 - DAMPING) * new_out
        b_in = DAMPING * b_in + (1 - DAMPING) * new_in
    else:
        return _restore_nan(b_out, b_in, act_o, act_i) + (max_iter, False)
    return _restore_nan(b_out, b_in, act_o, act_i) + (it, True)


def _restore_nan(b_out, b_in, act_o, act_i):
    b_out = np.where(act_o, b_out, np.nan)
    b_in = np.where(act_i, b_in, np.nan)
    return b_out, b_in


def _weight_newton(b_out, b_in, p, s_out, s_in, act_o, act_i, rtol, max_iter=200):
    io = np.flatnonzero(act_o)
    ii = np.flatnonzero(act_i)
    bo = np.nan_to_num(b_out)
    bi = np.nan_to_num(b_in)
    for it in range(1, max_iter + 1):
        rate, w = _weight_terms(bo, bi, p)
        grad = np.concatenate([s_out[io] - w.sum(axis=1)[io], s_in[ii] - w.sum(axis=0)[ii]])
        scale = np.concatenate([s_out[io], s_in[ii]])
        if (np.abs(grad) / scale).max(initial=0.0) <= rtol * 0.01:
            break
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(p > 0, p / rate**2, 0.0)
        hess = np.zeros((io.size + ii.size, io.size + ii.size))
        hess[: io.size, : io.size] = np.diag(q.sum(axis=1)[io])
        hess[io.size :, io.size :] = np.diag(q.sum(axis=0)[ii])
        cross = q[np.ix_(io, ii)]
        hess[: io.size, io.size :] = cross
        hess[io.size :, : io.size] = cross.T
        # Diagonal scaling keeps the solve well conditioned across currency scales.
        d = 1.0 / np.sqrt(np.diag(hess))
        step = -d * np.linalg.lstsq(hess * d[:, None] * d[None, :], d * grad, rcond=None)[0]
        f0 = _weight_objective(bo, bi, p, s_out, s_in, act_o, act_i)
        slope = grad @ step
        t = 1.0
        while True:
            nbo = bo.copy()
            nbi = bi.copy()
            nbo[io] += t * step[: io.size]
            nbi[ii] += t * step[io.size :]
            f1 = _weight_objective(nbo, nbi, p, s_out, s_in, act_o, act_i)
            if f1 <= f0 + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            break
        bo, bi = nbo, nbi
    return _restore_nan(bo, bi, act_o, act_i) + (it,)


def fit(targets: FitTargets) -> SdecmParams:
    """Fit both layers and return the multipliers with fit diagnostics."""
    a_out, a_in, binfo = fit_binary(targets)
    b_out, b_in, winfo = fit_weights(targets, a_out, a_in)
    return SdecmParams(targets.banks, a_out, a_in, b_out, b_in, {"binary": binfo, "weights": winfo})


def fit_network(net: InterbankNetwork) -> SdecmParams:
    return fit(FitTargets.from_network(net))


# Sampling


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index`` of an ensemble seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),)))


class Sampler:
    """Draws ensemble members; caches the dense probability and rate matrices."""

    def __init__(self, params: SdecmParams):
        self.params = params
        self.prob = params.probability_matrix()
        rate = params.rate_matrix()
        self.mean = np.where(self.prob > 0, 1.0 / rate, 0.0)

    def dense(self, seed: int, index: int = 0) -> np.ndarray:
        rng = sample_rng(seed, index)
        n = self.params.n
        u = rng.random((n, n))
        links = u < self.prob
        w = np.zeros((n, n))
        w[links] = rng.exponential(self.mean[links])
        # Exponential draws are positive with probability one; guard the measure-zero case.
        w[links & (w <= 0)] = np.finfo(float).tiny
        return w

    def network(self, seed: int, index: int = 0) -> InterbankNetwork:
        w = sp.csr_array(self.dense(seed, index))
        w.sort_indices()
        return InterbankNetwork(self.params.banks, w)


def sample_network(params: SdecmParams, seed: int, index: int = 0) -> InterbankNetwork:
    """Draw one ensemble member; identical ``(seed, index)`` give identical networks."""
    return Sampler(params).network(seed, index)
