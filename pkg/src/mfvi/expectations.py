"""Gaussian expectations of ridge responses via 1-D Gauss-Hermite quadrature.

For a weight sample w = m + g(rho) z with z ~ N(0, I_d), any statistic of
the pre-activation <w, x> depends on z only through the scalar

    a = <z, x> / |x|  ~  N(0, 1),

since <w, x> = <m, x> + g(rho) |x| a.  Posterior means of the unit
response, of its parameter gradient, and of the coupled residual-gradient
product therefore reduce to one-dimensional standard-normal integrals,
which a q-node Gauss-Hermite rule evaluates exactly for polynomial
integrands of degree <= 2q-1 and to spectral accuracy for smooth bounded
profiles such as tanh.

The Monte Carlo method intentionally samples the full d-dimensional noise
and never uses the ridge reduction: it is the independent route against
which the reduction is cross-checked.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .core import TANH, NeuronParam, RidgeActivation, sigmoid, softplus

__all__ = [
    "QuadratureRule",
    "ExpectationConfig",
    "gauss_hermite_rule",
    "mean_response",
    "mean_response_grad",
    "mean_self_term",
    "ridge_moments",
    "ridge_moments_batch",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights normalized for standard-normal expectations."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise ValueError("nodes and weights must be 1-d arrays of equal length")
        if np.any(weights <= 0.0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if np.max(np.abs(nodes + nodes[::-1])) > 1e-12:
            raise ValueError("nodes must be symmetric about 0")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def q(self) -> int:
        return self.nodes.shape[0]


@functools.lru_cache(maxsize=None)
def gauss_hermite_rule(q: int) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule with q nodes, cached per process.

    Nodes/weights come from the Golub-Welsch eigendecomposition of the
    Jacobi matrix (numpy's hermegauss); weights are renormalized to sum to
    one so that sum_i w_i f(x_i) approximates E[f(Z)] for Z ~ N(0, 1).
    """
    if q < 1:
        raise ValueError("quadrature order must be >= 1")
    nodes, weights = np.polynomial.hermite_e.hermegauss(q)
    weights = weights / weights.sum()
    # Enforce exact symmetry: hermegauss is symmetric up to rounding.
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights)


@dataclass(frozen=True)
class ExpectationConfig:
    """How Gaussian expectations are evaluated.

    method "quadrature" uses the 1-D ridge reduction above; "monte_carlo"
    averages over mc_samples full d-dimensional noise draws (seeded by
    mc_seed when no generator is supplied).
    """

    method: str = "quadrature"
    q_nodes: int = 64
    mc_samples: int = 10_000
    mc_seed: int = 0

    def __post_init__(self):
        if self.method not in ("quadrature", "monte_carlo"):
            raise ValueError(f"unknown expectation method: {self.method!r}")
        if self.q_nodes < 2:
            raise ValueError("q_nodes must be >= 2")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")

    def rule(self) -> QuadratureRule:
        return gauss_hermite_rule(self.q_nodes)


def _mc_rng(cfg: ExpectationConfig, rng) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(cfg.mc_seed)


def mean_response(theta: NeuronParam, x: np.ndarray, cfg: ExpectationConfig,
                  act: RidgeActivation = TANH, rng=None) -> float:
    """Posterior mean response E_z[s(<m + g(rho) z, x>)].

    Quadrature route: E_a[s(<m, x> + g(rho)|x| a)] over a ~ N(0, 1).
    For |x| = 0 the response is s(0) = 0 exactly (tanh profile).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != theta.m.shape:
        raise ValueError("input dimension mismatch")
    if cfg.method == "monte_carlo":
        z = _mc_rng(cfg, rng).standard_normal((cfg.mc_samples, theta.dim))
        return float(np.mean(act.fn((theta.m + theta.scale * z) @ x)))
    xn = float(np.linalg.norm(x))
    if xn == 0.0:
        return float(act.fn(0.0))
    rule = cfg.rule()
    u = theta.m @ x + theta.scale * xn * rule.nodes
    return float(act.fn(u) @ rule.weights)


def mean_response_grad(theta: NeuronParam, x: np.ndarray, cfg: ExpectationConfig,
                       act: RidgeActivation = TANH, rng=None) -> np.ndarray:
    """Posterior mean of the response gradient, flat (d+1,) layout.

    m block:  E[s'(u)] x;   rho entry:  g'(rho) |x| E[s'(u) a]
    with u = <m, x> + g(rho)|x| a.  Zero vector when |x| = 0.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != theta.m.shape:
        raise ValueError("input dimension mismatch")
    grad = np.zeros(theta.dim + 1)
    if cfg.method == "monte_carlo":
        z = _mc_rng(cfg, rng).standard_normal((cfg.mc_samples, theta.dim))
        sp = act.deriv((theta.m + theta.scale * z) @ x)
        grad[:-1] = np.mean(sp) * x
        grad[-1] = sigmoid(theta.rho) * np.mean(sp * (z @ x))
        return grad
    xn = float(np.linalg.norm(x))
    if xn == 0.0:
        return grad
    rule = cfg.rule()
    u = theta.m @ x + theta.scale * xn * rule.nodes
    sp = act.deriv(u)
    grad[:-1] = (sp @ rule.weights) * x
    grad[-1] = sigmoid(theta.rho) * xn * (sp @ (rule.weights * rule.nodes))
    return grad


def mean_self_term(theta: NeuronParam, x: np.ndarray, y: float, cfg: ExpectationConfig,
                   act: RidgeActivation = TANH, rng=None) -> np.ndarray:
    """Coupled expectation E_z[(s(u) - y) grad_theta s(u)], flat (d+1,).

    Response and gradient share the same noise draw, so this does NOT
    factor into mean_response and mean_response_grad; the gap between the
    two is the per-unit self-interaction of the exact update.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != theta.m.shape:
        raise ValueError("input dimension mismatch")
    out = np.zeros(theta.dim + 1)
    if cfg.method == "monte_carlo":
        z = _mc_rng(cfg, rng).standard_normal((cfg.mc_samples, theta.dim))
        u = (theta.m + theta.scale * z) @ x
        resid_sp = (act.fn(u) - y) * act.deriv(u)
        out[:-1] = np.mean(resid_sp) * x
        out[-1] = sigmoid(theta.rho) * np.mean(resid_sp * (z @ x))
        return out
    xn = float(np.linalg.norm(x))
    if xn == 0.0:
        return out
    rule = cfg.rule()
    u = theta.m @ x + theta.scale * xn * rule.nodes
    t = act.fn(u)
    resid_sp = (t - y) * act.deriv_at(u, t)
    out[:-1] = (resid_sp @ rule.weights) * x
    out[-1] = sigmoid(theta.rho) * xn * (resid_sp @ (rule.weights * rule.nodes))
    return out


def ridge_moments(means: np.ndarray, rhos: np.ndarray, x: np.ndarray, rule: QuadratureRule,
                  act: RidgeActivation = TANH, with_self: bool = False):
    """Per-unit quadrature tables at one input, for the whole cloud at once.

    Returns (resp, dresp, dresp_a) where, with u = <m_i, x> + g(rho_i)|x| a,

        resp[i]    = E[s(u)]
        dresp[i]   = E[s'(u)]
        dresp_a[i] = E[s'(u) a]

    and, when with_self is set, additionally (resp_dresp, resp_dresp_a)
    holding E[s(u) s'(u)] and E[s(u) s'(u) a].  One (n, q) response table
    is evaluated and every moment is contracted from it.
    """
    x = np.asarray(x, dtype=float)
    xn = float(np.linalg.norm(x))
    n = means.shape[0]
    scale = softplus(rhos)
    u = means @ x if xn > 0.0 else np.zeros(n)
    # (q, n) layout with an explicit node loop: every per-unit moment is a
    # fixed-order scalar accumulation, so results are bit-identical under
    # unit permutation (BLAS reductions are not, their rounding depends on
    # buffer alignment).
    table = np.outer(xn * rule.nodes, scale)
    table += u
    t = act.fn(table)
    sp = act.deriv_at(table, t)
    wa = rule.weights * rule.nodes
    resp = np.zeros(n)
    dresp = np.zeros(n)
    dresp_a = np.zeros(n)
    tsp = None if not with_self else t * sp
    resp_dresp = None if not with_self else np.zeros(n)
    resp_dresp_a = None if not with_self else np.zeros(n)
    for qi in range(rule.q):
        resp += rule.weights[qi] * t[qi]
        dresp += rule.weights[qi] * sp[qi]
        dresp_a += wa[qi] * sp[qi]
        if with_self:
            resp_dresp += rule.weights[qi] * tsp[qi]
            resp_dresp_a += wa[qi] * tsp[qi]
    if not with_self:
        return resp, dresp, dresp_a
    return resp, dresp, dresp_a, resp_dresp, resp_dresp_a


def ridge_moments_batch(means: np.ndarray, rhos: np.ndarray, xs: np.ndarray,
                        rule: QuadratureRule, act: RidgeActivation = TANH,
                        chunk: int | None = None):
    """Quadrature tables over a batch of inputs.

    Returns (resp, dresp, dresp_a), each of shape (n, p) for n units and p
    inputs.  Inputs are processed in chunks small enough that the per-node
    work stays cache-resident, accumulating one quadrature node at a time;
    this is the hot path of the limit integrator.
    """
    xs = np.asarray(xs, dtype=float)
    n = means.shape[0]
    p = xs.shape[0]
    resp = np.zeros((n, p))
    dresp = np.zeros((n, p))
    dresp_a = np.zeros((n, p))
    scale = softplus(rhos)
    xnorms = np.linalg.norm(xs, axis=1)
    if chunk is None:
        chunk = max(8, min(p, 512_000 // max(n, 1) + 1))
    wa = rule.weights * rule.nodes
    for lo in range(0, p, chunk):
        hi = min(lo + chunk, p)
        u0 = means @ xs[lo:hi].T                       # (n, c)
        cs = np.multiply.outer(scale, xnorms[lo:hi])   # (n, c)
        u = np.empty_like(u0)
        racc = resp[:, lo:hi]
        dacc = dresp[:, lo:hi]
        daacc = dresp_a[:, lo:hi]
        for node, w_plain, w_node in zip(rule.nodes, rule.weights, wa):
            np.multiply(cs, node, out=u)
            u += u0
            t = act.fn(u)
            sp = act.deriv_at(u, t)
            racc += w_plain * t
            dacc += w_plain * sp
            daacc += w_node * sp
    return resp, dresp, dresp_a
