"""Variational family, activation, network output, and closed-form KL terms.

A single hidden unit carries the variational parameter theta = (m, rho):
the posterior over its weight vector is the isotropic Gaussian
N(m, g(rho)^2 I_d) with the softplus link g(rho) = log(1 + e^rho), so a
weight sample is the deterministic map

    w = m + g(rho) * z,       z ~ N(0, I_d),

and gradients can be pushed through the sampling.  The network output is
the flat average of the unit responses s(<w_i, x>) over the N units.

Gradient layout contract: every gradient w.r.t. theta is returned as a flat
vector of length d + 1 ordered (m_1, ..., m_d, rho).  All functions here
are pure; arrays passed in are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

__all__ = [
    "NeuronParam",
    "PriorSpec",
    "ParticleCloud",
    "RidgeActivation",
    "TANH",
    "SIGMOID",
    "softplus",
    "softplus_inverse",
    "sigmoid",
    "log_softplus",
    "dlog_softplus",
    "sorted_sum",
    "sorted_mean",
    "reparameterize",
    "activation",
    "activation_deriv",
    "unit_response",
    "unit_response_grad",
    "kl_divergence",
    "kl_divergence_grad",
    "kl_divergence_grad_cloud",
    "network_output",
]

# Above this threshold e^rho dominates and the complementary log1p forms
# are exact to double precision; below -_RHO_CUT, softplus(rho) == e^rho
# to double precision.
_RHO_CUT = 30.0


def softplus(rho):
    """g(rho) = log(1 + e^rho), overflow-safe for any finite rho.

    ``logaddexp`` evaluates max(0, rho) + log1p(e^{-|rho|}), which is the
    accurate branch on either side of 0.  Accepts scalars or arrays.
    """
    return np.logaddexp(0.0, rho)


def softplus_inverse(sigma):
    """Inverse link: the rho with softplus(rho) = sigma, for sigma > 0.

    Computed as log(expm1(sigma)) for moderate sigma and as
    sigma + log1p(-e^{-sigma}) beyond the overflow range of expm1.
    """
    arr = np.asarray(sigma, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr <= 0.0):
        raise ValueError("softplus_inverse requires sigma > 0")
    small = arr <= _RHO_CUT
    out = np.empty_like(arr)
    out[small] = np.log(np.expm1(arr[small]))
    out[~small] = arr[~small] + np.log1p(-np.exp(-arr[~small]))
    return float(out[0]) if scalar else out


def sigmoid(x):
    """g'(rho): the logistic function, computed as exp(-softplus(-x))."""
    return np.exp(-np.logaddexp(0.0, -x))


def log_softplus(rho):
    """log g(rho), stable down to rho -> -inf where g(rho) ~ e^rho."""
    rho = np.asarray(rho, dtype=float)
    out = np.where(rho < -_RHO_CUT, rho, np.log(np.maximum(softplus(rho), np.finfo(float).tiny)))
    return float(out) if out.ndim == 0 else out


def dlog_softplus(rho):
    """g'(rho) / g(rho), stable down to rho -> -inf where the ratio -> 1."""
    rho = np.asarray(rho, dtype=float)
    safe = np.maximum(rho, -_RHO_CUT)
    out = np.where(rho < -_RHO_CUT, 1.0, sigmoid(safe) / softplus(safe))
    return float(out) if out.ndim == 0 else out


def sorted_sum(values: np.ndarray, axis: int = -1) -> np.ndarray | float:
    """Sum after sorting, so the result is independent of input order.

    Cloud-level reductions use this to make permutation equivariance hold
    bit-exactly, not just up to rounding.
    """
    return np.sort(values, axis=axis).sum(axis=axis)


def sorted_mean(values: np.ndarray, axis: int = -1) -> np.ndarray | float:
    """Order-independent arithmetic mean (see sorted_sum)."""
    return sorted_sum(values, axis=axis) / np.asarray(values).shape[axis]


@dataclass(frozen=True)
class NeuronParam:
    """Variational parameter of one unit: weight mean and pre-deviation."""

    m: np.ndarray
    rho: float

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.ndim != 1:
            raise ValueError("m must be a 1-d vector")
        if not np.all(np.isfinite(m)) or not np.isfinite(self.rho):
            raise ValueError("NeuronParam entries must be finite")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def dim(self) -> int:
        return self.m.shape[0]

    @property
    def scale(self) -> float:
        """Posterior standard deviation g(rho); positive for finite rho."""
        return float(softplus(self.rho))

    def flat(self) -> np.ndarray:
        """(m_1, ..., m_d, rho) as one vector."""
        return np.append(self.m, self.rho)


@dataclass(frozen=True)
class PriorSpec:
    """Isotropic Gaussian prior N(m0, sigma0^2 I_d) shared by all units."""

    m0: np.ndarray
    sigma0: float

    def __post_init__(self):
        m0 = np.asarray(self.m0, dtype=float)
        if m0.ndim != 1:
            raise ValueError("m0 must be a 1-d vector")
        if not (self.sigma0 > 0.0):
            raise ValueError("sigma0 must be positive")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "sigma0", float(self.sigma0))

    @property
    def dim(self) -> int:
        return self.m0.shape[0]


@dataclass(frozen=True)
class ParticleCloud:
    """The N-unit parameter array; carrier of the empirical measure.

    Uniform weights 1/N are implicit and never stored.  Stored as two
    arrays for vectorized updates: ``means`` with shape (n, d) and ``rhos``
    with shape (n,).  Treated as immutable: training steps allocate new
    arrays instead of writing in place.
    """

    means: np.ndarray
    rhos: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        rhos = np.asarray(self.rhos, dtype=float)
        if means.ndim != 2 or rhos.ndim != 1 or means.shape[0] != rhos.shape[0]:
            raise ValueError("means must be (n, d) and rhos (n,) with matching n")
        if means.shape[0] < 1:
            raise ValueError("a cloud holds at least one particle")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "rhos", rhos)

    @classmethod
    def from_params(cls, params: "list[NeuronParam]") -> "ParticleCloud":
        return cls(np.array([p.m for p in params]), np.array([p.rho for p in params]))

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def params(self) -> "tuple[NeuronParam, ...]":
        return tuple(self[i] for i in range(self.n))

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> NeuronParam:
        return NeuronParam(self.means[i].copy(), float(self.rhos[i]))

    def __iter__(self) -> Iterator[NeuronParam]:
        return iter(self.params)

    def flat(self) -> np.ndarray:
        """(n, d+1) array in the (m_1..m_d, rho) layout."""
        return np.hstack([self.means, self.rhos[:, None]])

    def param_norms(self) -> np.ndarray:
        """Euclidean norm of each unit's full (m, rho) vector."""
        return np.sqrt(np.einsum("nd,nd->n", self.means, self.means) + self.rhos**2)

    def copy(self) -> "ParticleCloud":
        return ParticleCloud(self.means.copy(), self.rhos.copy())


@dataclass(frozen=True)
class RidgeActivation:
    """Scalar response profile applied to the pre-activation u = <w, x>.

    ``deriv_from_value`` maps the response value back to the derivative
    (for tanh: t -> 1 - t^2), letting hot loops reuse an already computed
    response table instead of re-evaluating the profile.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    deriv_from_value: Callable[[np.ndarray], np.ndarray] | None = field(default=None)

    def deriv_at(self, u, value=None):
        if self.deriv_from_value is not None and value is not None:
            return self.deriv_from_value(value)
        return self.deriv(u)


TANH = RidgeActivation(
    "tanh",
    np.tanh,
    lambda u: 1.0 - np.tanh(u) ** 2,
    deriv_from_value=lambda t: 1.0 - t**2,
)

SIGMOID = RidgeActivation(
    "sigmoid",
    sigmoid,
    lambda u: sigmoid(u) * (1.0 - sigmoid(u)),
    deriv_from_value=lambda s: s * (1.0 - s),
)


def reparameterize(theta: NeuronParam, z: np.ndarray) -> np.ndarray:
    """Weight sample m + g(rho) * z for standard-normal noise z."""
    z = np.asarray(z, dtype=float)
    if z.shape != theta.m.shape:
        raise ValueError(f"noise shape {z.shape} does not match mean shape {theta.m.shape}")
    return theta.m + theta.scale * z


def activation(w: np.ndarray, x: np.ndarray, act: RidgeActivation = TANH) -> float:
    """Unit response s(<w, x>); bounded in (-1, 1) for tanh."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if w.shape != x.shape:
        raise ValueError(f"weight shape {w.shape} does not match input shape {x.shape}")
    return float(act.fn(w @ x))


def activation_deriv(w: np.ndarray, x: np.ndarray, act: RidgeActivation = TANH) -> float:
    """Scalar derivative factor s'(<w, x>); the gradient in w is s' * x."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if w.shape != x.shape:
        raise ValueError(f"weight shape {w.shape} does not match input shape {x.shape}")
    return float(act.deriv(w @ x))


def unit_response(theta: NeuronParam, z: np.ndarray, x: np.ndarray,
                  act: RidgeActivation = TANH) -> float:
    """Response of one unit at noise z and input x: s(<m + g(rho) z, x>)."""
    return activation(reparameterize(theta, z), x, act)


def unit_response_grad(theta: NeuronParam, z: np.ndarray, x: np.ndarray,
                       act: RidgeActivation = TANH) -> np.ndarray:
    """Gradient of unit_response w.r.t. theta, flat (d+1,) layout.

    With u = <m + g(rho) z, x>:  d/dm = s'(u) x  and
    d/drho = s'(u) <z, x> g'(rho).
    """
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if z.shape != theta.m.shape or x.shape != theta.m.shape:
        raise ValueError("z and x must match the parameter dimension")
    u = (theta.m + theta.scale * z) @ x
    sp = float(act.deriv(u))
    grad = np.empty(theta.dim + 1)
    grad[:-1] = sp * x
    grad[-1] = sp * (z @ x) * sigmoid(theta.rho)
    return grad


def kl_divergence(theta: NeuronParam, prior: PriorSpec) -> float:
    """KL divergence of N(m, g(rho)^2 I) from the prior N(m0, sigma0^2 I).

        ||m - m0||^2 / (2 sigma0^2)
      + (d/2) (g(rho)^2 / sigma0^2 - 1)
      + (d/2) log(sigma0^2 / g(rho)^2)

    Nonnegative, zero exactly at m = m0, g(rho) = sigma0; grows at most
    quadratically in |theta|.  The log term uses log_softplus so the value
    stays finite-and-correct for arbitrarily negative rho.
    """
    if theta.dim != prior.dim:
        raise ValueError("parameter and prior dimensions differ")
    d = theta.dim
    dm = theta.m - prior.m0
    ratio2 = (theta.scale / prior.sigma0) ** 2
    val = (dm @ dm) / (2.0 * prior.sigma0**2)
    val += 0.5 * d * (ratio2 - 1.0)
    val += d * (np.log(prior.sigma0) - log_softplus(theta.rho))
    # The exact value is >= 0; rounding near the minimizer can leave an
    # O(eps) negative residue.
    return max(float(val), 0.0)


def kl_divergence_grad(theta: NeuronParam, prior: PriorSpec) -> np.ndarray:
    """Gradient of kl_divergence w.r.t. theta, flat (d+1,) layout.

    d/dm = (m - m0) / sigma0^2 and
    d/drho = (d / sigma0^2) g'(rho) g(rho) - d g'(rho) / g(rho),
    with the ratio g'/g evaluated through dlog_softplus so it tends to 1
    (not 0/0) as rho -> -inf.
    """
    if theta.dim != prior.dim:
        raise ValueError("parameter and prior dimensions differ")
    d = theta.dim
    grad = np.empty(d + 1)
    grad[:-1] = (theta.m - prior.m0) / prior.sigma0**2
    grad[-1] = (d / prior.sigma0**2) * sigmoid(theta.rho) * theta.scale - d * dlog_softplus(theta.rho)
    return grad


def kl_divergence_grad_cloud(cloud: ParticleCloud, prior: PriorSpec) -> "tuple[np.ndarray, np.ndarray]":
    """kl_divergence_grad for every unit at once: (n, d) and (n,) blocks."""
    if cloud.dim != prior.dim:
        raise ValueError("cloud and prior dimensions differ")
    d = cloud.dim
    grad_m = (cloud.means - prior.m0) / prior.sigma0**2
    grad_rho = (d / prior.sigma0**2) * sigmoid(cloud.rhos) * softplus(cloud.rhos) \
        - d * dlog_softplus(cloud.rhos)
    return grad_m, grad_rho


def network_output(cloud: ParticleCloud, weights: np.ndarray, x: np.ndarray,
                   act: RidgeActivation = TANH) -> float:
    """Two-layer output (1/N) sum_i s(<w_i, x>) at sampled weights w_i."""
    weights = np.asarray(weights, dtype=float)
    x = np.asarray(x, dtype=float)
    if weights.shape != (cloud.n, cloud.dim):
        raise ValueError(f"expected {cloud.n} weight vectors of dimension {cloud.dim}")
    if x.shape != (cloud.dim,):
        raise ValueError("input dimension mismatch")
    return float(sorted_mean(act.fn(weights @ x)))
