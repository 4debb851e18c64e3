"""The three stochastic-gradient schemes and the shared training loop.

All schemes maximize the same regularized objective (data fit plus a KL
penalty weighted by 1/N) and differ only in how the per-step Gaussian
expectations are treated:

* ``idealized``            -- expectations evaluated by quadrature, exact
                              up to quadrature error;
* ``idealized_minibatch_proxy`` -- the idealized update with the
                              expectations replaced by a Monte Carlo
                              average over ``proxy_minibatch`` noise draws
                              (structurally the bbb update at that batch
                              size);
* ``bbb``                  -- one fresh noise vector per unit and inner
                              sample (N*B draws per step), the classical
                              reparameterization estimator; unbiased for
                              the idealized update direction;
* ``minimal_vi``           -- exactly two shared noise vectors per step,
                              treating the noise like two extra data
                              variables.  Its mean step differs from the
                              idealized direction only by an O(1/N^2)
                              per-unit covariance correction.

Iteration k corresponds to scaled time t = k/N, so a horizon T means
floor(N*T) steps.  Within a step every unit update reads the pre-step
cloud (double-buffered), and each step consumes one fresh datum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    TANH,
    ParticleCloud,
    PriorSpec,
    RidgeActivation,
    kl_divergence_grad_cloud,
    sigmoid,
    softplus,
    softplus_inverse,
    sorted_sum,
)
from .data import DataModel, draw_data, draw_datum
from .expectations import ExpectationConfig, ridge_moments
from .streams import STREAM_DATA, STREAM_INIT, STREAM_NOISE, stream_rng

__all__ = [
    "SCHEMES",
    "InitSpec",
    "TrainConfig",
    "Snapshot",
    "Trajectory",
    "init_cloud",
    "step_idealized",
    "step_bbb",
    "step_minimal",
    "train",
]

SCHEMES = ("idealized", "idealized_minibatch_proxy", "bbb", "minimal_vi")


@dataclass(frozen=True)
class InitSpec:
    """Initial law of the unit parameters: independent Gaussians per unit.

    ``mean_center=None`` defaults to the prior mean and ``rho_center=None``
    to the rho whose softplus equals the prior deviation, i.e. the
    initialization is centered on the prior.
    """

    mean_center: np.ndarray | float | None = None
    mean_std: float = 0.1
    rho_center: float | None = None
    rho_std: float = 0.1

    def __post_init__(self):
        if not (self.mean_std > 0.0 and self.rho_std > 0.0):
            raise ValueError("init standard deviations must be positive")

    def resolved(self, prior: PriorSpec, dim: int) -> "InitSpec":
        """Fill prior-linked defaults; returns a spec with concrete centers."""
        center = self.mean_center
        if center is None:
            center = prior.m0
        center = np.broadcast_to(np.asarray(center, dtype=float), (dim,)).copy()
        rho_c = self.rho_center
        if rho_c is None:
            rho_c = softplus_inverse(prior.sigma0)
        return InitSpec(center, self.mean_std, float(rho_c), self.rho_std)


@dataclass(frozen=True)
class TrainConfig:
    """One training run: scheme, sizes, learning rate, horizon, streams."""

    scheme: str
    n_neurons: int
    horizon: float
    eta: float = 1.0
    batch_b: int = 1
    proxy_minibatch: int = 100
    seed: int = 0
    realization: int = 0
    snapshot_times: tuple[float, ...] | None = None
    prior: PriorSpec | None = None
    init: InitSpec = field(default_factory=InitSpec)
    expectation: ExpectationConfig = field(default_factory=ExpectationConfig)
    dataset_size: int | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.n_neurons < 1:
            raise ValueError("n_neurons must be >= 1")
        if not (self.eta > 0.0):
            raise ValueError("eta must be positive")
        if not (self.horizon > 0.0):
            raise ValueError("horizon must be positive")
        if self.batch_b < 1:
            raise ValueError("batch_b must be >= 1")
        if self.proxy_minibatch < 1:
            raise ValueError("proxy_minibatch must be >= 1")
        if self.dataset_size is not None and self.dataset_size < 1:
            raise ValueError("dataset_size must be >= 1 when given")
        if self.snapshot_times is not None:
            times = tuple(float(t) for t in self.snapshot_times)
            if any(t < 0.0 or t > self.horizon for t in times):
                raise ValueError("snapshot times must lie in [0, horizon]")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("snapshot times must be strictly increasing")
            object.__setattr__(self, "snapshot_times", times)

    def resolved_snapshots(self) -> tuple[float, ...]:
        if self.snapshot_times is not None:
            return self.snapshot_times
        return (0.0, self.horizon / 2.0, self.horizon)

    def resolved_prior(self, dim: int) -> PriorSpec:
        if self.prior is not None:
            return self.prior
        return PriorSpec(np.zeros(dim), 0.2)


@dataclass(frozen=True)
class Snapshot:
    """Cloud state at one requested scaled time, plus running diagnostics."""

    t: float
    iteration: int
    cloud: ParticleCloud
    max_param_norm: float           # over this snapshot's cloud
    running_max_param_norm: float   # over all iterations so far
    running_max_step_disp: float    # max_i |theta_{k+1}^i - theta_k^i| so far


@dataclass(frozen=True)
class Trajectory:
    """Snapshots of one run at scaled times t = k/N (or t = k*h)."""

    snapshots: tuple[Snapshot, ...]
    config: object

    def __post_init__(self):
        times = [s.t for s in self.snapshots]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("snapshot times must be strictly increasing")

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(s.t for s in self.snapshots)

    @property
    def final_cloud(self) -> ParticleCloud:
        return self.snapshots[-1].cloud

    @property
    def max_param_norm(self) -> float:
        return self.snapshots[-1].running_max_param_norm

    @property
    def max_step_displacement(self) -> float:
        return self.snapshots[-1].running_max_step_disp

    def cloud_at(self, t: float) -> ParticleCloud:
        for s in self.snapshots:
            if math.isclose(s.t, t, rel_tol=0.0, abs_tol=1e-12):
                return s.cloud
        raise KeyError(f"no snapshot at t={t}")


def init_cloud(spec: InitSpec, n: int, rng: np.random.Generator,
               prior: PriorSpec | None = None, dim: int | None = None) -> ParticleCloud:
    """Draw n i.i.d. unit parameters; deterministic given the rng state.

    prior/dim are needed only when the spec still has prior-linked
    defaults (mean_center or rho_center left as None).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if spec.mean_center is None or spec.rho_center is None:
        if prior is None:
            raise ValueError("unresolved InitSpec requires a prior")
        spec = spec.resolved(prior, prior.dim if dim is None else dim)
    center = np.atleast_1d(np.asarray(spec.mean_center, dtype=float))
    d = center.shape[0] if dim is None else dim
    center = np.broadcast_to(center, (d,))
    means = center + spec.mean_std * rng.standard_normal((n, d))
    rhos = spec.rho_center + spec.rho_std * rng.standard_normal(n)
    return ParticleCloud(means, rhos)


def step_idealized(cloud: ParticleCloud, datum, eta: float, prior: PriorSpec,
                   cfg: ExpectationConfig, act: RidgeActivation = TANH) -> ParticleCloud:
    """One exact-expectation step at datum (x, y).

    Every unit descends the population term
       (eta/N^2) sum_{j != i} (E[s_j] - y) E[grad s_i]
    plus its own coupled term (eta/N^2) E[(s_i - y) grad s_i] and the KL
    drift (eta/N) kl_grad.  The interaction sum is shared across units:
    cost O(N q) per step.
    """
    x, y = datum
    x = np.asarray(x, dtype=float)
    n = cloud.n
    rule = cfg.rule()
    resp, dresp, dresp_a, resp_dresp, resp_dresp_a = ridge_moments(
        cloud.means, cloud.rhos, x, rule, act, with_self=True)
    xn = float(np.linalg.norm(x))
    gp = sigmoid(cloud.rhos)

    # Interaction coefficient sum_{j != i} (E[s_j] - y), order-independent.
    total = sorted_sum(resp - y)
    others = total - (resp - y)

    coeff_m = others * dresp + (resp_dresp - y * dresp)
    coeff_rho = others * dresp_a + (resp_dresp_a - y * dresp_a)

    kl_m, kl_rho = kl_divergence_grad_cloud(cloud, prior)
    scale = eta / n**2
    means = cloud.means - scale * np.outer(coeff_m, x) - (eta / n) * kl_m
    rhos = cloud.rhos - scale * gp * xn * coeff_rho - (eta / n) * kl_rho
    return ParticleCloud(means, rhos)


def step_bbb(cloud: ParticleCloud, datum, eta: float, batch_b: int, prior: PriorSpec,
             rng: np.random.Generator | None, act: RidgeActivation = TANH,
             noise: np.ndarray | None = None) -> ParticleCloud:
    """One reparameterization-sampled step with N*B fresh noise vectors.

    noise, when given, must have shape (n, batch_b, d) and replaces the
    rng draw (used by tests that need to control the pairing of noise to
    units).  Unit i's own noise appears both in its response inside the
    residual sum and in its gradient, which reproduces the coupled
    self-term in expectation.
    """
    x, y = datum
    x = np.asarray(x, dtype=float)
    n, d = cloud.means.shape
    if noise is None:
        if rng is None:
            raise ValueError("step_bbb needs an rng when noise is not supplied")
        noise = rng.standard_normal((n, batch_b, d))
    elif noise.shape != (n, batch_b, d):
        raise ValueError(f"noise must have shape {(n, batch_b, d)}")
    g = softplus(cloud.rhos)
    gp = sigmoid(cloud.rhos)

    zx = noise @ x                                   # (n, b) projections <Z, x>
    u = (cloud.means @ x)[:, None] + g[:, None] * zx
    t = act.fn(u)
    sp = act.deriv_at(u, t)
    resid_sums = np.sort(t - y, axis=0).sum(axis=0)  # (b,), order-independent

    # sum_l S_l s'_{il} accumulated per inner sample: keeps the reduction
    # bit-identical under unit permutation (see expectations.ridge_moments).
    coeff_m = np.zeros(n)
    coeff_rho = np.zeros(n)
    for ell in range(batch_b):
        coeff_m += resid_sums[ell] * sp[:, ell]
        coeff_rho += resid_sums[ell] * (sp[:, ell] * zx[:, ell])

    kl_m, kl_rho = kl_divergence_grad_cloud(cloud, prior)
    scale = eta / (n**2 * batch_b)
    means = cloud.means - scale * np.outer(coeff_m, x) - (eta / n) * kl_m
    rhos = cloud.rhos - scale * gp * coeff_rho - (eta / n) * kl_rho
    return ParticleCloud(means, rhos)


def step_minimal(cloud: ParticleCloud, datum, eta: float, prior: PriorSpec,
                 rng: np.random.Generator | None, act: RidgeActivation = TANH,
                 noise: np.ndarray | None = None) -> ParticleCloud:
    """One two-draw step: shared noise z1 for responses, z2 for gradients.

    Cost O(N d) and exactly two Gaussian d-vectors per step.  Because z1
    and z2 are independent, the mean update is the fully decoupled product
    of expectations; the idealized self-term correction is absent (it
    vanishes in the large-N limit).
    """
    x, y = datum
    x = np.asarray(x, dtype=float)
    n, d = cloud.means.shape
    if noise is None:
        if rng is None:
            raise ValueError("step_minimal needs an rng when noise is not supplied")
        noise = rng.standard_normal((2, d))
    elif noise.shape != (2, d):
        raise ValueError(f"noise must have shape {(2, d)}")
    z1, z2 = noise
    g = softplus(cloud.rhos)
    gp = sigmoid(cloud.rhos)

    u1 = cloud.means @ x + g * (z1 @ x)
    resid_sum = sorted_sum(act.fn(u1) - y)

    u2 = cloud.means @ x + g * (z2 @ x)
    sp2 = act.deriv(u2)

    kl_m, kl_rho = kl_divergence_grad_cloud(cloud, prior)
    scale = eta / n**2
    means = cloud.means - scale * resid_sum * np.outer(sp2, x) - (eta / n) * kl_m
    rhos = cloud.rhos - scale * resid_sum * sp2 * (z2 @ x) * gp - (eta / n) * kl_rho
    return ParticleCloud(means, rhos)


def _snapshot_iterations(times: Sequence[float], n: int, n_steps: int) -> list[tuple[float, int]]:
    """Map requested scaled times to iterations floor(N t), deduplicated.

    When several requested times land on the same iteration (possible for
    T < 1/N), only the earliest is kept.
    """
    out: list[tuple[float, int]] = []
    seen: set[int] = set()
    for t in times:
        k = min(int(math.floor(n * t + 1e-9)), n_steps)
        if k not in seen:
            seen.add(k)
            out.append((float(t), k))
    return out


def train(config: TrainConfig, data: DataModel) -> Trajectory:
    """Run floor(N*T) steps of the configured scheme over a fresh data stream.

    Each step k draws its datum from the data stream keyed by
    (seed, realization, k) -- identical across schemes for common random
    numbers -- and, for the sampled schemes, its noise from the separate
    noise stream.  Snapshots copy the full cloud at iteration floor(N*t)
    for every requested time t.
    """
    n = config.n_neurons
    prior = config.resolved_prior(data.dim)
    init = config.init.resolved(prior, data.dim)
    cloud = init_cloud(init, n, stream_rng(config.seed, config.realization, STREAM_INIT))

    n_steps = int(math.floor(n * config.horizon + 1e-9))
    snaps = _snapshot_iterations(config.resolved_snapshots(), n, n_steps)
    snap_at = {k: t for t, k in snaps}

    dataset = None
    if config.dataset_size is not None:
        dataset = draw_data(data, stream_rng(config.seed, config.realization, STREAM_DATA),
                            config.dataset_size)

    batch = config.batch_b if config.scheme == "bbb" else config.proxy_minibatch

    max_norm = float(np.max(cloud.param_norms()))
    max_disp = 0.0
    snapshots: list[Snapshot] = []
    if 0 in snap_at:
        snapshots.append(Snapshot(snap_at[0], 0, cloud.copy(),
                                  float(np.max(cloud.param_norms())), max_norm, max_disp))

    for k in range(n_steps):
        if dataset is None:
            datum = draw_datum(data, stream_rng(config.seed, config.realization, STREAM_DATA, k))
        else:
            xs, ys = dataset
            idx = stream_rng(config.seed, config.realization, STREAM_DATA, k).integers(len(ys))
            datum = (xs[idx], float(ys[idx]))

        if config.scheme == "idealized":
            new = step_idealized(cloud, datum, config.eta, prior, config.expectation)
        else:
            rng = stream_rng(config.seed, config.realization, STREAM_NOISE, k)
            if config.scheme == "minimal_vi":
                new = step_minimal(cloud, datum, config.eta, prior, rng)
            else:
                new = step_bbb(cloud, datum, config.eta, batch, prior, rng)

        dm = new.means - cloud.means
        dr = new.rhos - cloud.rhos
        step_disp = float(np.sqrt(np.einsum("nd,nd->n", dm, dm) + dr**2).max())
        max_disp = max(max_disp, step_disp)
        cloud = new
        max_norm = max(max_norm, float(np.max(cloud.param_norms())))

        if (k + 1) in snap_at:
            snapshots.append(Snapshot(snap_at[k + 1], k + 1, cloud.copy(),
                                      float(np.max(cloud.param_norms())), max_norm, max_disp))

    return Trajectory(tuple(snapshots), config)
