"""Deterministic particle integrator for the common large-width limit.

As the number of units grows, every training scheme drives the empirical
parameter measure toward the same deterministic flow: each parameter theta
moves with velocity

    v[mu](theta) = -eta * Int (E_mu[resp](x) - y) * E[grad resp](theta, x) pi(dx, dy)
                   -eta * kl_grad(theta),

where E_mu[resp](x) is the population-averaged mean response at input x and
the inner expectations are over the reparameterization noise.  The measure
is represented by M particles transported with forward Euler; the data law
pi is approximated by one fixed sample drawn at the start of the run
(optionally redrawn every step for bias diagnostics), which makes the ODE
autonomous and the run reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    TANH,
    NeuronParam,
    ParticleCloud,
    PriorSpec,
    RidgeActivation,
    kl_divergence_grad,
    kl_divergence_grad_cloud,
    sigmoid,
)
from .data import DataModel, draw_data
from .expectations import ExpectationConfig, ridge_moments_batch
from .streams import STREAM_INIT, STREAM_PI, stream_rng
from .training import InitSpec, Snapshot, Trajectory, init_cloud

__all__ = ["LimitConfig", "velocity", "velocity_field", "integrate_limit"]


@dataclass(frozen=True)
class LimitConfig:
    """Euler transport of M particles along the limit velocity field."""

    n_particles: int
    horizon: float
    step_h: float = 0.01
    pi_samples: int = 2000
    resample_pi: bool = False
    eta: float = 1.0
    seed: int = 0
    realization: int = 0
    snapshot_times: tuple[float, ...] | None = None
    prior: PriorSpec | None = None
    init: InitSpec = field(default_factory=InitSpec)
    expectation: ExpectationConfig = field(default_factory=ExpectationConfig)

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not (self.horizon > 0.0):
            raise ValueError("horizon must be positive")
        if not (0.0 < self.step_h <= self.horizon):
            raise ValueError("step_h must lie in (0, horizon]")
        if self.pi_samples < 1:
            raise ValueError("pi_samples must be >= 1")
        if self.eta < 0.0:
            # eta = 0 freezes the flow (useful as a degenerate check).
            raise ValueError("eta must be nonnegative")

    def resolved_snapshots(self) -> tuple[float, ...]:
        if self.snapshot_times is not None:
            return self.snapshot_times
        return (0.0, self.horizon / 2.0, self.horizon)

    def resolved_prior(self, dim: int) -> PriorSpec:
        if self.prior is not None:
            return self.prior
        return PriorSpec(np.zeros(dim), 0.2)


def _as_sample_arrays(pi_sample) -> tuple[np.ndarray, np.ndarray]:
    """Accept either (xs, ys) arrays or an iterable of (x, y) pairs."""
    if isinstance(pi_sample, tuple) and len(pi_sample) == 2 \
            and np.ndim(pi_sample[0]) == 2:
        xs, ys = pi_sample
        return np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    pairs = list(pi_sample)
    if not pairs:
        raise ValueError("pi_sample must be nonempty")
    xs = np.array([p[0] for p in pairs], dtype=float)
    ys = np.array([p[1] for p in pairs], dtype=float)
    return xs, ys


def velocity_field(cloud: ParticleCloud, xs: np.ndarray, ys: np.ndarray,
                   prior: PriorSpec, cfg: ExpectationConfig, eta: float = 1.0,
                   act: RidgeActivation = TANH) -> tuple[np.ndarray, np.ndarray]:
    """Velocity of every particle against the cloud's own empirical measure.

    Returns the (n, d) mean block and (n,) rho block.  The population
    residual at each sampled input is reduced with an order-independent
    sum, so the field depends on the cloud only through its empirical
    measure (bit-exact permutation invariance).
    """
    rule = cfg.rule()
    resp, dresp, dresp_a = ridge_moments_batch(cloud.means, cloud.rhos, xs, rule, act)
    # (p,) population residuals <resp - y, mu> at each sampled input.
    resid = np.sort(resp, axis=0).sum(axis=0) / cloud.n - ys
    p = xs.shape[0]
    xnorms = np.linalg.norm(xs, axis=1)
    gp = sigmoid(cloud.rhos)

    # Data-term contractions over the sample axis use per-row pairwise
    # sums (not BLAS) so the result is bit-identical under particle
    # permutation.
    weighted = dresp * resid
    vel_m = np.empty_like(cloud.means)
    scratch = np.empty_like(weighted)
    for j in range(cloud.dim):
        np.multiply(weighted, xs[:, j], out=scratch)
        vel_m[:, j] = scratch.sum(axis=1)
    np.multiply(dresp_a, resid * xnorms, out=scratch)
    vel_rho = gp * scratch.sum(axis=1)
    vel_m *= -eta / p
    vel_rho *= -eta / p

    kl_m, kl_rho = kl_divergence_grad_cloud(cloud, prior)
    return vel_m - eta * kl_m, vel_rho - eta * kl_rho


def velocity(theta: NeuronParam, cloud: ParticleCloud, pi_sample, prior: PriorSpec,
             cfg: ExpectationConfig, eta: float = 1.0,
             act: RidgeActivation = TANH) -> np.ndarray:
    """Limit drift felt by one parameter theta inside the measure carried
    by cloud, flat (d+1,) layout.

    The data integral is replaced by the average over pi_sample; the
    population residual uses the cloud, the gradient factor uses theta.
    """
    if cloud.n < 1:
        raise ValueError("cloud must be nonempty")
    xs, ys = _as_sample_arrays(pi_sample)
    rule = cfg.rule()
    resp, _, _ = ridge_moments_batch(cloud.means, cloud.rhos, xs, rule, act)
    resid = np.sort(resp, axis=0).sum(axis=0) / cloud.n - ys

    _, dresp, dresp_a = ridge_moments_batch(theta.m[None, :], np.array([theta.rho]),
                                            xs, rule, act)
    p = xs.shape[0]
    xnorms = np.linalg.norm(xs, axis=1)
    weighted = dresp[0] * resid
    out = np.empty(theta.dim + 1)
    for j in range(theta.dim):
        out[j] = (weighted * xs[:, j]).sum()
    out[-1] = sigmoid(theta.rho) * (dresp_a[0] * (resid * xnorms)).sum()
    out *= -eta / p
    return out - eta * kl_divergence_grad(theta, prior)


def integrate_limit(cfg: LimitConfig, data: DataModel,
                    pi_sample: tuple[np.ndarray, np.ndarray] | None = None) -> Trajectory:
    """Transport M particles for ceil(T/h) forward-Euler steps.

    Initial particles and the pi sample are drawn once from their own
    streams; updates are synchronous (all particles read the pre-step
    cloud).  Snapshots copy the cloud at the Euler iteration nearest
    below each requested time.  pi_sample overrides the drawn data sample
    (bias diagnostics: vary the sample while keeping the same particles).
    """
    prior = cfg.resolved_prior(data.dim)
    init = cfg.init.resolved(prior, data.dim)
    cloud = init_cloud(init, cfg.n_particles, stream_rng(cfg.seed, cfg.realization, STREAM_INIT))

    n_steps = int(math.ceil(cfg.horizon / cfg.step_h - 1e-9))
    snaps: list[tuple[float, int]] = []
    seen: set[int] = set()
    for t in cfg.resolved_snapshots():
        k = min(int(math.floor(t / cfg.step_h + 1e-9)), n_steps)
        if k not in seen:
            seen.add(k)
            snaps.append((float(t), k))
    snap_at = {k: t for t, k in snaps}

    if pi_sample is not None:
        xs, ys = np.asarray(pi_sample[0], dtype=float), np.asarray(pi_sample[1], dtype=float)
    else:
        xs, ys = draw_data(data, stream_rng(cfg.seed, cfg.realization, STREAM_PI),
                           cfg.pi_samples)

    max_norm = float(np.max(cloud.param_norms()))
    max_disp = 0.0
    snapshots: list[Snapshot] = []
    if 0 in snap_at:
        snapshots.append(Snapshot(snap_at[0], 0, cloud.copy(),
                                  float(np.max(cloud.param_norms())), max_norm, max_disp))

    for k in range(n_steps):
        if cfg.resample_pi and k > 0:
            xs, ys = draw_data(data, stream_rng(cfg.seed, cfg.realization, STREAM_PI, k),
                               cfg.pi_samples)
        vel_m, vel_rho = velocity_field(cloud, xs, ys, prior, cfg.expectation, cfg.eta)
        means = cloud.means + cfg.step_h * vel_m
        rhos = cloud.rhos + cfg.step_h * vel_rho
        new = ParticleCloud(means, rhos)

        dm = new.means - cloud.means
        dr = new.rhos - cloud.rhos
        max_disp = max(max_disp, float(np.sqrt(np.einsum("nd,nd->n", dm, dm) + dr**2).max()))
        cloud = new
        max_norm = max(max_norm, float(np.max(cloud.param_norms())))

        if (k + 1) in snap_at:
            snapshots.append(Snapshot(snap_at[k + 1], k + 1, cloud.copy(),
                                      float(np.max(cloud.param_norms())), max_norm, max_disp))

    return Trajectory(tuple(snapshots), cfg)
