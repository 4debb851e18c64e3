"""Test functionals, empirical objective, distribution diagnostics, harness.

The convergence studies track scalar functionals of the particle cloud
(averages of per-unit statistics, the empirical negative objective and its
loss/KL split, the average posterior-predictive deviation), compare sample
clouds through the exact 1-D Wasserstein distance, and aggregate many
seeded runs over a (scheme x width) grid.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import permutations
from typing import Sequence

import numpy as np

from .core import (
    TANH,
    ParticleCloud,
    PriorSpec,
    RidgeActivation,
    kl_divergence,
    softplus,
    sorted_mean,
)
from .data import DataModel, draw_data, draw_datum  # noqa: F401  (re-export)
from .streams import STREAM_EVAL, stream_rng

__all__ = [
    "DataModel",
    "draw_datum",
    "draw_data",
    "FUNCTIONAL_KINDS",
    "Functional",
    "EvalContext",
    "particle_values",
    "eval_functional",
    "elbo_components",
    "predictive_std",
    "wasserstein1_1d",
    "histogram",
    "ExperimentGrid",
    "RunSummary",
    "run_experiment",
    "aggregate_runs",
]

FUNCTIONAL_KINDS = ("mean_norm", "g_rho", "mean_vector", "neg_elbo", "pred_std",
                    "custom_coordinate")


@dataclass(frozen=True)
class Functional:
    """A statistic of the cloud.

    Scalar kinds average a per-unit value: mean_norm is |m_i|_2, g_rho is
    the posterior deviation g(rho_i), custom_coordinate is entry ``index``
    of the flat (m_1..m_d, rho) vector.  mean_vector averages the mean
    vectors themselves.  neg_elbo and pred_std are sampled cloud-level
    statistics and need an EvalContext.
    """

    kind: str
    index: int | None = None

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "custom_coordinate" and (self.index is None or self.index < 0):
            raise ValueError("custom_coordinate needs a nonnegative index")

    @property
    def name(self) -> str:
        if self.kind == "custom_coordinate":
            return f"coordinate_{self.index}"
        return self.kind

    @classmethod
    def parse(cls, name: str) -> "Functional":
        if name.startswith("coordinate_"):
            return cls("custom_coordinate", int(name.removeprefix("coordinate_")))
        return cls(name)


@dataclass(frozen=True)
class EvalContext:
    """Sampling budget for the sampled functionals.

    neg_elbo uses n_data draws of ((x, y), one noise set); pred_std uses
    n_data input draws and n_draws posterior weight-set draws (shared
    across inputs).  Defaults follow the experimental protocol (100 each).
    """

    model: DataModel
    prior: PriorSpec
    rng: np.random.Generator
    n_data: int = 100
    n_draws: int = 100
    act: RidgeActivation = TANH


def particle_values(cloud: ParticleCloud, f: Functional) -> np.ndarray:
    """Per-unit values of a scalar functional, shape (n,)."""
    if f.kind == "mean_norm":
        return np.linalg.norm(cloud.means, axis=1)
    if f.kind == "g_rho":
        return softplus(cloud.rhos)
    if f.kind == "custom_coordinate":
        if f.index >= cloud.dim + 1:
            raise ValueError(f"coordinate index {f.index} out of range")
        return cloud.flat()[:, f.index]
    raise ValueError(f"functional {f.kind!r} has no per-unit values")


def eval_functional(cloud: ParticleCloud, f: Functional, ctx: EvalContext | None = None):
    """Empirical pairing of the functional with the cloud's measure.

    Scalar kinds return the order-independent average of particle_values;
    mean_vector returns the (d,) average of the unit means; neg_elbo and
    pred_std sample according to ctx.
    """
    if cloud.n < 1:
        raise ValueError("cloud must be nonempty")
    if f.kind in ("mean_norm", "g_rho", "custom_coordinate"):
        return float(sorted_mean(particle_values(cloud, f)))
    if f.kind == "mean_vector":
        return np.sort(cloud.means, axis=0).sum(axis=0) / cloud.n
    if ctx is None:
        raise ValueError(f"functional {f.kind!r} needs an EvalContext")
    if f.kind == "neg_elbo":
        total, _, _ = elbo_components(cloud, ctx)
        return total
    if f.kind == "pred_std":
        return predictive_std(cloud, ctx)
    raise AssertionError("unreachable")


def elbo_components(cloud: ParticleCloud, ctx: EvalContext) -> tuple[float, float, float]:
    """Sampled negative objective as (total, loss part, KL part).

    Loss part: average over n_data draws of ((x, y), one noise vector per
    unit) of half the squared residual of the sampled network output.
    KL part: per-unit average of the closed-form divergence (this is the
    1/N weighting of the objective).  total = loss + kl exactly.
    """
    n, d = cloud.means.shape
    xs, ys = draw_data(ctx.model, ctx.rng, ctx.n_data)
    z = ctx.rng.standard_normal((ctx.n_data, n, d))
    w = cloud.means[None, :, :] + softplus(cloud.rhos)[None, :, None] * z
    u = np.einsum("snd,sd->sn", w, xs)
    preds = np.sort(ctx.act.fn(u), axis=1).sum(axis=1) / n
    loss = float(np.mean(0.5 * (ys - preds) ** 2))
    kls = np.array([kl_divergence(cloud[i], ctx.prior) for i in range(n)])
    kl = float(sorted_mean(kls))
    return loss + kl, loss, kl


def predictive_std(cloud: ParticleCloud, ctx: EvalContext) -> float:
    """Average over inputs of the sampled deviation of the network output.

    Draws n_draws posterior weight sets (shared across the n_data inputs)
    and averages the per-input sample standard deviation of the output.
    Nonnegative by construction.
    """
    n, d = cloud.means.shape
    xs, _ = draw_data(ctx.model, ctx.rng, ctx.n_data)
    z = ctx.rng.standard_normal((ctx.n_draws, n, d))
    w = cloud.means[None, :, :] + softplus(cloud.rhos)[None, :, None] * z
    # Chunk over inputs: the response tensor is (n_draws, n, chunk).
    stds = np.empty(ctx.n_data)
    chunk = max(1, int(2e6 // (ctx.n_draws * n)) or 1)
    for lo in range(0, ctx.n_data, chunk):
        hi = min(lo + chunk, ctx.n_data)
        u = np.einsum("knd,pd->knp", w, xs[lo:hi])
        outputs = ctx.act.fn(u).mean(axis=1)          # (n_draws, chunk)
        stds[lo:hi] = outputs.std(axis=0, ddof=1)
    return float(np.mean(stds))


def wasserstein1_1d(samples_a: Sequence[float], samples_b: Sequence[float]) -> float:
    """Exact 1-D Wasserstein-1 distance between equal-size samples.

    For empirical measures with equal atom counts the optimal coupling is
    the monotone rearrangement, so the distance is the mean absolute
    difference of the sorted samples.  (Unequal sizes would need quantile
    interpolation, which this implementation deliberately does not do.)
    """
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.ndim != 1 or b.ndim != 1 or a.size == 0 or b.size == 0:
        raise ValueError("inputs must be nonempty 1-d samples")
    if a.size != b.size:
        raise ValueError("sample sizes must match (quantile interpolation not implemented)")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def _w1_bruteforce(a: Sequence[float], b: Sequence[float]) -> float:
    """Minimum-cost assignment by enumeration; oracle for tiny inputs."""
    a = list(a)
    best = np.inf
    for perm in permutations(b):
        cost = float(np.mean([abs(x - y) for x, y in zip(a, perm)]))
        best = min(best, cost)
    return best


def histogram(values: Sequence[float], bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width histogram over [min, max]; returns (counts, edges).

    Counts sum to the sample size; edges has bins + 1 entries.  All-equal
    samples occupy a single bin centered on the common value.
    """
    values = np.asarray(values, dtype=float)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    counts, edges = np.histogram(values, bins=bins)
    return counts, edges


@dataclass(frozen=True)
class ExperimentGrid:
    """Cells of a convergence study: schemes x widths x realizations."""

    schemes: tuple[str, ...]
    n_values: tuple[int, ...]
    n_seeds: int

    def __post_init__(self):
        if not self.schemes or not self.n_values or self.n_seeds < 1:
            raise ValueError("grid must be nonempty")
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))


@dataclass(frozen=True)
class RunSummary:
    """Functional values of one realization at every snapshot time."""

    scheme: str
    n_neurons: int
    realization: int
    times: tuple[float, ...]
    values: dict[str, tuple[float, ...]]   # functional name -> per-time values
    elbo_loss: tuple[float, ...]
    elbo_kl: tuple[float, ...]
    wall_time: float
    max_param_norm: float
    max_step_displacement: float

    def __post_init__(self):
        if any(v < 0.0 for v in self.elbo_kl):
            raise ValueError("KL component must be nonnegative")

    def value_at(self, name: str, t: float) -> float:
        for i, ti in enumerate(self.times):
            if abs(ti - t) <= 1e-12:
                return self.values[name][i]
        raise KeyError(f"no snapshot at t={t}")


def summarize_trajectory(traj, data: DataModel, prior: PriorSpec,
                         functionals: Sequence[Functional], *, seed: int,
                         realization: int, n_data: int = 100, n_draws: int = 100,
                         wall_time: float = 0.0) -> RunSummary:
    """Evaluate functionals (plus the objective split) on every snapshot.

    Evaluation randomness comes from the EVAL stream keyed by the snapshot
    index and a fixed slot per sampled functional, so a functional's value
    does not depend on which other functionals were requested, and
    summaries are identical across schemes run with the same seed.
    """
    cfg = traj.config
    values: dict[str, list[float]] = {}
    elbo_loss: list[float] = []
    elbo_kl: list[float] = []
    for snap_index, snap in enumerate(traj.snapshots):
        def slot_rng(slot: int):
            return stream_rng(seed, realization, STREAM_EVAL, snap_index * 16 + slot)

        total, loss, kl = elbo_components(
            snap.cloud, EvalContext(data, prior, slot_rng(0), n_data=n_data, n_draws=n_draws))
        elbo_loss.append(loss)
        elbo_kl.append(kl)
        for f in functionals:
            if f.kind == "neg_elbo":
                values.setdefault(f.name, []).append(total)
            elif f.kind == "pred_std":
                ctx = EvalContext(data, prior, slot_rng(1), n_data=n_data, n_draws=n_draws)
                values.setdefault(f.name, []).append(predictive_std(snap.cloud, ctx))
            elif f.kind == "mean_vector":
                vec = eval_functional(snap.cloud, f)
                for j, v in enumerate(vec):
                    values.setdefault(f"mean_vector_{j + 1}", []).append(float(v))
            else:
                values.setdefault(f.name, []).append(float(eval_functional(snap.cloud, f)))
    return RunSummary(
        scheme=getattr(cfg, "scheme", "limit"),
        n_neurons=getattr(cfg, "n_neurons", getattr(cfg, "n_particles", 0)),
        realization=realization,
        times=traj.times,
        values={k: tuple(v) for k, v in values.items()},
        elbo_loss=tuple(elbo_loss),
        elbo_kl=tuple(elbo_kl),
        wall_time=wall_time,
        max_param_norm=traj.max_param_norm,
        max_step_displacement=traj.max_step_displacement,
    )


def _run_cell(args) -> RunSummary:
    """One grid cell: train, then summarize.  Top-level for pickling."""
    base, data, functionals, scheme, n, realization, n_data, n_draws = args
    from .training import train

    cfg = replace(base, scheme=scheme, n_neurons=n, realization=realization)
    t0 = time.perf_counter()
    traj = train(cfg, data)
    wall = time.perf_counter() - t0
    prior = cfg.resolved_prior(data.dim)
    return summarize_trajectory(traj, data, prior, functionals, seed=cfg.seed,
                                realization=realization, n_data=n_data, n_draws=n_draws,
                                wall_time=wall)


def run_experiment(grid: ExperimentGrid, base, data: DataModel,
                   functionals: Sequence[Functional], *, n_data: int = 100,
                   n_draws: int = 100, n_workers: int = 1) -> list[RunSummary]:
    """Execute every (scheme, N, realization) cell and summarize each run.

    base is a TrainConfig template whose scheme/n_neurons/realization are
    overridden per cell; the shared seed plus per-cell realization indices
    give common random numbers across schemes.  Cells run in parallel when
    n_workers > 1; results keep deterministic grid order either way.  A
    failing run aborts the whole grid with the offending cell named.
    """
    funcs = tuple(functionals)
    cells = [(base, data, funcs, scheme, n, r, n_data, n_draws)
             for scheme in grid.schemes for n in grid.n_values for r in range(grid.n_seeds)]
    results: list[RunSummary] = []
    if n_workers <= 1:
        for cell in cells:
            try:
                results.append(_run_cell(cell))
            except Exception as exc:
                raise RuntimeError(
                    f"run failed for cell scheme={cell[3]} N={cell[4]} "
                    f"realization={cell[5]}: {exc}") from exc
        return results
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(_run_cell, cell) for cell in cells]
        for cell, fut in zip(cells, futures):
            try:
                results.append(fut.result())
            except Exception as exc:
                raise RuntimeError(
                    f"run failed for cell scheme={cell[3]} N={cell[4]} "
                    f"realization={cell[5]}: {exc}") from exc
    return results


def aggregate_runs(runs: Sequence[RunSummary]) -> list[dict]:
    """Mean/std/quantiles across realizations per (scheme, N, functional, t).

    Quantiles use linear interpolation (numpy default, type 7) and std is
    the ddof=1 sample deviation (0 for a single run), so summary tables
    are bit-stable given the runs.
    """
    by_cell: dict[tuple[str, int], list[RunSummary]] = {}
    for run in runs:
        by_cell.setdefault((run.scheme, run.n_neurons), []).append(run)
    rows: list[dict] = []
    for (scheme, n), cell_runs in sorted(by_cell.items()):
        cell_runs = sorted(cell_runs, key=lambda r: r.realization)
        names = list(cell_runs[0].values) + ["neg_elbo_loss", "neg_elbo_kl"]
        times = cell_runs[0].times
        for name in names:
            for i, t in enumerate(times):
                if name == "neg_elbo_loss":
                    vals = np.array([r.elbo_loss[i] for r in cell_runs])
                elif name == "neg_elbo_kl":
                    vals = np.array([r.elbo_kl[i] for r in cell_runs])
                else:
                    vals = np.array([r.values[name][i] for r in cell_runs])
                q = np.quantile(vals, [0.025, 0.25, 0.5, 0.75, 0.975])
                rows.append({
                    "scheme": scheme, "N": n, "functional": name, "t": t,
                    "mean": float(vals.mean()),
                    "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                    "q025": float(q[0]), "q25": float(q[1]), "q50": float(q[2]),
                    "q75": float(q[3]), "q975": float(q[4]),
                })
    return rows
