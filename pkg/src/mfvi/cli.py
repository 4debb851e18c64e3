"""Command-line entry point: config parsing, run orchestration, CSV output.

Configuration is a single JSON document; every field has a default, the
fully-resolved config is written next to the outputs, and re-running from
that file reproduces the outputs byte-identically.  Command-line overrides
use flat dotted keys (``--set sweep.n_seeds=5``).

Output files (all CSV, one provenance comment line, then a header row,
floats at 17 significant digits):

    trajectory.csv   t, neuron_index, m_1..m_d, rho
    functionals.csv  scheme, N, seed, t, functional, value
    summary.csv      scheme, N, functional, t, mean, std, q025, q25, q50, q75, q975
    hist.csv         scheme, N, t, functional, bin_left, bin_right, count
    agreement.csv    functional, t, scheme, mean_value, abs_diff_vs_idealized

The ``seed`` column holds the realization index; the master seed is in the
provenance line and the resolved config.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    ExperimentGrid,
    Functional,
    RunSummary,
    aggregate_runs,
    histogram,
    particle_values,
    run_experiment,
    summarize_trajectory,
)
from .core import PriorSpec
from .data import DataModel
from .expectations import ExpectationConfig
from .limit import LimitConfig, integrate_limit
from .training import InitSpec, TrainConfig, train

__all__ = ["DEFAULT_CONFIG", "ConfigError", "resolve_config", "run_cli", "main"]


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "scheme": "minimal_vi",
    "n_neurons": 1000,
    "eta": 1.0,
    "horizon": 5.0,
    "batch_b": 1,
    "proxy_minibatch": 100,
    "dataset_size": None,
    "snapshot_times": None,       # null -> [0, T/2, T]
    "time_grid": 11,              # uniform snapshot count for time series
    "prior": {"mean": 0.0, "sigma0": 0.2},
    "init": {"mean_center": None, "mean_std": 0.1, "rho_center": None, "rho_std": 0.1},
    "expectation": {"method": "quadrature", "q_nodes": 64, "mc_samples": 10000, "mc_seed": 0},
    "data": {"dim": 5, "teacher_seed": 0, "noise_std": 0.01},
    "limit": {"n_particles": 1000, "step_h": 0.01, "pi_samples": 2000, "resample_pi": False},
    "eval": {"n_data": 100, "n_draws": 100},
    "functionals": ["mean_norm", "g_rho", "neg_elbo", "pred_std"],
    "hist": {"bins": 30, "functionals": ["mean_norm", "g_rho", "coordinate_0"]},
    "sweep": {"schemes": ["idealized", "bbb", "minimal_vi"],
              "n_values": [100, 300, 1000], "n_seeds": 10},
    "compare": {"schemes": ["idealized", "bbb", "minimal_vi"], "n_seeds": 3},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        dotted = f"{path}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted} must be an object")
            out[key] = _merge(defaults[key], value, dotted + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_override(config: dict, dotted: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    node[parts[-1]] = value


def resolve_config(path: str | None, overrides: list[str] = (),
                   seed: int | None = None) -> dict:
    """Load, merge with defaults, apply overrides; raise ConfigError on
    unknown keys or an unparsable file."""
    user: dict = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    config = _merge(DEFAULT_CONFIG, user)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got: {item}")
        key, _, raw = item.partition("=")
        _apply_override(config, key.strip(), raw.strip())
    if seed is not None:
        config["seed"] = int(seed)
    return config


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _provenance(config: dict) -> str:
    return f"# mfvi-{__version__} config_sha256={_config_hash(config)} seed={config['seed']}"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _write_csv(path: Path, provenance: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(provenance + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# -- config -> objects -------------------------------------------------------

def _build_data(config: dict) -> DataModel:
    c = config["data"]
    return DataModel.with_random_teacher(int(c["dim"]), int(c["teacher_seed"]),
                                         float(c["noise_std"]))


def _build_prior(config: dict) -> PriorSpec:
    c = config["prior"]
    dim = int(config["data"]["dim"])
    return PriorSpec(np.full(dim, float(c["mean"])), float(c["sigma0"]))


def _build_init(config: dict) -> InitSpec:
    c = config["init"]
    return InitSpec(
        mean_center=None if c["mean_center"] is None else float(c["mean_center"]),
        mean_std=float(c["mean_std"]),
        rho_center=None if c["rho_center"] is None else float(c["rho_center"]),
        rho_std=float(c["rho_std"]),
    )


def _build_expectation(config: dict) -> ExpectationConfig:
    c = config["expectation"]
    return ExpectationConfig(method=c["method"], q_nodes=int(c["q_nodes"]),
                             mc_samples=int(c["mc_samples"]), mc_seed=int(c["mc_seed"]))


def _snapshot_times(config: dict) -> tuple[float, ...] | None:
    times = config["snapshot_times"]
    if times is None:
        return None
    return tuple(float(t) for t in times)


def _build_train(config: dict, scheme: str | None = None,
                 n_neurons: int | None = None, realization: int = 0,
                 snapshot_times=None) -> TrainConfig:
    try:
        return TrainConfig(
            scheme=scheme or config["scheme"],
            n_neurons=int(n_neurons if n_neurons is not None else config["n_neurons"]),
            horizon=float(config["horizon"]),
            eta=float(config["eta"]),
            batch_b=int(config["batch_b"]),
            proxy_minibatch=int(config["proxy_minibatch"]),
            seed=int(config["seed"]),
            realization=realization,
            snapshot_times=snapshot_times if snapshot_times is not None
            else _snapshot_times(config),
            prior=_build_prior(config),
            init=_build_init(config),
            expectation=_build_expectation(config),
            dataset_size=None if config["dataset_size"] is None else int(config["dataset_size"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_limit(config: dict, snapshot_times=None) -> LimitConfig:
    c = config["limit"]
    try:
        return LimitConfig(
            n_particles=int(c["n_particles"]),
            horizon=float(config["horizon"]),
            step_h=float(c["step_h"]),
            pi_samples=int(c["pi_samples"]),
            resample_pi=bool(c["resample_pi"]),
            eta=float(config["eta"]),
            seed=int(config["seed"]),
            snapshot_times=snapshot_times if snapshot_times is not None
            else _snapshot_times(config),
            prior=_build_prior(config),
            init=_build_init(config),
            expectation=_build_expectation(config),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_functionals(names) -> tuple[Functional, ...]:
    try:
        return tuple(Functional.parse(str(n)) for n in names)
    except ValueError as exc:
        raise ConfigError(f"functionals: {exc}") from exc


def _uniform_times(config: dict) -> tuple[float, ...]:
    horizon = float(config["horizon"])
    k = max(2, int(config["time_grid"]))
    return tuple(float(t) for t in np.linspace(0.0, horizon, k))


# -- output helpers ----------------------------------------------------------

def _write_trajectory(out: Path, provenance: str, traj) -> None:
    dim = traj.snapshots[0].cloud.dim
    header = ["t", "neuron_index"] + [f"m_{j + 1}" for j in range(dim)] + ["rho"]

    def rows():
        for snap in traj.snapshots:
            cloud = snap.cloud
            for i in range(cloud.n):
                yield [snap.t, i, *cloud.means[i], cloud.rhos[i]]

    _write_csv(out / "trajectory.csv", provenance, header, rows())


def _functional_rows(summaries: list[RunSummary]):
    for s in summaries:
        names = list(s.values) + ["neg_elbo_loss", "neg_elbo_kl"]
        for name in names:
            series = (s.elbo_loss if name == "neg_elbo_loss"
                      else s.elbo_kl if name == "neg_elbo_kl" else s.values[name])
            for t, v in zip(s.times, series):
                yield [s.scheme, s.n_neurons, s.realization, t, name, v]


def _write_functionals(out: Path, provenance: str, summaries: list[RunSummary]) -> None:
    _write_csv(out / "functionals.csv", provenance,
               ["scheme", "N", "seed", "t", "functional", "value"],
               _functional_rows(summaries))


def _write_summary(out: Path, provenance: str, summaries: list[RunSummary]) -> None:
    rows = ([r["scheme"], r["N"], r["functional"], r["t"], r["mean"], r["std"],
             r["q025"], r["q25"], r["q50"], r["q75"], r["q975"]]
            for r in aggregate_runs(summaries))
    _write_csv(out / "summary.csv", provenance,
               ["scheme", "N", "functional", "t", "mean", "std",
                "q025", "q25", "q50", "q75", "q975"], rows)


def _write_hist(out: Path, provenance: str, config: dict, trajectories: dict) -> None:
    bins = int(config["hist"]["bins"])
    funcs = _parse_functionals(config["hist"]["functionals"])
    horizon = float(config["horizon"])
    hist_times = (0.0, horizon / 2.0, horizon)

    def rows():
        for scheme, traj in trajectories.items():
            for snap in traj.snapshots:
                if not any(math.isclose(snap.t, t, abs_tol=1e-12) for t in hist_times):
                    continue
                for f in funcs:
                    counts, edges = histogram(particle_values(snap.cloud, f), bins)
                    n = snap.cloud.n
                    for b in range(len(counts)):
                        yield [scheme, n, snap.t, f.name, edges[b], edges[b + 1],
                               int(counts[b])]

    _write_csv(out / "hist.csv", provenance,
               ["scheme", "N", "t", "functional", "bin_left", "bin_right", "count"],
               rows())


# -- subcommands -------------------------------------------------------------

def _cmd_train(config: dict, out: Path, threads: int) -> None:
    data = _build_data(config)
    traj = train(_build_train(config), data)
    _write_trajectory(out, _provenance(config), traj)


def _cmd_limit(config: dict, out: Path, threads: int) -> None:
    data = _build_data(config)
    traj = integrate_limit(_build_limit(config), data)
    _write_trajectory(out, _provenance(config), traj)


def _limit_summary(config: dict, data: DataModel, snapshot_times=None) -> RunSummary:
    lcfg = _build_limit(config, snapshot_times=snapshot_times)
    traj = integrate_limit(lcfg, data)
    return summarize_trajectory(
        traj, data, lcfg.resolved_prior(data.dim),
        _parse_functionals(config["functionals"]),
        seed=lcfg.seed, realization=0,
        n_data=int(config["eval"]["n_data"]), n_draws=int(config["eval"]["n_draws"]))


def _cmd_compare(config: dict, out: Path, threads: int) -> None:
    data = _build_data(config)
    schemes = tuple(config["compare"]["schemes"])
    grid = ExperimentGrid(schemes, (int(config["n_neurons"]),),
                          int(config["compare"]["n_seeds"]))
    funcs = _parse_functionals(config["functionals"])
    summaries = run_experiment(grid, _build_train(config), data, funcs,
                               n_data=int(config["eval"]["n_data"]),
                               n_draws=int(config["eval"]["n_draws"]), n_workers=threads)
    config_for_limit = copy.deepcopy(config)
    config_for_limit["limit"]["n_particles"] = int(config["n_neurons"])
    summaries.append(_limit_summary(config_for_limit, data))
    provenance = _provenance(config)
    _write_functionals(out, provenance, summaries)

    # Agreement table: per-functional means per scheme, gap to idealized.
    cells = aggregate_runs(summaries)
    reference = {(r["functional"], r["t"]): r["mean"] for r in cells
                 if r["scheme"] == "idealized"}

    def rows():
        for r in cells:
            ref = reference.get((r["functional"], r["t"]))
            gap = abs(r["mean"] - ref) if ref is not None else ""
            yield [r["functional"], r["t"], r["scheme"], r["mean"], gap]

    _write_csv(out / "agreement.csv", provenance,
               ["functional", "t", "scheme", "mean_value", "abs_diff_vs_idealized"], rows())


def _cmd_sweep(config: dict, out: Path, threads: int) -> None:
    data = _build_data(config)
    c = config["sweep"]
    grid = ExperimentGrid(tuple(c["schemes"]), tuple(int(n) for n in c["n_values"]),
                          int(c["n_seeds"]))
    funcs = _parse_functionals(config["functionals"])
    summaries = run_experiment(grid, _build_train(config), data, funcs,
                               n_data=int(config["eval"]["n_data"]),
                               n_draws=int(config["eval"]["n_draws"]), n_workers=threads)
    provenance = _provenance(config)
    _write_functionals(out, provenance, summaries)
    _write_summary(out, provenance, summaries)


def _cmd_figures_data(config: dict, out: Path, threads: int) -> None:
    """Histogram and time-series CSVs for the four figure kinds."""
    data = _build_data(config)
    horizon = float(config["horizon"])
    times = sorted(set(_uniform_times(config)) | {0.0, horizon / 2.0, horizon})
    times = tuple(times)
    schemes = tuple(config["compare"]["schemes"])
    funcs = _parse_functionals(config["functionals"])
    prior = _build_prior(config)

    trajectories = {}
    summaries = []
    for scheme in schemes:
        cfg = _build_train(config, scheme=scheme, snapshot_times=times)
        traj = train(cfg, data)
        trajectories[scheme] = traj
        summaries.append(summarize_trajectory(
            traj, data, prior, funcs, seed=cfg.seed, realization=0,
            n_data=int(config["eval"]["n_data"]), n_draws=int(config["eval"]["n_draws"])))
    provenance = _provenance(config)
    _write_functionals(out, provenance, summaries)
    _write_hist(out, provenance, config, trajectories)


_COMMANDS = {
    "train": _cmd_train,
    "limit": _cmd_limit,
    "compare": _cmd_compare,
    "sweep": _cmd_sweep,
    "figures-data": _cmd_figures_data,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfvi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file (defaults apply)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="overrides", help="dotted-key config override (repeatable)")
        p.add_argument("--threads", type=int, default=None,
                       help="parallel workers (default: MFVI_THREADS or 1)")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
    return parser


def run_cli(argv) -> int:
    """Run one subcommand; returns 0 on success, 1 on run failure, 2 on
    bad configuration or arguments."""
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = resolve_config(args.config, args.overrides, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("MFVI_THREADS", "1"))
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.json").write_text(
            json.dumps(config, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"error: output directory not writable: {exc}", file=sys.stderr)
        return 2
    try:
        _COMMANDS[args.command](config, out, max(1, threads))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # run failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))
