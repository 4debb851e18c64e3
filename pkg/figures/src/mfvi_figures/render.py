"""The four figure kinds of the convergence study.

Each builder is a pure function of parsed CSV rows: no clock, no network,
no global state.  Scheme colors are fixed so every figure in a report uses
the same encoding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # non-interactive by design; set before pyplot import

import matplotlib.pyplot as plt
import numpy as np

from .schemas import read_functionals, read_hist, read_summary

KINDS = ("hist_grid", "convergence", "elbo_decay", "boxplots")

SCHEME_COLORS = {
    "idealized": "tab:blue",
    "idealized_minibatch_proxy": "tab:cyan",
    "bbb": "tab:orange",
    "minimal_vi": "tab:green",
    "limit": "black",
}

SCHEME_LABELS = {
    "idealized": "Idealized",
    "idealized_minibatch_proxy": "Idealized (minibatch proxy)",
    "bbb": "Bayes-by-Backprop",
    "minimal_vi": "Minimal-VI",
    "limit": "limit flow",
}


@dataclass(frozen=True)
class FigureSpec:
    """One figure to render: kind, input CSVs, output image path."""

    kind: str
    inputs: tuple[Path, ...]
    out_path: Path
    functional: str | None = None   # filter for boxplots/convergence

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise ValueError("a figure needs at least one input CSV")
        object.__setattr__(self, "inputs", tuple(Path(p) for p in self.inputs))
        object.__setattr__(self, "out_path", Path(self.out_path))


def _color(scheme: str) -> str:
    return SCHEME_COLORS.get(scheme, "tab:gray")


def _label(scheme: str) -> str:
    return SCHEME_LABELS.get(scheme, scheme)


def _schemes(rows) -> list[str]:
    seen = sorted({r["scheme"] for r in rows})
    order = list(SCHEME_COLORS)
    return sorted(seen, key=lambda s: (order.index(s) if s in order else len(order), s))


def build_hist_grid(rows) -> plt.Figure:
    """Per-unit histograms: one row per functional, one column per time,
    one translucent bar series per scheme."""
    functionals = sorted({r["functional"] for r in rows})
    times = sorted({r["t"] for r in rows})
    schemes = _schemes(rows)
    n_rows = max(len(functionals), 1)
    n_cols = max(len(times), 1)
    fig, axes = plt.subplots(n_rows, n_cols, squeeze=False,
                             figsize=(3.2 * n_cols, 2.6 * n_rows))
    for i, func in enumerate(functionals):
        for j, t in enumerate(times):
            ax = axes[i][j]
            for scheme in schemes:
                cell = [r for r in rows
                        if r["functional"] == func and r["t"] == t
                        and r["scheme"] == scheme]
                if not cell:
                    continue
                cell.sort(key=lambda r: r["bin_left"])
                lefts = np.array([r["bin_left"] for r in cell])
                rights = np.array([r["bin_right"] for r in cell])
                counts = np.array([r["count"] for r in cell])
                ax.bar(lefts, counts, width=rights - lefts, align="edge",
                       alpha=0.5, color=_color(scheme), label=_label(scheme))
            if i == 0:
                ax.set_title(f"t = {t:g}")
            if j == 0:
                ax.set_ylabel(func)
    if functionals and times:
        axes[0][0].legend(fontsize="x-small")
    fig.tight_layout()
    return fig


def build_convergence(rows, functional: str | None = None) -> plt.Figure:
    """Functional value at the end of training against the width N, one
    errorbar series per scheme, one panel per functional."""
    functionals = ([functional] if functional
                   else sorted({r["functional"] for r in rows}))
    schemes = _schemes(rows)
    n = max(len(functionals), 1)
    fig, axes = plt.subplots(1, n, squeeze=False, figsize=(3.6 * n, 3.0))
    for k, func in enumerate(functionals):
        ax = axes[0][k]
        frows = [r for r in rows if r["functional"] == func]
        t_final = max((r["t"] for r in frows), default=0.0)
        for scheme in schemes:
            cell = sorted((r for r in frows
                           if r["scheme"] == scheme and r["t"] == t_final),
                          key=lambda r: r["N"])
            if not cell:
                continue
            ns = np.array([r["N"] for r in cell])
            means = np.array([r["mean"] for r in cell])
            stds = np.array([r["std"] for r in cell])
            ax.errorbar(ns, means, yerr=stds, marker="o", capsize=3,
                        color=_color(scheme), label=_label(scheme))
        ax.set_xscale("log")
        ax.set_xlabel("number of units N")
        ax.set_title(func)
    if functionals:
        axes[0][0].legend(fontsize="x-small")
    fig.tight_layout()
    return fig


def build_elbo_decay(rows) -> plt.Figure:
    """Negative objective and its two components against training time,
    seed-averaged, one line per scheme."""
    panels = ("neg_elbo", "neg_elbo_kl", "neg_elbo_loss")
    titles = ("negative objective", "KL component", "loss component")
    schemes = _schemes(rows)
    fig, axes = plt.subplots(1, 3, figsize=(10.8, 3.0))
    for ax, name, title in zip(axes, panels, titles):
        for scheme in schemes:
            cell = [r for r in rows
                    if r["functional"] == name and r["scheme"] == scheme]
            if not cell:
                continue
            times = sorted({r["t"] for r in cell})
            means = [float(np.mean([r["value"] for r in cell if r["t"] == t]))
                     for t in times]
            ax.plot(times, means, marker=".", color=_color(scheme),
                    label=_label(scheme))
        ax.set_xlabel("t")
        ax.set_title(title)
    if schemes:
        axes[0].legend(fontsize="x-small")
    fig.tight_layout()
    return fig


def build_boxplots(rows, functional: str | None = None) -> plt.Figure:
    """Across-seed boxplots of one functional per time point, grouped by
    scheme.  Whiskers follow the matplotlib default (1.5 IQR)."""
    func = functional or "mean_norm"
    frows = [r for r in rows if r["functional"] == func]
    times = sorted({r["t"] for r in frows})
    schemes = _schemes(frows)
    fig, ax = plt.subplots(figsize=(1.0 + 1.4 * max(len(times), 1), 3.2))
    width = 0.8 / max(len(schemes), 1)
    for k, scheme in enumerate(schemes):
        data, positions, kept_times = [], [], []
        for j, t in enumerate(times):
            vals = [r["value"] for r in frows
                    if r["scheme"] == scheme and r["t"] == t]
            if vals:
                data.append(vals)
                positions.append(j + (k - (len(schemes) - 1) / 2.0) * width)
                kept_times.append(t)
        if not data:
            continue
        artists = ax.boxplot(data, positions=positions, widths=0.9 * width,
                             patch_artist=True)
        for box in artists["boxes"]:
            box.set_facecolor(_color(scheme))
            box.set_alpha(0.5)
            box.set_label(_label(scheme))
        # tag medians so the series can be recovered from the figure
        for t, med in zip(kept_times, artists["medians"]):
            med.set_gid(f"median:{scheme}:{t!r}")
    ax.set_xticks(range(len(times)))
    ax.set_xticklabels([f"{t:g}" for t in times])
    ax.set_xlabel("t")
    ax.set_ylabel(func)
    if schemes:
        handles, labels = ax.get_legend_handles_labels()
        dedup = dict(zip(labels, handles))
        ax.legend(dedup.values(), dedup.keys(), fontsize="x-small")
    fig.tight_layout()
    return fig


def build_figure(spec: FigureSpec) -> plt.Figure:
    """Parse the inputs and build (but do not save) the figure."""
    if spec.kind == "hist_grid":
        return build_hist_grid(read_hist(spec.inputs[0]))
    if spec.kind == "convergence":
        return build_convergence(read_summary(spec.inputs[0]), spec.functional)
    if spec.kind == "elbo_decay":
        return build_elbo_decay(read_functionals(spec.inputs[0]))
    return build_boxplots(read_functionals(spec.inputs[0]), spec.functional)


def render(spec: FigureSpec) -> Path:
    """Render the figure to spec.out_path; returns the written path.

    Date metadata is stripped so the output depends only on the CSV
    content and the spec.
    """
    fig = build_figure(spec)
    try:
        spec.out_path.parent.mkdir(parents=True, exist_ok=True)
        suffix = spec.out_path.suffix.lower()
        metadata = None
        if suffix == ".svg":
            metadata = {"Date": None}
        elif suffix == ".pdf":
            metadata = {"CreationDate": None}
        fig.savefig(spec.out_path, dpi=150, metadata=metadata)
    finally:
        plt.close(fig)
    return spec.out_path
