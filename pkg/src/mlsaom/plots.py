"""Figure rendering for the CLI report paths.

Figures are written next to the delimited outputs; all functions take
plain summary structures so the diagnostics layer stays renderer-free.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def posterior_density_figure(columns, chains, names, path, bins: int = 60) -> None:
    """Overlaid histograms of selected global parameters with 95% bands."""
    pooled = np.vstack(chains)
    names = [n for n in names if n in columns]
    if not names:
        return
    fig, axes = plt.subplots(1, len(names), figsize=(4.2 * len(names), 3.2), squeeze=False)
    for ax, name in zip(axes[0], names):
        col = pooled[:, columns.index(name)]
        lo, hi = np.quantile(col, [0.025, 0.975])
        ax.hist(col, bins=bins, density=True, color="0.7")
        ax.axvspan(lo, hi, color="0.4", alpha=0.25)
        ax.axvline(col.mean(), color="k", lw=1)
        ax.set_title(name, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def group_boxplot_figure(columns, chains, effect_name, path, max_groups: int = 60) -> None:
    """Boxplots of per-group coefficients ordered by posterior mean.

    The shaded horizontal bands show the 90% and 99% intervals of the
    population mean.
    """
    pooled = np.vstack(chains)
    gcols = [c for c in columns if c.startswith("gamma:") and c.endswith(":" + effect_name)]
    if not gcols:
        return
    data = [pooled[:, columns.index(c)] for c in gcols]
    order = np.argsort([d.mean() for d in data])[:max_groups]
    data = [data[i] for i in order]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.25 * len(data)), 3.6))
    mu_col = f"mu:{effect_name}"
    if mu_col in columns:
        mu = pooled[:, columns.index(mu_col)]
        for lo, hi, shade in ((0.05, 0.95, "0.55"), (0.005, 0.995, "0.8")):
            a, b = np.quantile(mu, [lo, hi])
            ax.axhspan(a, b, color=shade, alpha=0.5, zorder=0)
    ax.boxplot(data, showfliers=False)
    ax.set_xticks([])
    ax.set_xlabel("groups (ordered by posterior mean)")
    ax.set_title(effect_name, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sweep_interval_figure(rows, path) -> None:
    """Credibility intervals for each mu component across the prior scales."""
    params = sorted({r["parameter"] for r in rows})
    scales = sorted({r["sigma0_sq"] for r in rows})
    fig, axes = plt.subplots(1, len(params), figsize=(3.0 * len(params), 3.4), squeeze=False)
    xs = np.log(scales)
    for ax, p in zip(axes[0], params):
        sub = {r["sigma0_sq"]: r for r in rows if r["parameter"] == p}
        mid = [sub[s]["mean"] for s in scales]
        ax.fill_between(xs, [sub[s]["q005"] for s in scales], [sub[s]["q995"] for s in scales],
                        color="0.8", label="99%")
        ax.fill_between(xs, [sub[s]["q025"] for s in scales], [sub[s]["q975"] for s in scales],
                        color="0.55", label="95%")
        ax.plot(xs, mid, "k.-", lw=1)
        ax.set_title(p, fontsize=9)
        ax.set_xlabel("log sigma0^2")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def describe_figure(tables, path) -> None:
    """Wave trajectories of the headline network descriptives."""
    rows = tables["networks"]
    waves = [r["wave"] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(8.5, 3.2))
    axes[0].plot(waves, [r["x_mean_outdegree"] for r in rows], "o-", label="one-mode")
    if "z_mean_outdegree" in rows[0]:
        axes[0].plot(waves, [r["z_mean_outdegree"] for r in rows], "s--", label="two-mode")
    axes[0].set_xlabel("wave")
    axes[0].set_ylabel("mean outdegree")
    axes[0].legend(fontsize=8)
    jac_x = [r.get("x_jaccard_next") for r in rows if "x_jaccard_next" in r]
    axes[1].plot(range(len(jac_x)), jac_x, "o-", label="one-mode")
    if "z_jaccard_next" in rows[0]:
        jac_z = [r.get("z_jaccard_next") for r in rows if "z_jaccard_next" in r]
        axes[1].plot(range(len(jac_z)), jac_z, "s--", label="two-mode")
    axes[1].set_xlabel("period")
    axes[1].set_ylabel("Jaccard with next wave")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
