"""Matplotlib figures for the CLI report path.

Everything renders through the Agg backend with PNG metadata stripped, so a
figure built from identical inputs is byte-identical across invocations.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}


def _save(fig, path) -> None:
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_surface(grid, path) -> None:
    """Filled level sets of the surrogate mean with evaluations and best policy."""
    nx, ny = grid.resolution
    t1 = grid.points[:, 0].reshape(nx, ny)
    t2 = grid.points[:, 1].reshape(nx, ny)
    z = grid.means.reshape(nx, ny)
    lo = np.floor(z.min() / 0.05) * 0.05
    hi = np.ceil(z.max() / 0.05) * 0.05
    levels = np.arange(lo, hi + 0.05 + 1e-9, 0.05)
    if levels.size < 2:
        levels = np.array([lo, lo + 0.05])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 4.0))
        cs = ax.contourf(t1, t2, z, levels=levels, cmap="viridis")
        fig.colorbar(cs, ax=ax, label="surrogate value")
        if grid.records is not None and len(grid.records):
            sd = grid.records[:, -1]
            prec = np.where(sd > 0, 1.0 / np.maximum(sd, 1e-12) ** 2, np.nan)
            rel = np.nan_to_num(prec / np.nanmax(prec), nan=1.0) if np.any(sd > 0) else np.ones_like(sd)
            ax.scatter(grid.records[:, 0], grid.records[:, 1], s=4 + 30 * rel,
                       facecolors="none", edgecolors="k", linewidths=0.6)
        if grid.best_theta is not None:
            ax.plot(*grid.best_theta[:2], marker="*", ms=14, mfc="white", mec="k")
        ax.set_xlabel(grid.box.names[0])
        ax.set_ylabel(grid.box.names[1])
        fig.tight_layout()
        _save(fig, path)


def plot_trace(trace, path) -> None:
    values = trace.values()
    it = np.arange(values.size)
    initial = np.array([r.source == "initial-design" for r in trace.records])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.errorbar(it[initial], values[initial], yerr=trace.std_devs()[initial], fmt="o", ms=3,
                    color="0.55", elinewidth=0.6, label="initial design")
        ax.errorbar(it[~initial], values[~initial], yerr=trace.std_devs()[~initial], fmt="o", ms=3,
                    color="C0", elinewidth=0.6, label="EI steps")
        ax.step(it, np.maximum.accumulate(values), where="post", color="C3", lw=1.2, label="best so far")
        ax.set_xlabel("evaluation")
        ax.set_ylabel("estimated value")
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_study(summary, path) -> None:
    """Chosen policies across runs and the distribution of value errors."""
    err = np.asarray(summary.best_values) - summary.optimal_value
    thetas = np.asarray(summary.best_thetas, dtype=float).reshape(-1, 2)
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.6, 3.2))
        a1.scatter(thetas[:, 0], thetas[:, 1], s=8, alpha=0.6)
        a1.set_xlim(0, 1)
        a1.set_ylim(0, 1)
        a1.set_xlabel("beta1")
        a1.set_ylabel("beta2")
        a1.set_title("chosen policies")
        a2.hist(err, bins=max(5, min(40, err.size // 4)), color="C0", alpha=0.8)
        a2.axvline(0.0, color="k", lw=0.8)
        a2.set_xlabel("estimated minus optimal value")
        a2.set_title(f"MSE {summary.mse:.4g}")
        fig.tight_layout()
        _save(fig, path)


def plot_value_posteriors(labels, posteriors, path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(labels), 3.2))
        ax.boxplot([list(p.draws) for p in posteriors], whis=(2.5, 97.5), showfliers=False)
        ax.set_xticks(range(1, len(labels) + 1))
        ax.set_xticklabels(labels, rotation=20)
        ax.set_ylabel("value")
        fig.tight_layout()
        _save(fig, path)


def plot_chains(result, path) -> None:
    """Trace plot of every parameter, chains overlaid."""
    draws = result.draws
    k = draws.shape[2]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(k, 1, figsize=(6.0, 1.1 * k + 0.4), sharex=True, squeeze=False)
        for j, ax in enumerate(axes[:, 0]):
            for c in range(draws.shape[0]):
                ax.plot(draws[c, :, j], lw=0.3)
            ax.set_ylabel(result.names[j], rotation=0, ha="right", fontsize=7)
        axes[-1, 0].set_xlabel("iteration after burn-in")
        fig.tight_layout()
        _save(fig, path)
