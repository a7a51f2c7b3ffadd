"""Matplotlib rendering of curve and forecast reports (SVG, headless)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_CURVE_STYLES = {
    "no-noise": {"color": "0.3", "linestyle": "--"},
    "white": {"color": "tab:orange", "linestyle": "-"},
    "optimized": {"color": "tab:blue", "linestyle": "-"},
}


def render_curve_figure(curves_by_rho, path, hashsalt: str = "") -> None:
    """One panel per budget; each panel shows the three delta(eps) curves."""
    plt.rcParams["svg.hashsalt"] = hashsalt
    rhos = sorted(curves_by_rho)
    fig, axes = plt.subplots(
        1, len(rhos), figsize=(4.2 * len(rhos), 3.4), sharey=True, squeeze=False
    )
    for ax, rho in zip(axes[0], rhos):
        for name, curve in curves_by_rho[rho].items():
            style = _CURVE_STYLES.get(name, {})
            ax.plot(curve.epsilons, curve.deltas, label=name, **style)
            band = 3.0 * curve.std_errors
            ax.fill_between(
                curve.epsilons,
                np.clip(curve.deltas - band, 0.0, 1.0),
                np.clip(curve.deltas + band, 0.0, 1.0),
                alpha=0.15,
                color=style.get("color"),
                linewidth=0,
            )
        ax.set_title(f"rho = {rho:g}")
        ax.set_xlabel("epsilon")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("delta")
    axes[0][-1].legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def render_forecast_figure(artifacts, path, history_tails=None, hashsalt: str = "") -> None:
    """Per-class forecast panels: plain mean, released values, 95% band."""
    plt.rcParams["svg.hashsalt"] = hashsalt
    labels = sorted(artifacts)
    fig, axes = plt.subplots(
        len(labels), 1, figsize=(7.0, 2.4 * len(labels)), sharex=True, squeeze=False
    )
    for ax, label in zip(axes[:, 0], labels):
        art = artifacts[label]
        steps = np.arange(1, art.mean.size + 1)
        if history_tails and label in history_tails:
            tail = np.asarray(history_tails[label])
            ax.plot(np.arange(-tail.size + 1, 1), tail, color="0.55", linewidth=0.9, label="history")
        ax.fill_between(steps, art.lower95, art.upper95, alpha=0.2, color="tab:blue", linewidth=0)
        ax.plot(steps, art.mean, color="tab:blue", label="forecast")
        ax.plot(steps, art.released, color="tab:red", linestyle="--", marker=".", label="released")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="best", fontsize=8)
    axes[-1, 0].set_xlabel("forecast step")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
