"""Standalone SVG figures for learning curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_curves_svg"]


def plot_curves_svg(path, steps, aggregates: dict, title: str = "", note: str = "") -> Path:
    """One panel per entry of ``aggregates`` (label -> aggregate_curves output)."""
    fig, axes = plt.subplots(1, len(aggregates), figsize=(4.5 * len(aggregates), 3.5), squeeze=False)
    for ax, (label, agg) in zip(axes[0], aggregates.items()):
        ax.plot(steps, agg["mean"], lw=1.5)
        if agg["ci_low"] is not None:
            ax.fill_between(steps, agg["ci_low"], agg["ci_high"], alpha=0.25, lw=0)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, format="svg", metadata={"Title": title or "learning curves", "Description": note})
    plt.close(fig)
    return out
