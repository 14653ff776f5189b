"""Report figures written next to the tabular CLI output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_bench", "plot_training"]

_STYLE = {
    "axes.linewidth": 1.2,
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def plot_bench(rows, path, title=None):
    """Bar chart of per-cloud bpov, with the baseline alongside when present.

    ``rows`` are dicts with at least ``cloud`` and ``bpov``; an optional
    ``baseline`` key adds a second bar per cloud.
    """
    names = [r["cloud"] for r in rows]
    ours = np.array([r["bpov"] for r in rows])
    base = [r.get("baseline") for r in rows]
    has_base = any(b is not None for b in base)
    x = np.arange(len(rows))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(rows) + 2), 3.2))
        width = 0.4 if has_base else 0.6
        ax.bar(x - (width / 2 if has_base else 0), ours, width, label="coded", color="#3b6ea5")
        if has_base:
            vals = np.array([np.nan if b is None else b for b in base], dtype=float)
            ax.bar(x + width / 2, vals, width, label="baseline", color="#bbbbbb")
        ax.axhline(ours.mean(), color="#3b6ea5", lw=1, ls="--")
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("bits per occupied voxel")
        if title:
            ax.set_title(title)
        if has_base:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_training(history, path):
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(epochs, [h["train_bits"] for h in history], label="train", color="#999999")
        ax.plot(epochs, [h["val_bits"] for h in history], label="validation", color="#3b6ea5")
        ax.plot(epochs, [h["best_val_bits"] for h in history], label="best validation",
                color="#3b6ea5", ls=":")
        ax.set_xlabel("epoch")
        ax.set_ylabel("bits per occurrence")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
