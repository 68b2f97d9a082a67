"""Report figures: Moran's I per order, per-event scores, training loss.

Everything renders through the Agg backend to files; nothing opens a window.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    # fixed metadata keeps PNG bytes stable across runs
    "svg.hashsalt": "biggat",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def moran_figure(rows: Sequence, path, alpha: float = 0.1, title: str = "") -> Path:
    """Bar chart of n-hop Moran's I; hatched bars are not significant at ``alpha``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        orders = [r.order for r in rows]
        stats = [r.statistic for r in rows]
        sig = [r.significant(alpha) for r in rows]
        bars = ax.bar(orders, stats, color=["C0" if s else "0.75" for s in sig])
        for b, s in zip(bars, sig):
            if not s:
                b.set_hatch("//")
        ax.axhline(0, color="k", lw=0.8)
        ax.set_xlabel("hop order n")
        ax.set_ylabel("Moran's I")
        ax.set_xticks(orders)
        ax.set_title(title or f"n-hop Moran's I (colored: p <= {alpha:g})")
        return _save(fig, path)


def metrics_figure(reports: Sequence, path, title: str = "") -> Path:
    """Grouped bars of accuracy, balanced accuracy and macro F1 per event."""
    names = ("accuracy", "balanced_accuracy", "macro_f1")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(reports) + 1.5), 3))
        x = np.arange(len(reports))
        width = 0.27
        for i, name in enumerate(names):
            ax.bar(x + (i - 1) * width, [getattr(r, name) for r in reports], width,
                   label=name.replace("_", " "))
        ax.set_xticks(x)
        ax.set_xticklabels([r.label for r in reports], rotation=30, ha="right")
        ax.set_ylim(0, 1)
        ax.set_ylabel("score")
        ax.legend(frameon=False, fontsize=7, ncol=3, loc="lower center", bbox_to_anchor=(0.5, 1.0))
        if title:
            ax.set_title(title, pad=18)
        return _save(fig, path)


def loss_figure(histories: dict, path, title: str = "training loss") -> Path:
    """One curve per run (e.g. per held-out event) of mean cross-entropy per epoch."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for label, hist in sorted(histories.items()):
            ax.plot(np.arange(1, len(hist) + 1), hist, lw=1, label=label)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax.set_title(title)
        if len(histories) > 1:
            ax.legend(frameon=False, fontsize=7)
        return _save(fig, path)
