"""Report figures written next to the CSV outputs (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps PNG bytes stable across reruns
_PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_curves(rows: Sequence[dict], columns: Sequence[str], path: str | Path,
                title: str = "", x: str = "epoch") -> Path:
    """One panel per column against ``x``."""
    fig, axes = plt.subplots(1, len(columns), figsize=(3.2 * len(columns), 2.8), squeeze=False)
    xs = [r[x] for r in rows]
    for ax, col in zip(axes[0], columns):
        ax.plot(xs, [r[col] for r in rows], marker="o" if len(rows) < 30 else None, lw=1.2)
        ax.set_title(col)
        ax.set_xlabel(x)
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_translator_losses(rows: Sequence[dict], path: str | Path) -> Path:
    return plot_curves(rows, ("adv_x", "adv_y", "cyc", "total"), path, "translator losses")


def plot_detector_log(rows: Sequence[dict], path: str | Path) -> Path:
    return plot_curves(rows, ("box_loss", "obj_loss", "precision", "recall", "map50", "map50_95"),
                       path, "detector training")


def plot_report_bars(reports: Sequence, path: str | Path, title: str = "evaluation") -> Path:
    """Grouped bars of P, R, mAP50 and mAP50-95 per dataset."""
    metrics = ("precision", "recall", "map50", "map50_95")
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(reports), 3.2))
    width = 0.8 / len(metrics)
    for k, metric in enumerate(metrics):
        xs = [i + (k - 1.5) * width for i in range(len(reports))]
        ax.bar(xs, [getattr(r, metric) for r in reports], width, label=metric)
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels([r.dataset for r in reports], rotation=20)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7, ncol=2)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
