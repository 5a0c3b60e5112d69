"""Figures written next to the CSV/text artifacts of each command."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "svg.hashsalt": "barcodemlm",
}

GOLDEN = (math.sqrt(5) - 1) / 2


def figsize(width: float = 5.0) -> tuple[float, float]:
    return width, width * GOLDEN


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    # no Software/date metadata so reruns are byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_curve(
    steps: Sequence[int], loss: Sequence[float], path: str | Path,
    epoch_loss: Sequence[float] | None = None, title: str = "Masked-token loss",
) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        ax.plot(steps, loss, lw=0.8, color="0.6", label="step")
        if epoch_loss:
            per_epoch = max(1, len(steps) // len(epoch_loss))
            xs = [steps[min(len(steps) - 1, (i + 1) * per_epoch - 1)] for i in range(len(epoch_loss))]
            ax.plot(xs, epoch_loss, marker="o", ms=3, lw=1.2, color="C0", label="epoch mean")
        ax.set_xlabel("step")
        ax.set_ylabel("cross-entropy")
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_grid_results(rows: Sequence, path: str | Path) -> Path:
    """Validation harmonic mean of every valid grid combination, in grid order."""
    valid = [r for r in rows if r.valid]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(6.0))
        xs = range(len(valid))
        ax.plot(xs, [r.seen_acc for r in valid], lw=0.8, label="seen")
        ax.plot(xs, [r.unseen_acc for r in valid], lw=0.8, label="unseen")
        ax.plot(xs, [r.harmonic_mean for r in valid], lw=1.2, color="k", label="harmonic mean")
        ax.set_xlabel("grid combination")
        ax.set_ylabel("validation accuracy")
        ax.set_ylim(0, 1)
        ax.legend(frameon=False, ncol=3)
        fig.tight_layout()
        return _save(fig, path)


def plot_report(table: Mapping[str, Mapping[str, float]], path: str | Path, title: str = "") -> Path:
    """Grouped bars: one group per model row, one bar per metric column (percent)."""
    models = list(table)
    columns = sorted({c for row in table.values() for c in row})
    width = 0.8 / max(1, len(columns))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(6.0))
        for j, col in enumerate(columns):
            values = [100 * table[m].get(col, float("nan")) for m in models]
            ax.bar([i + j * width for i in range(len(models))], values, width, label=col)
        ax.set_xticks([i + width * (len(columns) - 1) / 2 for i in range(len(models))])
        ax.set_xticklabels(models)
        ax.set_ylabel("accuracy (%)")
        ax.set_ylim(0, 100)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
