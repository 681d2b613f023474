"""Matplotlib figure helpers.  Figures go to files; nothing is shown."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "semmtl",  # stable element ids across runs
    "svg.fonttype": "none",
}


def _figure(width: float = 6.0, height: float = 3.2):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def _save(fig, path: Path) -> None:
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)


def bar_chart(labels: Sequence[str], values: Sequence[float], path: str | Path,
              title: str | None = None, ylabel: str = "", reference: float | None = None) -> Path:
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = _figure(max(4.0, 0.28 * len(labels) + 1.5))
        ax.bar(range(len(labels)), values, color="#4c72b0", width=0.7)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=90, family="monospace")
        if reference is not None:
            ax.axhline(reference, color="0.4", lw=0.8, ls="--")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        _save(fig, path)
    return path


def learning_curves(series: Mapping[str, Sequence[tuple[int, float]]], path: str | Path,
                    title: str | None = None, ylabel: str = "") -> Path:
    """One line per named series of ``(epoch, value)`` points."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        for name, pts in sorted(series.items()):
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", ms=3, lw=1.2, label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend(frameon=False)
        _save(fig, path)
    return path
