"""Render plot-data series to PNG figures with matplotlib (Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.5, 3.2),
    "figure.dpi": 150,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def render(plot, directory: Path, manifest: str) -> Path:
    """Draw every series of ``plot`` with its confidence band and save as PNG."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, x, y, lo, hi in plot.series:
            x, y, lo, hi = (np.asarray(a, float) for a in (x, y, lo, hi))
            line, = ax.plot(x, y, marker="o", ms=3, lw=1, label=label)
            ax.fill_between(x, lo, hi, color=line.get_color(), alpha=0.2, lw=0)
        if plot.logx:
            ax.set_xscale("log")
        if plot.logy and all(np.all(np.asarray(s[2], float) > 0) for s in plot.series):
            ax.set_yscale("log")
        ax.set_xlabel(plot.xlabel)
        ax.set_ylabel(plot.ylabel)
        if plot.title:
            ax.set_title(plot.title)
        if len(plot.series) > 1:
            ax.legend(frameon=False)
        fig.tight_layout()
        path = directory / f"{plot.name}.png"
        fig.savefig(path, metadata={"Description": f"manifest={manifest}", "Software": None})
        plt.close(fig)
    return path
