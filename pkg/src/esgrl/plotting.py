"""Report figures. Rendered off-screen with the Agg backend."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
BASELINE_COLOR = "#c0392b"

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "esgrl",
    "svg.fonttype": "none",
}


def figure(width: float = 7.0, height: float | None = None):
    return plt.subplots(figsize=(width, height or width * GOLDEN))


def save(fig, path) -> list[Path]:
    """Write ``path`` (svg) and a png twin; metadata stripped so reruns are stable."""
    path = Path(path)
    out = []
    for suffix, meta in ((".svg", {"Date": None}), (".png", {"Software": None})):
        target = path.with_suffix(suffix)
        fig.savefig(target, metadata=meta, bbox_inches="tight", dpi=150)
        out.append(target)
    plt.close(fig)
    return out


def cumulative_returns(curves: dict[str, np.ndarray], baselines: dict[str, np.ndarray], path,
                       title: str = "Cumulative return over the trading period") -> list[Path]:
    """One line per cell (mean equity across seeds) plus the baselines."""
    with plt.rc_context(STYLE):
        fig, ax = figure()
        for name, eq in curves.items():
            ax.plot(np.arange(1, len(eq) + 1), eq - 1.0, label=name)
        for name, eq in baselines.items():
            style = dict(color=BASELINE_COLOR) if name == "stratified" else dict(linestyle="--")
            ax.plot(np.arange(1, len(eq) + 1), eq - 1.0, label=f"baseline: {name}", **style)
        ax.set_xlabel("trading day")
        ax.set_ylabel("cumulative return")
        ax.set_title(title)
        ax.legend(loc="best")
        return save(fig, path)


def metric_boxplot(samples: dict[str, list[float]], reference: float | None, path,
                   metric: str = "annual_return") -> list[Path]:
    """Per-cell distribution across seeds with the stratified index as a red line."""
    with plt.rc_context(STYLE):
        fig, ax = figure()
        names = list(samples)
        ax.boxplot([samples[n] for n in names])
        ax.set_xticks(range(1, len(names) + 1), names, rotation=20, ha="right")
        if reference is not None:
            ax.axhline(reference, color=BASELINE_COLOR, linewidth=1.0, label="stratified index")
            ax.legend(loc="best")
        ax.set_ylabel(metric.replace("_", " "))
        return save(fig, path)
