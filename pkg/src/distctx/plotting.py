"""Regret-curve figures written next to the CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from distctx.experiment import ExperimentTrace  # noqa: E402

STYLE = {
    "axes.labelsize": 10,
    "font.size": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (5.0, 3.2),
}


def plot_regret(traces: dict[str, ExperimentTrace], path: str | Path, title: str | None = None) -> Path:
    """Mean cumulative regret per label with a one-standard-error band."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, trace in traces.items():
            rounds = np.arange(1, trace.horizon + 1)
            mean = trace.mean_curve()
            ax.plot(rounds, mean, label=label, lw=1.2)
            if trace.trials > 1:
                se = trace.cum_regret.std(axis=0, ddof=1) / np.sqrt(trace.trials)
                ax.fill_between(rounds, mean - se, mean + se, alpha=0.25, lw=0)
        ax.set_xlabel("round $t$")
        ax.set_ylabel("cumulative regret")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path


def trace_label(trace: ExperimentTrace) -> str:
    meta = trace.meta
    return f"{meta.get('mode', '?')} / {meta.get('protocol', '?')}, M={meta.get('M', '?')}"
