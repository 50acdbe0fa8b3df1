"""Figure rendering for run and sweep reports.

Figures are written next to the delimited output.  PNG metadata is stripped
so repeated runs of the same environment produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiment import AggregateResult, EpisodeResult

_SAVE_KWARGS = {"dpi": 150, "metadata": {"Software": None}}


def render_run_figures(results: Sequence[EpisodeResult], out_dir: Path) -> list[Path]:
    """Cumulative-regret trajectories plus the per-episode regret distribution."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(7, 4.5))
    horizon = max(len(r.records) for r in results)
    mean_curve = np.zeros(horizon)
    for r in results:
        curve = np.cumsum([rec.regret_increment for rec in r.records])
        ax.plot(range(1, len(curve) + 1), curve, color="steelblue", alpha=0.25, lw=0.8)
        mean_curve[: len(curve)] += curve
    mean_curve /= len(results)
    ax.plot(range(1, horizon + 1), mean_curve, color="crimson", lw=2, label="mean")
    ax.set_xlabel("timestep")
    ax.set_ylabel("cumulative regret")
    ax.legend(loc="upper left")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "run_regret.png"
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    regrets = [r.avg_regret for r in results]
    ax.boxplot([regrets], showmeans=True, meanline=True, labels=["episodes"])
    ax.set_ylabel("average regret")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "run_regret_box.png"
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    paths.append(path)
    return paths


def render_sweep_figure(
    param: str, table: Sequence[tuple[str, AggregateResult]], out_dir: Path
) -> list[Path]:
    """Box plot of per-episode average regret for each swept value."""
    out_dir.mkdir(parents=True, exist_ok=True)
    values = [value for value, _ in table]
    data = [[row[2] for row in agg.per_episode] for _, agg in table]
    means = [agg.mean_avg_regret for _, agg in table]

    fig, ax = plt.subplots(figsize=(1.6 + 1.2 * len(values), 4.5))
    ax.boxplot(data, labels=values, showmeans=True, meanline=True)
    ax.plot(range(1, len(values) + 1), means, "r--", lw=1.2, label="mean")
    ax.set_xlabel(param)
    ax.set_ylabel("average regret")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / f"sweep_{param}.png"
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return [path]
