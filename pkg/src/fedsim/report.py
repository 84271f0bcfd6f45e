"""Figure rendering for experiment outputs.

Renders the accuracy trajectories (one curve per sweep value, shaded by the
across-seed standard deviation) and, when a sweep is active, the final
accuracy against the sweep value. Files land next to the CSVs.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _fmt(value) -> str:
    return f"{value:.10g}"


def render_figures(summaries: dict, sweep_axis: str | None, out_dir: str) -> list[str]:
    """summaries: {sweep_value: [(round, mean_acc, std_acc), ...]}.

    Returns the paths written.
    """
    written = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for value, rows in summaries.items():
        rounds = [r for r, _, _ in rows]
        means = [m for _, m, _ in rows]
        stds = [s for _, _, s in rows]
        label = _fmt(value) if sweep_axis else "run"
        ax.plot(rounds, means, label=label)
        ax.fill_between(
            rounds,
            [m - s for m, s in zip(means, stds)],
            [m + s for m, s in zip(means, stds)],
            alpha=0.2,
        )
    ax.set_xlabel("round")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.0)
    if sweep_axis:
        ax.legend(title=sweep_axis, fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = os.path.join(out_dir, "accuracy_vs_round.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if sweep_axis and len(summaries) > 1:
        fig, ax = plt.subplots(figsize=(5, 4))
        values = list(summaries)
        finals = [summaries[v][-1][1] for v in values]
        errs = [summaries[v][-1][2] for v in values]
        ax.errorbar(range(len(values)), finals, yerr=errs, marker="o")
        ax.set_xticks(range(len(values)))
        ax.set_xticklabels([_fmt(v) for v in values])
        ax.set_xlabel(sweep_axis)
        ax.set_ylabel("final test accuracy")
        ax.set_ylim(0.0, 1.0)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"final_accuracy_vs_{sweep_axis}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
