"""Figure rendering for training curves and category reports.

Everything draws to files through the Agg backend; nothing opens a window.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import CategoryReport, MetricsRow, SeedRun

__all__ = ["save_training_curves", "save_multiseed_curves", "save_category_bars"]


def save_training_curves(rows: Sequence[MetricsRow], path, title: str | None = None) -> None:
    """Accuracy and loss curves for one run, training and validation."""
    epochs = [r.epoch for r in rows]
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    ax_acc.plot(epochs, [r.training_acc for r in rows], label="training")
    ax_acc.plot(epochs, [r.validation_acc for r in rows], label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.0)
    ax_acc.grid(alpha=0.3)
    ax_acc.legend()
    ax_loss.plot(epochs, [r.training_loss for r in rows], label="training")
    ax_loss.plot(epochs, [r.validation_loss for r in rows], label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.grid(alpha=0.3)
    ax_loss.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_multiseed_curves(runs: Sequence[SeedRun], path, title: str | None = None) -> None:
    """Overlay validation (solid) and training (dashed) accuracy per seed."""
    fig, ax = plt.subplots(figsize=(8, 5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, run in enumerate(runs):
        color = colors[i % len(colors)]
        epochs = [r.epoch for r in run.rows]
        ax.plot(epochs, [r.validation_acc for r in run.rows], color=color, label=f"seed {run.seed} val")
        ax.plot(epochs, [r.training_acc for r in run.rows], color=color, linestyle="--", alpha=0.6)
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_category_bars(report: CategoryReport, path, title: str | None = None) -> None:
    """Horizontal bars of per-category accuracy in report row order."""
    rows = [(name, value) for name, value in report.rows() if name != "Total error"]
    names = [name for name, _ in rows]
    values = [value for _, value in rows]
    fig, ax = plt.subplots(figsize=(7, 0.4 * len(rows) + 1.5))
    ax.barh(range(len(rows)), values, color="tab:blue")
    ax.set_yticks(range(len(rows)), names)
    ax.invert_yaxis()
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("accuracy")
    ax.grid(axis="x", alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
