"""Figure rendering for the report-producing CLI paths.

Each report command writes a small matplotlib figure next to its CSV so a
run directory is inspectable at a glance. Uses the Agg backend; never opens
a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def save_retention_hist(path, ratios, k):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(ratios, bins=24, color="#3b6ea5", edgecolor="white")
    ax.axvline(0.95, color="#b03a2e", linestyle="--", linewidth=1, label="0.95")
    ax.set_xlabel(f"energy retention at k={k}")
    ax.set_ylabel("images")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_morph_scatter(path, rows):
    """rows: list of dicts with tau, c, iota, s per mask."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    taus = [r["tau"] for r in rows]
    cs = [r["c"] for r in rows]
    iotas = [r["iota"] for r in rows]
    ss = [r["s"] for r in rows]
    axes[0].scatter(taus, cs, s=12, alpha=0.7, color="#3b6ea5")
    axes[0].set_xlabel("tubularity")
    axes[0].set_ylabel("compactness")
    axes[1].scatter(ss, iotas, s=12, alpha=0.7, color="#7d3c98")
    axes[1].set_xlabel("relative size")
    axes[1].set_ylabel("irregularity")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_training_curves(path, history):
    """history: list of MetricsRow."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    train_rows = [r for r in history if r.split == "train"]
    val_rows = [r for r in history if r.split == "val"]
    axes[0].plot([r.epoch for r in train_rows], [r.loss_total for r in train_rows],
                 label="train loss", color="#3b6ea5")
    if val_rows:
        axes[0].plot([r.epoch for r in val_rows], [r.loss_total for r in val_rows],
                     label="val loss", color="#b03a2e")
        axes[1].plot([r.epoch for r in val_rows], [r.dice for r in val_rows],
                     label="val dice", color="#1e8449")
        axes[1].plot([r.epoch for r in val_rows], [r.iou for r in val_rows],
                     label="val iou", color="#7d3c98", alpha=0.7)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].legend(frameon=False)
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("score")
    axes[1].set_ylim(0, 1)
    axes[1].legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
