"""Figure rendering for run artifacts; every figure lands next to its CSV."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_heatmap_figure(matrix: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix, cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax, label="|weight|")
    ax.set_xlabel("input neuron")
    ax.set_ylabel("output neuron")
    if title:
        ax.set_title(title)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_metrics_figure(records, path, task: str = "") -> None:
    """Training loss and eval metric against the batch counter."""
    batches = [r.batch for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(batches, [r.train_loss for r in records], label="train loss")
    ax1.plot(batches, [r.penalty_value for r in records], label="penalty")
    ax1.set_xlabel("batch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(batches, [r.eval_metric for r in records], color="tab:green",
             label="eval metric")
    ax2b = ax2.twinx()
    ax2b.plot(batches, [r.sparsity_percent for r in records], color="tab:red",
              alpha=0.6, label="sparsity %")
    ax2b.set_ylabel("sparsity %")
    ax2.set_xlabel("batch")
    ax2.set_ylabel("RMSE" if task == "adding" else "decode error (cm)"
                   if task == "navigation" else "eval metric")
    ax2.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(rows, path) -> None:
    lams = [r["lambda"] for r in rows]
    means = [r["mean_eval"] for r in rows]
    sds = [r["sd_eval"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(lams, means, yerr=sds, marker="o", capsize=3)
    if min(lams) > 0:
        ax.set_xscale("log")
    ax.set_xlabel("regularizing factor")
    ax.set_ylabel("final eval metric")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
