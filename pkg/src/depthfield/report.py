"""Figure rendering for the CLI report paths.

Evaluation and training runs save matplotlib figures next to their
delimited text/JSON output: delta bar charts, ratio-error heat maps, and
loss curves.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_delta_bars(report, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    labels = [f"{t:.4g}" for t in report.thresholds]
    x = np.arange(len(labels))
    width = 0.38 if report.masked_deltas is not None else 0.7
    ax.bar(x, report.deltas, width, label="all pixels")
    if report.masked_deltas is not None:
        ax.bar(x + width, report.masked_deltas, width, label="masked")
        ax.set_xticks(x + width / 2)
        ax.legend(frameon=False, fontsize=8)
    else:
        ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_xlabel("threshold")
    ax.set_ylabel("pixels within threshold (%)")
    ax.set_ylim(0, 105)
    for xi, d in zip(x, report.deltas):
        ax.text(xi, d + 1, f"{d:.1f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_ratio_error_map(pred, gt, path):
    """Heat map of |log(pred/gt)| over jointly valid pixels."""
    m = pred.validity & gt.validity & (pred.values > 0)
    err = np.full(pred.values.shape, np.nan)
    err[m] = np.abs(np.log(pred.values[m]) - np.log(gt.values[m]))
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(err, cmap="magma", interpolation="nearest")
    fig.colorbar(im, ax=ax, label="|log ratio|")
    ax.set_title("per-pixel ratio error")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_loss_curve(losses, path):
    losses = np.asarray(losses)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(losses, lw=0.6, alpha=0.5, label="per step")
    if losses.size >= 100:
        k = 100
        smooth = np.convolve(losses, np.ones(k) / k, mode="valid")
        ax.plot(np.arange(smooth.size) + k - 1, smooth, lw=1.5, label=f"{k}-step mean")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("L1 loss")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_depth_preview(values, path, title="depth"):
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(values, cmap="turbo", interpolation="nearest")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
