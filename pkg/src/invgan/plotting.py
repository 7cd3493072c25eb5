"""Matplotlib figures for run reports; every function writes a file.

Uses the Agg backend so figures render in headless jobs. Images arrive as
[-1, 1] tensors and are shown unnormalized on a fixed scale, so brightness
is comparable across panels.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from torch import Tensor  # noqa: E402


def _panel(ax, image: Tensor) -> None:
    arr = image.detach().cpu().float().clamp(-1, 1).numpy()
    if arr.shape[0] == 1:
        ax.imshow(arr[0], cmap="gray", vmin=-1, vmax=1, interpolation="nearest")
    else:
        ax.imshow((arr.transpose(1, 2, 0) + 1) / 2, interpolation="nearest")
    ax.set_xticks(())
    ax.set_yticks(())


def save_image_grid(
    images: Tensor, path, ncols: int = 8, title: Optional[str] = None
) -> Path:
    """Save a [N, C, H, W] batch as an image grid figure."""
    n = images.shape[0]
    ncols = min(ncols, n)
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(1.2 * ncols, 1.2 * nrows), squeeze=False)
    for i in range(nrows * ncols):
        ax = axes[i // ncols][i % ncols]
        if i < n:
            _panel(ax, images[i])
        else:
            ax.axis("off")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_pair_grid(originals: Tensor, recons: Tensor, path, ncols: int = 8) -> Path:
    """Originals on even rows, their reconstructions directly below."""
    n = min(originals.shape[0], recons.shape[0], ncols)
    fig, axes = plt.subplots(2, n, figsize=(1.2 * n, 2.6), squeeze=False)
    for i in range(n):
        _panel(axes[0][i], originals[i])
        _panel(axes[1][i], recons[i])
    axes[0][0].set_ylabel("input", fontsize=8)
    axes[1][0].set_ylabel("recon", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_loss_curves(records: Sequence[dict], path) -> Path:
    """Plot every loss_* series from a metrics stream against step."""
    fig, ax = plt.subplots(figsize=(7, 4))
    if records:
        steps = [r["step"] for r in records]
        keys = sorted(k for k in records[0] if k.startswith("loss_"))
        for key in keys:
            ax.plot(steps, [r.get(key) for r in records], label=key, linewidth=1)
        ax.legend(fontsize=8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_ablation(mae_by_variant: dict, path) -> Path:
    """Bar chart of reconstruction MAE per model variant."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = list(mae_by_variant)
    values = [mae_by_variant[k] for k in names]
    ax.bar(names, values, color="#4878a8")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.4f}", ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("reconstruction MAE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_image_strip(images: Sequence[Tensor], labels: Sequence[str], path) -> Path:
    """One row of images with a label under each, e.g. a deblur sweep."""
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(1.6 * n, 2.0), squeeze=False)
    for i in range(n):
        _panel(axes[0][i], images[i])
        axes[0][i].set_xlabel(labels[i], fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
