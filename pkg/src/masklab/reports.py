"""Figure rendering for the CLI report paths.

All figures are written to files (Agg backend); SVG output is kept
byte-deterministic by pinning the hash salt and dropping the date metadata.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["svg.hashsalt"] = "masklab"

_SAVE_KWARGS = {".svg": {"metadata": {"Date": None}}}


def _save(fig, path):
    suffix = str(path)[str(path).rfind(".") :].lower()
    fig.savefig(path, **_SAVE_KWARGS.get(suffix, {}))
    plt.close(fig)


def save_curve_plot(path, deletion=None, insertion=None, title="") -> None:
    """Deletion/insertion confidence curves with their AUC in the legend."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if deletion is not None:
        ax.plot(deletion.fractions, deletion.confidences,
                label=f"deletion (AUC {deletion.auc:.3f})", color="#c43d3d")
    if insertion is not None:
        ax.plot(insertion.fractions, insertion.confidences,
                label=f"insertion (AUC {insertion.auc:.3f})", color="#2c7fb8")
    ax.set_xlabel("pixel fraction")
    ax.set_ylabel("class confidence")
    ax.set_xlim(0, 1)
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    _save(fig, path)


def save_heatmap_figure(path, image, heatmap_full, title="") -> None:
    """Input image next to its importance overlay."""
    fig, axes = plt.subplots(1, 2, figsize=(6, 3))
    gray = image[:, :, 0] if image.ndim == 3 else image
    axes[0].imshow(gray, cmap="gray", vmin=0, vmax=1)
    axes[0].set_title("input")
    axes[1].imshow(gray, cmap="gray", vmin=0, vmax=1)
    axes[1].imshow(heatmap_full, cmap="inferno", vmin=0, vmax=1, alpha=0.6)
    axes[1].set_title(title or "importance")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    _save(fig, path)


def save_stats_figure(path, stats) -> None:
    """Explainability-by-budget curve plus the diverse-explanation histogram."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    axes[0].plot(stats.subset_sizes, stats.explainable_fraction, marker="o")
    axes[0].set_xlabel("patch budget")
    axes[0].set_ylabel("fraction of images explainable")
    axes[0].set_ylim(0, 1.05)
    counts = stats.diverse_counts
    axes[1].bar(list(counts.keys()), list(counts.values()), color="#2c7fb8")
    axes[1].set_xlabel("diverse explanations per image")
    axes[1].set_ylabel("images")
    fig.tight_layout()
    _save(fig, path)
