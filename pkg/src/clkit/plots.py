"""Matplotlib figure rendering for report artifacts (written next to the
JSON/CSV output by the CLI report paths)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .drift import DriftReport
from .metrics import PerformanceMatrix
from .similarity import HISTOGRAM_BIN_WIDTH, SimilarityReport


def similarity_histogram(report: SimilarityReport, path) -> Path:
    """Bar chart of the pairwise-score distribution."""
    path = Path(path)
    edges = np.arange(len(report.histogram)) * HISTOGRAM_BIN_WIDTH
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(edges, report.histogram, width=HISTOGRAM_BIN_WIDTH, align="edge",
           color="#4878a8", edgecolor="white", linewidth=0.3)
    ax.axvline(report.mean, color="crimson", linestyle="--", linewidth=1,
               label=f"mean = {report.mean:.4f}")
    ax.set_xlabel(f"{report.mode.value} similarity")
    ax.set_ylabel("pair count")
    ax.set_title(f"Pairwise patch similarity ({report.pair_count} pairs)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def drift_group_bars(report: DriftReport, path) -> Path:
    """Mean drift per difficulty pairing with 95% CI error bars and the
    high-drift threshold line."""
    path = Path(path)
    labels = [f"{g.d_src}→{g.d_tgt}" for g in report.groups]
    means = [g.mean for g in report.groups]
    err_lo = [0.0 if g.ci_lo is None else g.mean - g.ci_lo for g in report.groups]
    err_hi = [0.0 if g.ci_hi is None else g.ci_hi - g.mean for g in report.groups]
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(labels) + 2), 4))
    x = np.arange(len(labels))
    ax.bar(x, means, yerr=[err_lo, err_hi], capsize=4, color="#6aa36a")
    ax.axhline(report.high_drift_threshold, color="red", linestyle="--", linewidth=1,
               label=f"high-drift threshold ({report.high_drift_threshold})")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("mean drift (1 - cosine)")
    ax.set_title("Prompt-poisoning drift by difficulty pairing")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def matrix_heatmap(matrix: PerformanceMatrix, path) -> Path:
    """Dense heatmap of the performance matrix (row 0 = zero-shot)."""
    path = Path(path)
    n = matrix.n_tasks
    dense = np.full((n + 1, n), np.nan)
    if matrix.zero_shot is not None:
        dense[0, :] = matrix.zero_shot
    for (i, j), v in matrix.entries.items():
        dense[i, j - 1] = v
    fig, ax = plt.subplots(figsize=(max(4, 0.4 * n + 2), max(3, 0.4 * n + 2)))
    im = ax.imshow(dense, vmin=0, vmax=1, cmap="viridis", aspect="auto")
    ax.set_xlabel("task j")
    ax.set_ylabel("after learning step i (0 = zero-shot)")
    ax.set_title("Performance matrix")
    fig.colorbar(im, ax=ax, label="success rate")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def learning_curve(matrix: PerformanceMatrix, path) -> Path:
    """Running mean of the diagonal over learning steps."""
    path = Path(path)
    n = matrix.n_tasks
    diag = [matrix.entries.get((i, i)) for i in range(1, n + 1)]
    steps = [i for i, v in enumerate(diag, start=1) if v is not None]
    values = [v for v in diag if v is not None]
    running = np.cumsum(values) / np.arange(1, len(values) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, values, "o-", label="per-task success rate", color="#4878a8")
    ax.plot(steps, running, "s--", label="running mean (learning curve)", color="#c06040")
    ax.set_xlabel("learning step")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title("Learning curve")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
