"""Figure rendering for the report path.

The metric computations live in :mod:`logmask.evaluate`; this module only
turns their outputs into PNG files written next to the CSV/text reports:
ROC curves, score distributions split by label, and the training loss curve.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import ScoredRecord
from .ingest import Label


def save_roc_figure(
    path: str | Path,
    curves: dict[str, tuple[list[tuple[float, float, float]], float]],
) -> Path:
    """Plot one ROC curve per score kind; legend carries the AUROC."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for which, (points, area) in sorted(curves.items()):
        fpr = [p[0] for p in points]
        tpr = [p[1] for p in points]
        ax.plot(fpr, tpr, label=f"{which} (AUROC {area:.4f})")
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("ROC")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_score_distribution_figure(path: str | Path, records: list[ScoredRecord]) -> Path:
    """Histograms of both abnormal scores, normal vs abnormal overlaid."""
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for ax, attr, title in (
        (axes[0], "abnormal_prob", "predictive probability score"),
        (axes[1], "abnormal_error", "prediction error score"),
    ):
        normal = [getattr(r, attr) for r in records if r.label is Label.NORMAL]
        abnormal = [getattr(r, attr) for r in records if r.label is Label.ABNORMAL]
        ax.hist(normal, bins=40, alpha=0.6, label=f"normal (n={len(normal)})")
        ax.hist(abnormal, bins=40, alpha=0.6, label=f"abnormal (n={len(abnormal)})")
        ax.set_title(title)
        ax.set_yscale("log")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_loss_curve_figure(path: str | Path, loss_history: list[tuple[int, float]]) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    steps = [s for s, _ in loss_history]
    losses = [l for _, l in loss_history]
    ax.plot(steps, losses, linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("masked-token loss")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
