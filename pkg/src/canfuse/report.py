"""Figure and delimited-output rendering for the report stage.

All figures are written to files (Agg backend); the same directory gets
a metrics.csv with one row per evaluated model.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .ml import EvalReport, auc_roc, roc_points
from .temporal import window_partition

METRIC_FIELDS = (
    "model", "accuracy", "precision", "recall", "f1", "auc_roc",
    "inference_time_ms_per_sample", "tp", "fp", "tn", "fn",
)


def write_metrics_csv(path: str | Path, rows: list[tuple[str, EvalReport]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for name, report in rows:
            record = {"model": name}
            record.update({k: v for k, v in report.to_dict().items() if k in METRIC_FIELDS})
            writer.writerow(record)


def render_roc(path: str | Path, curves: list[tuple[str, np.ndarray, np.ndarray]]) -> None:
    """ROC curves; each entry is (name, labels, scores)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, labels, scores in curves:
        fpr, tpr = roc_points(labels, scores)
        auc, defined = auc_roc(labels, scores)
        label = f"{name} (AUC={auc:.4f})" if defined else name
        ax.plot(fpr, tpr, label=label)
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("ROC")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_ga_history(path: str | Path, history: list[dict]) -> None:
    """Best/mean fitness trace from the optimizer history rows."""
    gens = [int(h["generation"]) for h in history]
    best = [float(h["best_fitness"]) for h in history]
    mean = [float(h["mean_fitness"]) for h in history]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(gens, best, marker="o", label="best")
    ax.plot(gens, mean, marker="s", label="mean")
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.set_title("Feature search progress")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_pe_distributions(path: str | Path, pe: np.ndarray, labels: np.ndarray) -> None:
    """Per-byte prediction-error histograms, split by class."""
    pe = np.asarray(pe)
    labels = np.asarray(labels).astype(bool)
    fig, axes = plt.subplots(2, 4, figsize=(11, 5), sharey=True)
    for b, ax in enumerate(axes.ravel()):
        normal = pe[~labels, b]
        anomalous = pe[labels, b]
        hi = max(pe[:, b].max(), 1e-9)
        bins = np.linspace(0.0, hi, 40)
        ax.hist(normal, bins=bins, alpha=0.6, label="normal", density=True)
        if anomalous.size:
            ax.hist(anomalous, bins=bins, alpha=0.6, label="anomalous", density=True)
        ax.set_yscale("log")
        ax.set_title(f"PE{b + 1}", fontsize=9)
    axes[0, 0].legend(fontsize=7)
    fig.suptitle("Prediction-error feature distributions")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_window_profile(
    path: str | Path,
    se: np.ndarray,
    ratio: np.ndarray,
    labels: np.ndarray,
    filter_size: int,
) -> None:
    """Per-window anomalous share against mean SE/RATIO."""
    windows = window_partition(len(labels), filter_size)
    anom = np.empty(len(windows))
    mean_ratio = np.empty(len(windows))
    mean_se = np.empty(len(windows))
    for i, (s, e) in enumerate(windows):
        anom[i] = labels[s:e].mean()
        mean_ratio[i] = ratio[s:e].mean()
        mean_se[i] = se[s:e].mean()
    x = np.arange(len(windows))
    fig, ax1 = plt.subplots(figsize=(7, 3.5))
    ax1.bar(x, anom, color="salmon", alpha=0.5, label="anomalous share")
    ax1.set_ylabel("anomalous share")
    ax1.set_xlabel(f"window ({filter_size} frames each)")
    ax2 = ax1.twinx()
    ax2.plot(x, mean_ratio, color="tab:blue", label="mean RATIO")
    ax2.plot(x, mean_se, color="tab:green", label="mean SE")
    ax2.set_ylabel("feature value")
    lines, labels1 = ax1.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax1.legend(lines + lines2, labels1 + labels2, fontsize=8, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
