"""Figures written next to the tab-separated reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes independent of the matplotlib version
_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_learning_curve(history, path: str | Path, best_epoch: int | None = None) -> Path:
    epochs = [h.epoch for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, [h.train_loss for h in history], "o-", color="tab:blue", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross-entropy")
    dev = [h.dev_accuracy for h in history]
    if any(d is not None for d in dev):
        ax2 = ax.twinx()
        ax2.plot(epochs, [np.nan if d is None else d for d in dev], "s--",
                 color="tab:orange", label="dev accuracy")
        ax2.set_ylabel("dev accuracy")
        ax2.set_ylim(0, 1.02)
    if best_epoch:
        ax.axvline(best_epoch, color="grey", lw=0.8, ls=":")
    fig.legend(loc="upper right", fontsize=8)
    return _finish(fig, path)


def plot_fold_metrics(fold_ids: Sequence[int], accuracies: Sequence[float],
                      path: str | Path, f1: Sequence[float] | None = None) -> Path:
    x = np.arange(len(fold_ids))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.38 if f1 is not None else 0.6
    ax.bar(x - (width / 2 if f1 is not None else 0), accuracies, width, label="accuracy")
    if f1 is not None:
        ax.bar(x + width / 2, f1, width, label="F1")
    ax.axhline(float(np.mean(accuracies)), color="k", lw=1, ls="--", label="mean accuracy")
    ax.set_xticks(x, [str(f) for f in fold_ids])
    ax.set_xlabel("fold")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8, loc="lower right")
    return _finish(fig, path)


def plot_gradcheck_errors(errors: dict[str, Sequence[float]], path: str | Path,
                          tol: float = 1e-4) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bins = np.logspace(-16, 0, 33)
    for name, errs in errors.items():
        ax.hist(np.clip(errs, 1e-16, 1), bins=bins, alpha=0.6, label=name)
    ax.axvline(tol, color="red", lw=1, label="tolerance")
    ax.set_xscale("log")
    ax.set_xlabel("relative error")
    ax.set_ylabel("coordinates")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_score_histogram(probs: Sequence[float], gold: Sequence[bool], path: str | Path,
                         thresholds: Sequence[float] = (0.5, 0.9)) -> Path:
    probs = np.asarray(probs)
    gold = np.asarray(gold, dtype=bool)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bins = np.linspace(0, 1, 21)
    ax.hist(probs[gold], bins=bins, alpha=0.6, label="positive")
    ax.hist(probs[~gold], bins=bins, alpha=0.6, label="negative")
    for t in thresholds:
        ax.axvline(t, color="k", lw=0.8, ls=":")
    ax.set_xlabel("predicted probability")
    ax.set_ylabel("instances")
    ax.legend(fontsize=8)
    return _finish(fig, path)
