"""Matplotlib figure rendering for the report path.

Figures are written next to the delimited output with pinned PNG metadata
so repeated runs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_METADATA = {"Software": "subjfuse"}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_training_curves(records, out_path: str | Path) -> Path:
    """Train/eval loss and dev macro-F1 per epoch, one panel pair."""
    if not isinstance(records, (list, tuple)):
        records = [records]
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(9, 3.2))
    for rec in records:
        epochs = np.arange(1, len(rec.train_loss) + 1)
        stem = rec.language or rec.arch
        ax_loss.plot(epochs, rec.train_loss, label=f"{stem} train")
        ax_loss.plot(epochs, rec.eval_loss, linestyle="--", label=f"{stem} eval")
        ax_f1.plot(epochs, rec.eval_macro_f1, label=stem)
        if rec.best_epoch:
            ax_loss.axvline(rec.best_epoch, color="grey", alpha=0.3, linewidth=0.8)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=7)
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("macro-F1")
    ax_f1.set_ylim(0.0, 1.05)
    ax_f1.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, Path(out_path))


def plot_result_table(table, out_path: str | Path) -> Path:
    """Grouped bar chart of a variant/order x language result table."""
    n_rows = len(table.rows)
    n_cols = len(table.columns)
    x = np.arange(n_cols, dtype=float)
    width = 0.8 / n_rows
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * n_cols), 3.2))
    for i, (label, row) in enumerate(zip(table.rows, table.values)):
        ax.bar(x + (i - (n_rows - 1) / 2) * width, row, width=width, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(table.columns)
    ax.set_ylabel("macro-F1")
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, Path(out_path))
