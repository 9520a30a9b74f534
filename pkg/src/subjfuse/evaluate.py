"""Prediction and the macro-averaged F1 ranking metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ClassLabel, LabeledSentence


class LengthMismatch(ValueError):
    pass


class Empty(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: dict[ClassLabel, int]
    fp: dict[ClassLabel, int]
    fn: dict[ClassLabel, int]


@dataclass(frozen=True)
class EvalReport:
    precision: dict[ClassLabel, float]
    recall: dict[ClassLabel, float]
    f1: dict[ClassLabel, float]
    macro_f1: float
    accuracy: float
    n: int


def count_confusions(predictions: list[ClassLabel], golds: list[ClassLabel]) -> ConfusionCounts:
    tp = {c: 0 for c in ClassLabel}
    fp = {c: 0 for c in ClassLabel}
    fn = {c: 0 for c in ClassLabel}
    for pred, gold in zip(predictions, golds):
        if pred == gold:
            tp[gold] += 1
        else:
            fp[pred] += 1
            fn[gold] += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn)


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def macro_f1(predictions: list[ClassLabel], golds: list[ClassLabel]) -> EvalReport:
    """Per-class P/R/F1 with 0/0 taken as 0, macro-F1 as the unweighted
    mean of the two class F1 scores."""
    if len(predictions) != len(golds):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        raise Empty("cannot score an empty prediction set")
    counts = count_confusions(predictions, golds)
    precision, recall, f1 = {}, {}, {}
    for c in ClassLabel:
        precision[c] = _safe_div(counts.tp[c], counts.tp[c] + counts.fp[c])
        recall[c] = _safe_div(counts.tp[c], counts.tp[c] + counts.fn[c])
        f1[c] = _safe_div(2 * precision[c] * recall[c], precision[c] + recall[c])
    correct = sum(counts.tp.values())
    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=(f1[ClassLabel.OBJ] + f1[ClassLabel.SUBJ]) / 2.0,
        accuracy=correct / len(golds),
        n=len(golds),
    )


def logits_to_label(logits: np.ndarray) -> ClassLabel:
    # Exact ties resolve to OBJ.
    return ClassLabel.SUBJ if logits[1] > logits[0] else ClassLabel.OBJ


def predict(model, sentences: list[LabeledSentence], batch_size: int = 32) -> list[ClassLabel]:
    """Eval-mode argmax labels for a list of sentences."""
    labels: list[ClassLabel] = []
    for start in range(0, len(sentences), batch_size):
        logits = model.forward(sentences[start : start + batch_size], train=False)
        labels.extend(logits_to_label(row) for row in logits)
    return labels


def evaluate_model(model, dataset, batch_size: int = 32):
    """Mean cross-entropy loss and an EvalReport over a labeled dataset."""
    from .train import cross_entropy_batch  # late import, train depends on us

    if len(dataset) == 0:
        raise Empty("cannot evaluate on an empty dataset")
    loss_sum = 0.0
    preds: list[ClassLabel] = []
    golds: list[ClassLabel] = []
    rows = dataset.rows
    for start in range(0, len(rows), batch_size):
        batch = rows[start : start + batch_size]
        logits = model.forward(batch, train=False)
        gold_idx = np.array([0 if r.label == ClassLabel.OBJ else 1 for r in batch])
        losses, _ = cross_entropy_batch(logits, gold_idx)
        loss_sum += losses.sum()
        preds.extend(logits_to_label(row) for row in logits)
        golds.extend(r.label for r in batch)
    return loss_sum / len(rows), macro_f1(preds, golds)
