"""Confusion-matrix metrics, ROC-AUC, macro averaging, and fold reports.

Single-ratio metrics are computed as one integer division each (F1 uses the
algebraically equivalent 2TP / (2TP + FP + FN)), so every value equals the
correctly rounded rational — exact against a rational-arithmetic recompute.

Zero-denominator cases return 0.0 and are flagged as degenerate instead of
failing, so folds with no positive predictions still aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from vitforge.ops import softmax_rows

CSV_COLUMNS = ("fold", "accuracy", "precision", "sensitivity", "f1", "specificity", "auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_binary(predicted, truth, positive_class) -> ConfusionCounts:
    """Count TP/FP/TN/FN of ``predicted`` against ``truth`` for one positive label."""
    predicted = list(predicted)
    truth = list(truth)
    if len(predicted) != len(truth):
        raise ValueError(
            f"prediction/truth length mismatch: {len(predicted)} vs {len(truth)}"
        )
    tp = fp = tn = fn = 0
    for p, t in zip(predicted, truth):
        if t == positive_class:
            if p == positive_class:
                tp += 1
            else:
                fn += 1
        else:
            if p == positive_class:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num: int, den: int, flags: list, label: str) -> float:
    if den == 0:
        flags.append(label)
        return 0.0
    return num / den


def binary_metrics(c: ConfusionCounts) -> dict:
    """Accuracy, precision, recall/sensitivity, specificity, F1 from counts.

    Returns a ``degenerate`` entry listing metrics whose denominator was zero.
    """
    if c.total == 0:
        raise ValueError("empty confusion: no samples evaluated")
    flags: list = []
    precision = _ratio(c.tp, c.tp + c.fp, flags, "precision")
    recall = _ratio(c.tp, c.tp + c.fn, flags, "recall")
    specificity = _ratio(c.tn, c.tn + c.fp, flags, "specificity")
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, flags, "f1")
    if "precision" in flags or "recall" in flags or (precision + recall) == 0.0:
        if "f1" not in flags:
            flags.append("f1")
        f1 = 0.0
    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "precision": precision,
        "recall": recall,
        "specificity": specificity,
        "f1": f1,
        "degenerate": tuple(flags),
    }


def roc_auc(scores, truth, positive_class=1) -> float:
    """Area under the ROC curve via the rank (Mann-Whitney) statistic:
    P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError("scores and truth must be equal-length vectors")
    positive = truth == positive_class
    n_pos = int(positive.sum())
    n_neg = int(len(truth) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: need at least one positive and one negative")

    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1

    rank_sum = float(ranks[positive].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def multiclass_confusion(predicted, truth, num_classes: int) -> np.ndarray:
    """K x K count matrix: rows are true classes, columns predictions."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise ValueError("prediction/truth length mismatch")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, t in zip(predicted, truth):
        matrix[t, p] += 1
    return matrix


def macro_metrics(matrix: np.ndarray) -> dict:
    """Accuracy plus unweighted means of per-class one-vs-rest metrics.

    macro_f1 averages the per-class F1 values (not the F1 of averaged rates).
    """
    matrix = np.asarray(matrix)
    k = matrix.shape[0]
    if matrix.ndim != 2 or matrix.shape != (k, k) or k < 2:
        raise ValueError(f"need a square K>=2 confusion matrix, got {matrix.shape}")
    total = int(matrix.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")

    precisions, recalls, f1s, specificities = [], [], [], []
    for cls in range(k):
        tp = int(matrix[cls, cls])
        fp = int(matrix[:, cls].sum()) - tp
        fn = int(matrix[cls, :].sum()) - tp
        tn = total - tp - fp - fn
        per = binary_metrics(ConfusionCounts(tp, fp, tn, fn))
        precisions.append(per["precision"])
        recalls.append(per["recall"])
        f1s.append(per["f1"])
        specificities.append(per["specificity"])
    return {
        "accuracy": int(np.trace(matrix)) / total,
        "macro_precision": float(np.mean(precisions)),
        "macro_recall": float(np.mean(recalls)),
        "macro_f1": float(np.mean(f1s)),
        "macro_specificity": float(np.mean(specificities)),
    }


@dataclass
class FoldMetrics:
    """One row of the report (one fold, or the trailing average)."""

    fold: str
    accuracy: float
    precision: float
    sensitivity: float
    f1: float
    specificity: float
    auc: Optional[float]
    degenerate: tuple = ()

    def values(self) -> list:
        return [self.accuracy, self.precision, self.sensitivity, self.f1,
                self.specificity, self.auc]


@dataclass
class MetricsReport:
    folds: list = field(default_factory=list)
    average: Optional[FoldMetrics] = None

    def rows(self) -> list:
        out = list(self.folds)
        if self.average is not None:
            out.append(self.average)
        return out

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for row in self.rows():
            cells = [row.fold]
            for v in row.values():
                cells.append("" if v is None else repr(float(v)))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        def rowdict(row):
            return {
                "fold": row.fold,
                "accuracy": row.accuracy,
                "precision": row.precision,
                "sensitivity": row.sensitivity,
                "f1": row.f1,
                "specificity": row.specificity,
                "auc": row.auc,
                "degenerate": list(row.degenerate),
            }

        return {
            "columns": list(CSV_COLUMNS),
            "folds": [rowdict(r) for r in self.folds],
            "average": rowdict(self.average) if self.average else None,
        }


def evaluate(
    logits_fn: Callable,
    images,
    labels: Sequence[int],
    num_classes: int,
    positive_index: int = 0,
    fold: str = "1",
    batch_size: int = 8,
) -> FoldMetrics:
    """Run a model over a dataset and compute one report row.

    ``logits_fn(batch) -> B x K`` logits. Predictions are the argmax (lowest
    index wins ties); for binary tasks the AUC scores are the softmax
    probability of the positive class.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("cannot evaluate an empty dataset")

    logit_rows = []
    for start in range(0, n, batch_size):
        chunk = images[start : start + batch_size]
        batch = np.stack([np.asarray(x) for x in chunk])
        out = np.asarray(logits_fn(batch))
        if out.shape != (len(chunk), num_classes):
            raise ValueError(
                f"model returned {out.shape} for samples "
                f"{start}..{start + len(chunk) - 1}, expected ({len(chunk)}, {num_classes})"
            )
        logit_rows.append(out)
    logits = np.concatenate(logit_rows, axis=0)
    predictions = np.argmax(logits, axis=1)

    if num_classes == 2:
        counts = confusion_binary(predictions, labels, positive_index)
        m = binary_metrics(counts)
        scores = softmax_rows(logits.astype(np.float64))[:, positive_index]
        auc = roc_auc(scores, labels, positive_class=positive_index)
        return FoldMetrics(
            fold=str(fold),
            accuracy=m["accuracy"],
            precision=m["precision"],
            sensitivity=m["recall"],
            f1=m["f1"],
            specificity=m["specificity"],
            auc=auc,
            degenerate=m["degenerate"],
        )

    matrix = multiclass_confusion(predictions, labels, num_classes)
    m = macro_metrics(matrix)
    return FoldMetrics(
        fold=str(fold),
        accuracy=m["accuracy"],
        precision=m["macro_precision"],
        sensitivity=m["macro_recall"],
        f1=m["macro_f1"],
        specificity=m["macro_specificity"],
        auc=None,
    )


def aggregate_folds(fold_rows: Sequence[FoldMetrics]) -> MetricsReport:
    """Append the arithmetic-mean row across folds, column by column."""
    rows = list(fold_rows)
    if not rows:
        raise ValueError("need at least one fold to aggregate")
    has_auc = all(r.auc is not None for r in rows)
    average = FoldMetrics(
        fold="average",
        accuracy=float(np.mean([r.accuracy for r in rows])),
        precision=float(np.mean([r.precision for r in rows])),
        sensitivity=float(np.mean([r.sensitivity for r in rows])),
        f1=float(np.mean([r.f1 for r in rows])),
        specificity=float(np.mean([r.specificity for r in rows])),
        auc=float(np.mean([r.auc for r in rows])) if has_auc else None,
        degenerate=tuple(sorted({d for r in rows for d in r.degenerate})),
    )
    return MetricsReport(folds=rows, average=average)
