"""Confusion matrix and per-class precision/recall/F1 reporting.

Per-class precision is also exposed under the alias ``paper_accuracy``:
some published result tables label this column "accuracy", so the report
carries both names to keep side-by-side reading unambiguous.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CLASS_LABELS
from .errors import DataError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # 2x2 ints, [actual][predicted], class order = CLASS_LABELS
    classes: tuple[str, str] = CLASS_LABELS

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    overall_accuracy: float

    def to_document(self) -> dict:
        classes = {}
        for label, m in self.per_class.items():
            classes[label] = {
                "precision": float(m.precision),
                "paper_accuracy": float(m.precision),
                "recall": float(m.recall),
                "f1": float(m.f1),
                "support": int(m.support),
            }
        return {
            "version": 1,
            "classes": classes,
            "weighted_avg": {
                "precision": float(self.weighted_precision),
                "paper_accuracy": float(self.weighted_precision),
                "recall": float(self.weighted_recall),
                "f1": float(self.weighted_f1),
            },
            "overall_accuracy": float(self.overall_accuracy),
        }

    def format_table(self) -> str:
        header = f"{'class':<16} {'precision':>10} {'recall':>10} {'f1':>10} {'support':>8}"
        lines = [header, "-" * len(header)]
        for label, m in self.per_class.items():
            lines.append(
                f"{label:<16} {m.precision:>10.4f} {m.recall:>10.4f} {m.f1:>10.4f} {m.support:>8d}"
            )
        lines.append(
            f"{'weighted avg':<16} {self.weighted_precision:>10.4f} "
            f"{self.weighted_recall:>10.4f} {self.weighted_f1:>10.4f}"
        )
        lines.append(f"overall accuracy: {self.overall_accuracy:.4f}")
        lines.append("note: precision is also reported under the alias 'paper_accuracy'")
        return "\n".join(lines)


def confusion(predictions: list[str], truths: list[str]) -> ConfusionMatrix:
    """Exact 2x2 counts indexed [actual][predicted]."""
    if len(predictions) != len(truths):
        raise DataError(
            f"got {len(predictions)} predictions for {len(truths)} ground-truth labels"
        )
    index = {label: i for i, label in enumerate(CLASS_LABELS)}
    counts = np.zeros((2, 2), dtype=np.int64)
    for pred, truth in zip(predictions, truths):
        if pred not in index or truth not in index:
            raise DataError(f"unknown label in ({pred!r}, {truth!r}); known: {CLASS_LABELS}")
        counts[index[truth], index[pred]] += 1
    return ConfusionMatrix(counts=counts)


def _safe_div(num: float, den: float) -> float:
    # Zero-division convention: 0.0, never NaN.
    return num / den if den > 0 else 0.0


def classification_report(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class precision/recall/F1 plus support-weighted averages."""
    if cm.total == 0:
        raise DataError("cannot build a report from an empty confusion matrix")
    counts = cm.counts
    per_class: dict[str, ClassMetrics] = {}
    supports = counts.sum(axis=1)
    for i, label in enumerate(cm.classes):
        tp = float(counts[i, i])
        fp = float(counts[1 - i, i])
        fn = float(counts[i, 1 - i])
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2.0 * precision * recall, precision + recall)
        per_class[label] = ClassMetrics(precision, recall, f1, int(supports[i]))

    total = float(cm.total)
    weights = [supports[i] / total for i in range(2)]
    weighted = [
        sum(w * getattr(per_class[label], name) for w, label in zip(weights, cm.classes))
        for name in ("precision", "recall", "f1")
    ]
    accuracy = float(np.trace(counts)) / total
    return MetricsReport(
        per_class=per_class,
        weighted_precision=weighted[0],
        weighted_recall=weighted[1],
        weighted_f1=weighted[2],
        overall_accuracy=accuracy,
    )
