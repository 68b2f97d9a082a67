"""Confusion-matrix metrics for the three duration classes.

Balanced accuracy and macro F1 average over the classes present in the
true labels only; an event with a single long-duration county would
otherwise be dominated by the absent-class convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_CLASSES = 3
ABSENT_CLASS_RULE = "balanced accuracy and macro F1 average over classes present in the true labels"


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    t = np.asarray(y_true, dtype=int)
    p = np.asarray(y_pred, dtype=int)
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (t, p), 1)
    return cm


def scores_from_confusion(cm: np.ndarray) -> tuple[float, float, float]:
    """(accuracy, balanced accuracy, macro F1) from a rows-are-truth matrix."""
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm).astype(float)
    present = support > 0
    recall = tp[present] / support[present]
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)[present]
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(denom), where=denom > 0)
    return float(tp.sum() / total), float(recall.mean()), float(f1.mean())


def predict_classes(logits) -> np.ndarray:
    return np.argmax(np.asarray(logits), axis=1)  # ties -> lowest class index


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    balanced_accuracy: float
    macro_f1: float
    n_nodes: int
    label: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, y_true, y_pred, label: str = "") -> "MetricsReport":
        if len(y_true) == 0:
            raise ValueError("cannot evaluate an empty event")
        cm = confusion_matrix(y_true, y_pred)
        acc, bal, f1 = scores_from_confusion(cm)
        return cls(cm, acc, bal, f1, int(cm.sum()), label)

    def to_dict(self) -> dict:
        d = {
            "event": self.label,
            "n_nodes": self.n_nodes,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
        }
        d.update(self.extra)
        return d


def average_report(reports: list[MetricsReport], label: str = "average") -> MetricsReport:
    """Unweighted mean of per-event scores; the confusion matrix is the pooled sum."""
    cm = sum(r.confusion for r in reports)
    return MetricsReport(cm, float(np.mean([r.accuracy for r in reports])),
                         float(np.mean([r.balanced_accuracy for r in reports])),
                         float(np.mean([r.macro_f1 for r in reports])),
                         int(cm.sum()), label)


def format_table(reports: list[MetricsReport]) -> str:
    lines = [f"{'event':<12} {'n':>5} {'accuracy':>9} {'bal_acc':>8} {'macro_f1':>9}"]
    for r in reports:
        lines.append(f"{r.label:<12} {r.n_nodes:>5} {r.accuracy:>9.3f} {r.balanced_accuracy:>8.3f} {r.macro_f1:>9.3f}")
    lines.append(f"# {ABSENT_CLASS_RULE}")
    return "\n".join(lines)
