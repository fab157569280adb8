"""Classification metrics: confusion matrix, per-class and macro P/R/F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, num_classes: int) -> np.ndarray:
    """[C, C] counts with rows = true class, columns = predicted class."""
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    if labels.shape != preds.shape:
        raise DataError(f"labels shape {labels.shape} != predictions shape {preds.shape}")
    flat = labels.astype(np.int64) * num_classes + preds.astype(np.int64)
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


@dataclass
class MetricsReport:
    accuracy: float
    loss: float
    confusion: np.ndarray
    precision: np.ndarray  # per class
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float

    @classmethod
    def from_predictions(
        cls,
        labels: np.ndarray,
        preds: np.ndarray,
        num_classes: int,
        loss: float = float("nan"),
    ) -> "MetricsReport":
        """Counting-based metrics. Macro averages run over classes with support > 0;
        a class that is never predicted gets precision 0 by convention."""
        cm = confusion_matrix(labels, preds, num_classes)
        total = cm.sum()
        if total == 0:
            raise DataError("no predictions to score")
        tp = np.diag(cm).astype(np.float64)
        support = cm.sum(axis=1)
        predicted = cm.sum(axis=0)
        precision = np.divide(tp, predicted, out=np.zeros(num_classes), where=predicted > 0)
        recall = np.divide(tp, support, out=np.zeros(num_classes), where=support > 0)
        pr = precision + recall
        f1 = np.divide(2.0 * precision * recall, pr, out=np.zeros(num_classes), where=pr > 0)
        supported = support > 0

        def macro(values: np.ndarray) -> float:
            # sequential sum in class order so the value matches the naive definition exactly
            return float(sum(values[supported]) / int(supported.sum()))

        return cls(
            accuracy=float(tp.sum() / total),
            loss=float(loss),
            confusion=cm,
            precision=precision,
            recall=recall,
            f1=f1,
            support=support,
            macro_precision=macro(precision),
            macro_recall=macro(recall),
            macro_f1=macro(f1),
        )

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "loss": self.loss,
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "support": self.support.tolist(),
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            accuracy=d["accuracy"],
            loss=d["loss"],
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            precision=np.asarray(d["precision"]),
            recall=np.asarray(d["recall"]),
            f1=np.asarray(d["f1"]),
            support=np.asarray(d["support"], dtype=np.int64),
            macro_precision=d["macro_precision"],
            macro_recall=d["macro_recall"],
            macro_f1=d["macro_f1"],
        )
