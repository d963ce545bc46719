"""Classification metric suite over a confusion matrix: per-class
precision/recall, macro F1, Cohen's Kappa and multiclass MCC (covariance
form).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyTestSet(Exception):
    pass


@dataclass
class MetricsReport:
    classes: list[str]
    confusion: np.ndarray          # rows = true class, cols = predicted
    f1_macro: float
    kappa: float
    mcc: float
    precision: dict[str, float]
    recall: dict[str, float]

    def to_json(self) -> dict:
        return {
            "classes": self.classes,
            "confusion": self.confusion.tolist(),
            "f1_macro": self.f1_macro,
            "kappa": self.kappa,
            "mcc": self.mcc,
            "precision": self.precision,
            "recall": self.recall,
        }


def confusion_matrix(y_true, y_pred, classes: list[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[index[t], index[p]] += 1
    return cm


def f1_macro_from_cm(cm: np.ndarray) -> float:
    k = len(cm)
    f1s = []
    for i in range(k):
        tp = cm[i, i]
        fp = cm[:, i].sum() - tp
        fn = cm[i, :].sum() - tp
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


def kappa_from_cm(cm: np.ndarray) -> float:
    s = cm.sum()
    if s == 0:
        raise EmptyTestSet("empty confusion matrix")
    po = np.trace(cm) / s
    pe = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / (s * s)
    if pe >= 1.0:
        return 0.0
    return float((po - pe) / (1.0 - pe))


def mcc_from_cm(cm: np.ndarray) -> float:
    """Multiclass MCC via the covariance form over the confusion matrix."""
    cm = cm.astype(float)
    s = cm.sum()
    if s == 0:
        raise EmptyTestSet("empty confusion matrix")
    c = np.trace(cm)
    t = cm.sum(axis=1)  # true counts
    p = cm.sum(axis=0)  # predicted counts
    num = c * s - float(t @ p)
    den = np.sqrt(s * s - float(p @ p)) * np.sqrt(s * s - float(t @ t))
    return float(num / den) if den > 0 else 0.0


def evaluate_predictions(y_true, y_pred, classes: list[str]) -> MetricsReport:
    if len(y_true) == 0:
        raise EmptyTestSet("no test rows")
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred differ in length")
    cm = confusion_matrix(y_true, y_pred, classes)
    precision = {}
    recall = {}
    for i, cls in enumerate(classes):
        tp = cm[i, i]
        col = cm[:, i].sum()
        row = cm[i, :].sum()
        precision[cls] = float(tp / col) if col > 0 else 0.0
        recall[cls] = float(tp / row) if row > 0 else 0.0
    return MetricsReport(
        classes=list(classes),
        confusion=cm,
        f1_macro=f1_macro_from_cm(cm),
        kappa=kappa_from_cm(cm),
        mcc=mcc_from_cm(cm),
        precision=precision,
        recall=recall,
    )
