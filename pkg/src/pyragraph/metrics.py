"""Confusion-matrix classification metrics.

Both headline metrics work on integer confusion matrices (rows = true class,
columns = predicted class), so they can be aggregated across folds before
scoring if desired.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def confusion_matrix(y_true, y_pred, classes: int) -> np.ndarray:
    """C x C count matrix; rows index the true class."""
    cm = np.zeros((classes, classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred, strict=True):
        if not (0 <= t < classes and 0 <= p < classes):
            raise ValidationError(f"label pair ({t}, {p}) outside [0, {classes})")
        cm[t, p] += 1
    return cm


def _validate_cm(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValidationError(f"confusion matrix must be square, got {cm.shape}")
    if np.any(cm < 0):
        raise ValidationError("confusion matrix has negative counts")
    return cm


def balanced_accuracy(cm) -> float:
    """Mean of per-class recalls. Every true class must have at least one sample."""
    cm = _validate_cm(cm)
    support = cm.sum(axis=1)
    empty = np.flatnonzero(support == 0)
    if empty.size:
        raise ValidationError(f"no true samples for class {empty[0]}")
    recalls = np.diag(cm) / support
    return float(recalls.mean())


def macro_f1(cm) -> float:
    """Unweighted mean of per-class F1; a class with no tp and no fp/fn scores 0."""
    cm = _validate_cm(cm)
    tp = np.diag(cm).astype(float)
    denom = 2 * tp + (cm.sum(axis=0) - tp) + (cm.sum(axis=1) - tp)
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def weighted_f1(cm) -> float:
    """Support-weighted mean of per-class F1 (alternative reading of "F1 score")."""
    cm = _validate_cm(cm)
    tp = np.diag(cm).astype(float)
    denom = 2 * tp + (cm.sum(axis=0) - tp) + (cm.sum(axis=1) - tp)
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    support = cm.sum(axis=1)
    if support.sum() == 0:
        raise ValidationError("empty confusion matrix")
    return float((f1 * support).sum() / support.sum())


def argmax_predict(probabilities) -> int:
    """Predicted class index; ties break to the lowest index."""
    return int(np.argmax(probabilities))
