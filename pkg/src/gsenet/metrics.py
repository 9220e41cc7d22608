"""Confusion-matrix metrics: accuracy, per-class precision/recall/F1, and
the Matthews correlation coefficient.

``mcc`` uses the textbook binary formula for 2x2 matrices and the
covariance-form generalization for more classes; ``mcc_generalized``
exposes the covariance form at any size so the two routes can be compared
on binary problems.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def confusion(labels, preds, n_classes=4):
    """Counts with rows = true class, columns = predicted class."""
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if labels.size == 0:
        raise DataError("cannot build a confusion matrix from no samples")
    if labels.shape != preds.shape:
        raise DataError(
            f"labels ({labels.shape}) and predictions ({preds.shape}) differ"
        )
    for name, arr in (("label", labels), ("prediction", preds)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise DataError(f"{name} outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def mcc_generalized(cm):
    """Covariance-form correlation between true and predicted labels.
    Returns 0.0 when any marginal is degenerate (0/0 convention)."""
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum()
    trace = np.trace(cm)
    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    num = trace * n - rows @ cols
    den_sq = (n * n - cols @ cols) * (n * n - rows @ rows)
    if den_sq <= 0.0:
        return 0.0
    return float(num / np.sqrt(den_sq))


def mcc_binary(cm):
    """The printed two-class formula.  Layout: [[tp, fn], [fp, tn]] with
    class 0 as the positive class."""
    cm = np.asarray(cm, dtype=np.float64)
    if cm.shape != (2, 2):
        raise DataError(f"binary formula needs a 2x2 matrix, got {cm.shape}")
    tp, fn = cm[0]
    fp, tn = cm[1]
    den_sq = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den_sq <= 0.0:
        return 0.0
    return float((tn * tp - fn * fp) / np.sqrt(den_sq))


def mcc(cm):
    """Matthews correlation in [-1, 1]: binary formula for 2x2 input,
    covariance generalization otherwise."""
    cm = np.asarray(cm)
    if cm.shape == (2, 2):
        return mcc_binary(cm)
    return mcc_generalized(cm)


def metrics(cm):
    """Accuracy plus one-vs-rest precision/recall/F1 per class and their
    unweighted (macro) means.  Zero denominators score 0."""
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum()
    if n == 0:
        raise DataError("empty confusion matrix")
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0,
                      2 * precision * recall / (precision + recall), 0.0)
    return {
        "accuracy": float(tp.sum() / n),
        "precision": precision.tolist(),
        "recall": recall.tolist(),
        "f1": f1.tolist(),
        "macro_precision": float(precision.mean()),
        "macro_recall": float(recall.mean()),
        "macro_f1": float(f1.mean()),
        "mcc": mcc(cm),
    }
