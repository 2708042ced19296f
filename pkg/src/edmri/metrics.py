"""Ranking and thresholded classification metrics."""

from __future__ import annotations

import numpy as np

from edmri.errors import DegenerateInputError

THRESHOLD = 0.5


def _binary(labels):
    y = np.asarray(labels).ravel()
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    return y.astype(int)


def _both_classes(y):
    if y.min() == y.max():
        raise DegenerateInputError("metric needs both classes among the labels")


def _tie_groups(scores, labels):
    """Per distinct score, descending: (threshold, positives, negatives)."""
    s = np.asarray(scores, dtype=float).ravel()
    y = _binary(labels)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.size} scores, {y.size} labels")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    _both_classes(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    pos = np.add.reduceat(y, starts)
    neg = np.diff(np.r_[starts, s.size]) - pos
    return s[starts], pos, neg


def roc_curve(scores, labels):
    """ROC points from sweeping the threshold over the distinct scores.

    Returns ``(fpr, tpr, thresholds)``, starting at (0, 0) with an infinite
    threshold; tied scores move the curve in a single diagonal step.
    """
    thresholds, pos, neg = _tie_groups(scores, labels)
    tp = np.r_[0, np.cumsum(pos)]
    fp = np.r_[0, np.cumsum(neg)]
    return fp / fp[-1], tp / tp[-1], np.r_[np.inf, thresholds]


def auc(scores, labels) -> float:
    """Area under the ROC curve (trapezoidal), equal to the Mann-Whitney
    concordance with ties counted one half.

    Computed from integer counts, ``sum_g neg_g * (pos_above_g + pos_g / 2)``,
    so the only rounding is the final division.
    """
    _, pos, neg = _tie_groups(scores, labels)
    pos_above = np.r_[0, np.cumsum(pos)[:-1]]
    twice = int(np.sum(neg * (2 * pos_above + pos)))
    return twice / (2.0 * int(pos.sum()) * int(neg.sum()))


def confusion(pred_labels, labels):
    p = _binary(pred_labels)
    y = _binary(labels)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {y.size} labels")
    tp = int(np.sum((p == 1) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    return tp, fp, tn, fn


def balanced_accuracy(pred_labels, labels) -> float:
    tp, fp, tn, fn = confusion(pred_labels, labels)
    if tp + fn == 0 or tn + fp == 0:
        raise DegenerateInputError("balanced accuracy needs both classes among the labels")
    return 0.5 * (tp / (tp + fn) + tn / (tn + fp))


def f1(pred_labels, labels) -> float:
    tp, fp, tn, fn = confusion(pred_labels, labels)
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def threshold(probabilities, cut=THRESHOLD):
    return (np.asarray(probabilities, dtype=float) >= cut).astype(int)


def summarize(probabilities, labels) -> dict:
    pred = threshold(probabilities)
    return {
        "auc": auc(probabilities, labels),
        "balanced_accuracy": balanced_accuracy(pred, labels),
        "f1": f1(pred, labels),
    }
