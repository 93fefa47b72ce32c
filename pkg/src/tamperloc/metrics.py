"""ROC AUC, equal-error-rate threshold and F1 for detection and localization scores."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _prepare(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("both classes must be present")
    return scores, labels


def auc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg), ties counted as one half."""
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def eer_threshold(scores, labels) -> float:
    """Threshold minimising |FPR - FNR| over midpoints of sorted unique scores and +-inf.

    A sample is predicted positive when its score is strictly above the
    threshold. Ties go to the smaller threshold.
    """
    scores, labels = _prepare(scores, labels)
    uniq = np.unique(scores)
    candidates = np.concatenate([[-np.inf], (uniq[:-1] + uniq[1:]) / 2.0, [np.inf]])
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    # positives/negatives with score <= each unique value
    pos_le = np.searchsorted(np.sort(scores[labels]), uniq, side="right")
    neg_le = np.searchsorted(np.sort(scores[~labels]), uniq, side="right")
    # candidate c sits just above uniq[c-1]: everything <= uniq[c-1] is predicted negative
    fn = np.concatenate([[0], pos_le])
    tn = np.concatenate([[0], neg_le])
    fnr = fn / n_pos
    fpr = (n_neg - tn) / n_neg
    gap = np.abs(fpr - fnr)
    return float(candidates[int(np.argmin(gap))])


def f1_at_threshold(scores, labels, threshold: float) -> float:
    """2TP / (2TP + FP + FN) with positives = scores > threshold; 0 if undefined."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    pred = scores > threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def has_both_classes(labels) -> bool:
    labels = np.asarray(labels).ravel()
    return bool(labels.any() and not labels.all())
