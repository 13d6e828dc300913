"""Ranking and classification metrics."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import LengthMismatch, SingleClass


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative.

    Ties count one half (the Mann-Whitney convention), computed from
    midranks in O(n log n).
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.size} scores vs {labels.size} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC-AUC needs both classes")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ovr_macro_auc(scores, labels, classes=(0, 1, 2)) -> float:
    """Macro one-vs-rest AUC of a single latent score for ordinal labels.

    Class ``c`` is scored by closeness of the latent value to ``c``.
    Classes missing from ``labels`` (or covering all of it) are skipped.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    aucs = []
    for c in classes:
        member = labels == c
        if member.all() or not member.any():
            continue
        aucs.append(roc_auc(-np.abs(scores - c), member.astype(int)))
    if len(aucs) < 2:
        raise SingleClass("one-vs-rest AUC needs at least two classes present")
    return float(np.mean(aucs))


def per_class_f1(preds, labels, classes) -> np.ndarray:
    preds = np.asarray(preds).ravel()
    labels = np.asarray(labels).ravel()
    if preds.shape != labels.shape:
        raise LengthMismatch(f"{preds.size} predictions vs {labels.size} labels")
    out = np.zeros(len(classes))
    for i, c in enumerate(classes):
        tp = np.count_nonzero((preds == c) & (labels == c))
        denom = np.count_nonzero(preds == c) + np.count_nonzero(labels == c)
        out[i] = 2.0 * tp / denom if denom else 0.0
    return out


def macro_f1(preds, labels, classes=None) -> float:
    """Unweighted mean of per-class F1 over ``classes``.

    A class absent from both ``preds`` and ``labels`` contributes 0.
    """
    if classes is None:
        classes = np.union1d(np.asarray(preds).ravel(), np.asarray(labels).ravel())
    classes = list(classes)
    if not classes:
        raise ValueError("classes must be nonempty")
    return float(per_class_f1(preds, labels, classes).mean())
