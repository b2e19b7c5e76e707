"""Deterministic evaluation metrics.

Definitions used throughout:

* accuracy: exact-match fraction of predicted class indices;
* ROC-AUC: Mann-Whitney rank statistic with midranks for ties; for
  multi-label targets, the unweighted mean over labels that contain both
  classes;
* RMSE: root mean squared error;
* HITS@K: fraction of positive pairs scored strictly above the K-th
  largest negative score (shared negative pool).
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape:
        raise DataError(f"accuracy: shapes {predicted.shape} vs {labels.shape}")
    if predicted.size == 0:
        raise DataError("accuracy: empty input")
    return float(np.mean(predicted == labels))


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size != labels.size or scores.size == 0:
        raise DataError("roc_auc: inputs must be equal-length and non-empty")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("roc_auc: needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def multilabel_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    scores = np.atleast_2d(scores)
    labels = np.atleast_2d(labels)
    if scores.shape != labels.shape:
        raise DataError(f"multilabel_auc: shapes {scores.shape} vs {labels.shape}")
    per_label = []
    for j in range(labels.shape[1]):
        col = labels[:, j]
        if col.min() == col.max():
            continue  # degenerate label: AUC undefined, skip
        per_label.append(roc_auc(scores[:, j], col))
    if not per_label:
        raise DataError("multilabel_auc: no label with both classes present")
    return float(np.mean(per_label))


def rmse(predicted: np.ndarray, targets: np.ndarray) -> float:
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if predicted.shape != targets.shape or predicted.size == 0:
        raise DataError("rmse: inputs must be equal-length and non-empty")
    return float(np.sqrt(np.mean((predicted - targets) ** 2)))


def hits_at_k(pos_scores: np.ndarray, neg_scores: np.ndarray, k: int) -> float:
    pos_scores = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg_scores = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos_scores.size == 0:
        raise DataError("hits_at_k: no positive scores")
    if k < 1 or k > neg_scores.size:
        raise DataError(f"hits_at_k: K={k} outside [1, {neg_scores.size}]")
    kth_best_negative = np.sort(neg_scores)[-k]
    return float(np.mean(pos_scores > kth_best_negative))
