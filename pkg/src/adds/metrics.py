"""Multi-label ranking metrics: per-class average precision, mAP, and F1@k."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    map: float
    f1_at: dict  # k -> F1 score
    per_class_ap: dict  # class index -> AP (classes with >= 1 positive)
    skipped_classes: list  # classes with no positive, excluded from mAP
    n_samples: int


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP of one class: mean precision at the rank of each positive.

    Ranking is by descending score; ties break by ascending sample index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.lexsort((np.arange(scores.size), -scores))
    ranked = labels[order]
    pos_ranks = np.flatnonzero(ranked == 1)
    if pos_ranks.size == 0:
        raise ValueError("class has no positive instance")
    hits = np.arange(1, pos_ranks.size + 1)
    precision_at_pos = hits / (pos_ranks + 1)
    return float(precision_at_pos.mean())


def mean_average_precision(scores: np.ndarray, labels: np.ndarray):
    """mAP over classes with at least one positive.

    ``scores`` and ``labels`` are n_images x n_classes. Returns
    (mAP, {class: AP}, [skipped classes]).
    """
    scores = np.atleast_2d(scores)
    labels = np.atleast_2d(labels)
    per_class = {}
    skipped = []
    for c in range(labels.shape[1]):
        if labels[:, c].sum() == 0:
            skipped.append(c)
            continue
        per_class[c] = average_precision(scores[:, c], labels[:, c])
    if not per_class:
        return 0.0, per_class, skipped
    return float(np.mean(list(per_class.values()))), per_class, skipped


def top_k_predictions(scores: np.ndarray, k: int) -> np.ndarray:
    """Binary matrix where each image predicts exactly its top-k classes.

    Ties break by ascending class index.
    """
    scores = np.atleast_2d(scores)
    n, c = scores.shape
    k = min(k, c)
    pred = np.zeros((n, c), dtype=np.int8)
    for i in range(n):
        order = np.lexsort((np.arange(c), -scores[i]))
        pred[i, order[:k]] = 1
    return pred


def f1_at_k(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Micro-averaged F1 when each image predicts its k highest-scored labels."""
    labels = np.atleast_2d(labels)
    pred = top_k_predictions(scores, k)
    tp = int((pred & (labels == 1)).sum())
    n_pred = int(pred.sum())
    n_true = int((labels == 1).sum())
    if n_pred == 0 or n_true == 0 or tp == 0:
        return 0.0
    precision = tp / n_pred
    recall = tp / n_true
    return 2.0 * precision * recall / (precision + recall)


def metrics_report(scores, labels, ks=(3, 5)) -> MetricsReport:
    scores = np.atleast_2d(scores)
    labels = np.atleast_2d(labels)
    mAP, per_class, skipped = mean_average_precision(scores, labels)
    return MetricsReport(
        map=mAP,
        f1_at={k: f1_at_k(scores, labels, k) for k in ks},
        per_class_ap=per_class,
        skipped_classes=skipped,
        n_samples=scores.shape[0],
    )
