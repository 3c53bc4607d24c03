"""Ranking metrics: average precision, mAP, and recovery quality of pseudo-labels."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import EvaluationError

log = logging.getLogger(__name__)


def rank_order(scores, ids=None) -> np.ndarray:
    """Indices sorted by score descending; ties fall back to ascending image id."""
    scores = np.asarray(scores, dtype=np.float64)
    keys = np.arange(len(scores)) if ids is None else np.asarray(ids)
    # lexsort: last key is primary
    return np.lexsort((keys, -scores))


def average_precision(scores, relevance, ids=None) -> float:
    """Mean of precision@k taken at the rank of every relevant item.

    Raises :class:`EvaluationError` when nothing is relevant.
    """
    rel = np.asarray(relevance).astype(bool)
    if rel.shape != np.shape(scores):
        raise EvaluationError("scores and relevance differ in length")
    n_pos = int(rel.sum())
    if n_pos == 0:
        raise EvaluationError("average precision undefined: no relevant items")
    hits = rel[rank_order(scores, ids)]
    cum = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    return float(np.sum((cum / ranks)[hits]) / n_pos)


def per_class_ap(scores: np.ndarray, labels: np.ndarray, ids=None) -> list[float | None]:
    """AP per column; classes without a positive are ``None`` and logged."""
    out: list[float | None] = []
    for c in range(labels.shape[1]):
        if labels[:, c].sum() == 0:
            log.warning("class %d has no positives in the evaluation split; excluded from mAP", c)
            out.append(None)
        else:
            out.append(average_precision(scores[:, c], labels[:, c], ids))
    return out


def mean_average_precision(aps) -> float:
    """Unweighted mean over the classes whose AP is defined (not ``None``)."""
    vals = [a for a in aps if a is not None]
    if not vals:
        raise EvaluationError("mAP undefined: every class was excluded")
    return float(sum(vals) / len(vals))


def random_ranking_map(labels: np.ndarray) -> float:
    """Expected mAP of a uniformly random ranking on ``labels`` ([N, C] in {0, 1}).

    Per class with ``r`` positives out of ``n`` the expected AP is
    ``(H_n + (r - 1)(n - H_n)/(n - 1)) / n``: the prevalence ``r / n`` plus a
    small finite-sample excess from the first relevant hit. Classes with no
    positive are skipped, as in ``per_class_ap``.
    """
    labels = np.asarray(labels) == 1
    n = labels.shape[0]
    h = float(np.sum(1.0 / np.arange(1, n + 1)))
    vals = []
    for r in labels.sum(axis=0):
        if r == 0:
            continue
        vals.append(1.0 if n == 1 else (h + (r - 1) * (n - h) / (n - 1)) / n)
    return mean_average_precision(vals)


def roc_auc(scores, labels) -> float | None:
    """Mann-Whitney AUC with average ranks for ties; ``None`` if either class is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class RecoveryQuality:
    auc: float | None
    precision_at_tau: float | None
    tau: float
    n_unknown: int


def recovery_quality(pseudo: np.ndarray, full: np.ndarray, observed: np.ndarray, tau: float = 0.5) -> RecoveryQuality:
    """Score recovered labels on the entries that were hidden during training."""
    hidden = np.asarray(observed) == -1
    n = int(hidden.sum())
    if n == 0:
        return RecoveryQuality(None, None, tau, 0)
    s = np.asarray(pseudo, dtype=np.float64)[hidden]
    y = np.asarray(full)[hidden].astype(bool)
    flagged = s >= tau
    prec = float(y[flagged].mean()) if flagged.any() else None
    return RecoveryQuality(roc_auc(s, y), prec, tau, n)


def write_ap_csv(path: str | os.PathLike, aps, labels: np.ndarray) -> None:
    """Per-class dump with columns ``class,ap,num_pos``; undefined AP is left blank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "ap", "num_pos"])
        for c, ap in enumerate(aps):
            w.writerow([c, "" if ap is None else repr(ap), int(labels[:, c].sum())])
