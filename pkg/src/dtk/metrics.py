"""Ranking and threshold metrics, decile buckets and the max-bucket ensemble."""
from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.stats import rankdata

LOG_LOSS_CLIP = 1e-12


def _check_scored(scores, labels, need_both=True):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    y = y.astype(int)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if need_both and (y.min(initial=1) == y.max(initial=0) or len(y) == 0):
        raise ValueError("both classes must be present")
    return s, y


def roc_auc(scores, labels) -> float:
    """P(score+ > score-) + 0.5 P(tie), via the Mann-Whitney rank sum."""
    s, y = _check_scored(scores, labels)
    ranks = rankdata(s)
    n_pos = y.sum()
    n_neg = len(y) - n_pos
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _confusion_by_threshold(s, y):
    """Counts for "positive iff score >= t" at every distinct observed score.

    Returns thresholds (descending, first entry ``+inf`` = predict nothing)
    and the matching true/false positive counts.
    """
    order = np.argsort(-s, kind="stable")
    ss, yy = s[order], y[order]
    tp = np.cumsum(yy)
    fp = np.cumsum(1 - yy)
    last = np.r_[np.flatnonzero(ss[1:] != ss[:-1]), len(ss) - 1]
    thr = np.r_[np.inf, ss[last]]
    return thr, np.r_[0, tp[last]], np.r_[0, fp[last]]


def f_beta_curve(scores, labels, beta=1.0):
    s, y = _check_scored(scores, labels)
    if beta <= 0:
        raise ValueError("beta must be positive")
    thr, tp, fp = _confusion_by_threshold(s, y)
    fn = y.sum() - tp
    b2 = beta * beta
    den = (1 + b2) * tp + b2 * fn + fp
    f = np.where(den > 0, (1 + b2) * tp / np.where(den > 0, den, 1), 0.0)
    return thr, f


def max_f_beta(scores, labels, beta=1.0):
    """``(threshold, F_beta)`` maximising F_beta; ties go to the larger threshold."""
    thr, f = f_beta_curve(scores, labels, beta)
    i = int(np.argmax(f))  # thresholds descend, so the first max is the largest
    return float(thr[i]), float(f[i])


def max_min_per_class_accuracy(scores, labels):
    """``(threshold, value)`` maximising ``min(TPR, TNR)``; ties go to the larger threshold."""
    s, y = _check_scored(scores, labels)
    thr, tp, fp = _confusion_by_threshold(s, y)
    n_pos = y.sum()
    n_neg = len(y) - n_pos
    val = np.minimum(tp / n_pos, (n_neg - fp) / n_neg)
    i = int(np.argmax(val))
    return float(thr[i]), float(val[i])


def log_loss(scores, labels) -> float:
    s, y = _check_scored(scores, labels, need_both=False)
    p = np.clip(s, LOG_LOSS_CLIP, 1.0 - LOG_LOSS_CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def roc_points(scores, labels) -> pd.DataFrame:
    s, y = _check_scored(scores, labels)
    thr, tp, fp = _confusion_by_threshold(s, y)
    return pd.DataFrame({"threshold": thr, "tpr": tp / y.sum(), "fpr": fp / (len(y) - y.sum())})


def pr_points(scores, labels) -> pd.DataFrame:
    s, y = _check_scored(scores, labels)
    thr, tp, fp = _confusion_by_threshold(s, y)
    thr, tp, fp = thr[1:], tp[1:], fp[1:]
    return pd.DataFrame({"threshold": thr, "precision": tp / (tp + fp), "recall": tp / y.sum()})


def decile_bucket(scores, customer_ids=None, n_buckets=10) -> np.ndarray:
    """Rank buckets ``1..n_buckets``; the highest scores land in the top bucket.

    Equal scores are ordered by customer id (ascending id ranks lower), so
    buckets are deterministic and their sizes differ by at most one.
    """
    s = np.asarray(scores, dtype=float)
    n = len(s)
    if n < n_buckets:
        raise ValueError(f"need at least {n_buckets} customers, got {n}")
    ids = np.arange(n) if customer_ids is None else np.asarray(customer_ids)
    order = np.lexsort((ids, s))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    return rank * n_buckets // n + 1


def ensemble_max(*buckets) -> np.ndarray:
    """Element-wise maximum of the per-model buckets (GMV, BI, PD)."""
    if len(buckets) == 1 and isinstance(buckets[0], (list, tuple)):
        buckets = tuple(buckets[0])
    if len(buckets) != 3 or any(b is None for b in buckets):
        raise ValueError("ensemble needs the GMV, BI and PD buckets")
    arrs = [np.asarray(b) for b in buckets]
    if len({a.shape for a in arrs}) != 1:
        raise ValueError("bucket arrays differ in length")
    return np.maximum(np.maximum(arrs[0], arrs[1]), arrs[2])
