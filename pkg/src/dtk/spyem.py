"""Spy-based semi-supervised EM for positive/unlabeled data.

The golden set ``G`` holds known positives, the mixed set ``M`` starts all
negative.  Each iteration hides a random subset of ``G`` (the spies) inside
``M`` with label 0, trains a classifier on the remaining golden rows plus
``M' = G' + M`` with the current labels, picks the
cut-off that maximises F-beta of spies against the current negatives, and
relabels ``M``.  The loop stops once the share of flipped labels in ``M``
drops to ``theta`` or after ``max_iterations`` rounds.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .gbdt import GBDTClassifier, TrainConfig
from .metrics import max_f_beta

logger = logging.getLogger(__name__)

GOLDEN = "golden"
SILENT = "silent_sufferer"
NORMAL = "normal"
FALLBACK_CUTOFF = 0.5
MIN_GOLDEN = 20
CUTOFF_CRITERIA = ("pu_f1", "spy_f_beta")
TRACE_COLUMNS = ["iteration", "beta", "holdout_recall", "holdout_recall_fixed", "cutoff", "n_positive", "degenerate"]


def default_base_config() -> TrainConfig:
    return TrainConfig(n_trees=50, max_depth=3, learning_rate=0.1, min_samples_leaf=10, validation_fraction=0.0, seed=0)


@dataclass
class SpyEmConfig:
    spy_fraction: float = 0.15
    theta: float = 0.001
    max_iterations: int = 50
    holdout_fraction: float = 0.3
    cutoff_beta: float = 1.0
    cutoff_criterion: str = "pu_f1"
    base: TrainConfig = field(default_factory=default_base_config)
    seed: int = 7

    def __post_init__(self):
        if isinstance(self.base, dict):
            self.base = TrainConfig(**self.base)
        if not 0.0 < self.spy_fraction < 1.0:
            raise ValueError("spy_fraction must lie in (0, 1)")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")
        if self.cutoff_beta <= 0:
            raise ValueError("cutoff_beta must be positive")
        if self.cutoff_criterion not in CUTOFF_CRITERIA:
            raise ValueError(f"cutoff_criterion must be one of {CUTOFF_CRITERIA}, got {self.cutoff_criterion!r}")

    def to_dict(self):
        d = dict(self.__dict__)
        d["base"] = self.base.to_dict()
        return d


def label_change_rate(prev_labels, new_labels) -> float:
    a = np.asarray(prev_labels)
    b = np.asarray(new_labels)
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    if a.size == 0:
        return 0.0
    return float(np.mean(a != b))


def select_cutoff(scores, reference_labels, beta=1.0):
    """Max-F-beta threshold; ``(threshold, degenerate)``.

    With a single class among the reference labels the threshold falls back
    to 0.5 and ``degenerate`` is True.
    """
    y = np.asarray(reference_labels).astype(int)
    if y.size == 0 or y.min() == y.max():
        return FALLBACK_CUTOFF, True
    thr, _ = max_f_beta(scores, y, beta)
    return thr, False


def pu_f1_criterion(spy_scores, unlabeled_scores, beta=1.0):
    """``(thresholds, r^(1 + beta^2) / P(f = 1))`` over the distinct spy scores, descending.

    ``r`` is the share of spies at or above the threshold and ``P(f = 1)`` the
    share of the whole scored set (spies plus unlabeled rows) at or above it.
    At ``beta = 1`` the ratio equals precision * recall / P(y = 1), so it ranks
    thresholds like an F1 that needs no labeled negatives (Lee and Liu, 2003).
    Other ``beta`` rank by precision * recall^(beta^2), weighting recall as
    F-beta does.
    """
    sp = np.sort(np.asarray(spy_scores, dtype=float))
    allv = np.sort(np.r_[sp, np.asarray(unlabeled_scores, dtype=float)])
    thr = np.unique(sp)[::-1]
    r = (len(sp) - np.searchsorted(sp, thr, side="left")) / len(sp)
    pf = (len(allv) - np.searchsorted(allv, thr, side="left")) / len(allv)
    return thr, r ** (1.0 + beta * beta) / pf


def select_cutoff_pu(spy_scores, unlabeled_scores, beta=1.0):
    """Threshold maximising :func:`pu_f1_criterion`; ties go to the larger threshold."""
    if len(spy_scores) == 0:
        return FALLBACK_CUTOFF, True
    thr, crit = pu_f1_criterion(spy_scores, unlabeled_scores, beta)
    return float(thr[int(np.argmax(crit))]), False


@dataclass
class StepResult:
    labels: np.ndarray
    spy_labels: np.ndarray
    classifier: object
    cutoff: float
    degenerate: bool
    mixed_scores: np.ndarray
    spy_scores: np.ndarray


def spy_em_step(X_golden, X_mixed, labels, spies, base, beta=1.0, criterion="pu_f1") -> StepResult:
    """One EM round with a given spy subset (indices into ``X_golden``).

    The spies are mixed into ``M`` without their positive label, so
    ``M' = G' + M`` carries label 0 for spies and the current labels for
    ``M``, while the remaining golden rows keep label 1.  The classifier is
    trained on all of it and ``M'`` is scored.  The cut-off maximises the
    PU F1 criterion of spies within ``M'`` (``criterion="pu_f1"``) or the
    F-beta of spies against the current negatives of ``M`` (``"spy_f_beta"``).  Spy
    relabels are returned separately; the caller sends the spies back as 1.
    """
    spies = np.asarray(spies)
    rest = np.setdiff1d(np.arange(len(X_golden)), spies)
    Xs = X_golden[spies]
    X_train = np.vstack([X_golden[rest], Xs, X_mixed])
    y_train = np.r_[np.ones(len(rest)), np.zeros(len(spies)), labels].astype(int)
    clf = clone(base).fit(X_train, y_train)
    s_spy = clf.predict_proba(Xs)[:, 1]
    s_mix = clf.predict_proba(X_mixed)[:, 1]
    if criterion == "pu_f1":
        cutoff, degenerate = select_cutoff_pu(s_spy, s_mix, beta)
    elif criterion == "spy_f_beta":
        neg = labels == 0
        ref_scores = np.r_[s_spy, s_mix[neg]]
        ref_labels = np.r_[np.ones(len(s_spy)), np.zeros(neg.sum())]
        cutoff, degenerate = select_cutoff(ref_scores, ref_labels, beta)
    else:
        raise ValueError(f"unknown cutoff criterion {criterion!r}")
    return StepResult(
        labels=(s_mix >= cutoff).astype(int),
        spy_labels=(s_spy >= cutoff).astype(int),
        classifier=clf,
        cutoff=cutoff,
        degenerate=degenerate,
        mixed_scores=s_mix,
        spy_scores=s_spy,
    )


@dataclass
class SpyEmState:
    iteration: int
    labels: np.ndarray
    golden_index: np.ndarray
    holdout_index: np.ndarray
    spies: list
    mixed_index: list
    beta_history: list
    recall_history: list
    classifier: object
    cutoff: float
    trace: pd.DataFrame


class SpyEM(ClassifierMixin, BaseEstimator):
    """Positive/unlabeled classifier trained by the spy EM loop.

    ``fit(X, s)`` takes ``s = 1`` for golden-set rows and ``s = 0`` for the
    mixed population.  After fitting, ``labels_`` holds the final 0/1 label of
    every row (golden rows are always 1) and ``status_`` the
    golden/silent_sufferer/normal partition.

    Parameters mirror :class:`SpyEmConfig`; ``base_estimator`` defaults to a
    50-tree depth-3 :class:`~dtk.gbdt.GBDTClassifier`.
    """

    def __init__(
        self,
        base_estimator=None,
        spy_fraction=0.15,
        theta=0.001,
        max_iterations=50,
        holdout_fraction=0.3,
        cutoff_beta=1.0,
        cutoff_criterion="pu_f1",
        random_state=7,
    ):
        self.base_estimator = base_estimator
        self.spy_fraction = spy_fraction
        self.theta = theta
        self.max_iterations = max_iterations
        self.holdout_fraction = holdout_fraction
        self.cutoff_beta = cutoff_beta
        self.cutoff_criterion = cutoff_criterion
        self.random_state = random_state

    def _base(self):
        if self.base_estimator is not None:
            return self.base_estimator
        return default_base_config().estimator()

    def _as_array(self, X):
        if isinstance(X, pd.DataFrame):
            if hasattr(self, "feature_names_in_"):
                X = X[list(self.feature_names_in_)]
            X = X.to_numpy(dtype=float)
        return check_array(X, dtype=float, ensure_all_finite="allow-nan")

    def fit(self, X, s):
        if isinstance(X, pd.DataFrame):
            self.feature_names_in_ = np.asarray([str(c) for c in X.columns], dtype=object)
        elif hasattr(self, "feature_names_in_"):
            del self.feature_names_in_
        X = self._as_array(X)
        s = np.asarray(s).astype(int)
        if len(s) != len(X):
            raise ValueError("label vector length differs from X")
        SpyEmConfig(self.spy_fraction, self.theta, self.max_iterations, self.holdout_fraction, self.cutoff_beta, self.cutoff_criterion)
        gold = np.flatnonzero(s == 1)
        mix = np.flatnonzero(s == 0)
        if len(gold) < MIN_GOLDEN:
            raise ValueError(f"golden set needs at least {MIN_GOLDEN} rows, got {len(gold)}")
        rng = np.random.default_rng(self.random_state)
        perm = rng.permutation(len(gold))
        n_hold = int(round(self.holdout_fraction * len(gold)))
        hold_pos, train_pos = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
        XG, XH, XM = X[gold[train_pos]], X[gold[hold_pos]], X[mix]
        n_spies = max(1, int(round(self.spy_fraction * len(train_pos))))
        base = self._base()

        labels = np.zeros(len(mix), dtype=int)
        beta, k = 1.0, 0
        rows, spies_hist, mixed_hist, betas, recalls = [], [], [], [], []
        clf, cutoff = None, FALLBACK_CUTOFF
        while beta > self.theta and k < self.max_iterations:
            spies = np.sort(rng.choice(len(train_pos), size=n_spies, replace=False))
            if len(mix) == 0:
                beta, recall, recall_fixed, degenerate = 0.0, np.nan, np.nan, True
                new = labels
            else:
                step = spy_em_step(XG, XM, labels, spies, base, self.cutoff_beta, self.cutoff_criterion)
                clf, cutoff, degenerate = step.classifier, step.cutoff, step.degenerate
                new = step.labels
                beta = label_change_rate(labels, new)
                if len(XH):
                    sh = clf.predict_proba(XH)[:, 1]
                    recall, recall_fixed = float(np.mean(sh >= cutoff)), float(np.mean(sh >= FALLBACK_CUTOFF))
                else:
                    recall = recall_fixed = np.nan
            labels = new
            k += 1
            spies_hist.append(gold[train_pos[spies]])
            mixed_hist.append(mix.copy())
            betas.append(beta)
            recalls.append(recall)
            rows.append((k, beta, recall, recall_fixed, cutoff, int(labels.sum()), bool(degenerate)))
            logger.info("spy-em iteration %d: beta=%.5f recall=%s cutoff=%.4f", k, beta, recall, cutoff)

        self.classifier_ = clf
        self.cutoff_ = float(cutoff)
        self.n_iter_ = k
        self.converged_ = bool(beta <= self.theta)
        self.trace_ = pd.DataFrame(rows, columns=TRACE_COLUMNS)
        self.spy_history_ = spies_hist
        self.mixed_history_ = mixed_hist
        self.golden_index_ = gold[train_pos]
        self.holdout_index_ = gold[hold_pos]
        self.labels_ = np.ones(len(X), dtype=int)
        self.labels_[mix] = labels
        self.status_ = np.where(s == 1, GOLDEN, np.where(self.labels_ == 1, SILENT, NORMAL))
        if clf is not None:
            self.scores_ = clf.predict_proba(X)[:, 1]
        else:
            self.scores_ = np.where(s == 1, 1.0, 0.0)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "labels_")
        if self.classifier_ is None:
            raise ValueError("no classifier was trained (empty mixed set)")
        return self.classifier_.predict_proba(self._as_array(X))

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= self.cutoff_).astype(int)


def run_spy_em(golden_features, mixed_features, config: SpyEmConfig | None = None, base_estimator=None):
    """Run the loop on two feature frames (rows indexed by customer id).

    Returns ``(population, state)`` where ``population`` has columns
    ``customer_id, status, score`` and ``state`` holds the trace and
    per-iteration spy/mixed index history.
    """
    cfg = config or SpyEmConfig()
    if list(golden_features.columns) != list(mixed_features.columns):
        raise ValueError("golden and mixed features must share columns")
    X = pd.concat([golden_features, mixed_features])
    s = np.r_[np.ones(len(golden_features), int), np.zeros(len(mixed_features), int)]
    est = SpyEM(
        base_estimator if base_estimator is not None else cfg.base.estimator(),
        cfg.spy_fraction,
        cfg.theta,
        cfg.max_iterations,
        cfg.holdout_fraction,
        cfg.cutoff_beta,
        cfg.cutoff_criterion,
        cfg.seed,
    ).fit(X, s)
    ids = X.index.to_numpy()
    population = pd.DataFrame({"customer_id": ids, "status": est.status_, "score": est.scores_})
    state = SpyEmState(
        iteration=est.n_iter_,
        labels=est.labels_,
        golden_index=est.golden_index_,
        holdout_index=est.holdout_index_,
        spies=est.spy_history_,
        mixed_index=est.mixed_history_,
        beta_history=list(est.trace_["beta"]),
        recall_history=list(est.trace_["holdout_recall"]),
        classifier=est.classifier_,
        cutoff=est.cutoff_,
        trace=est.trace_,
    )
    return population, state


def evaluate_holdout(classifier, cutoff, holdout_features) -> float:
    """Share of held-out golden rows scored at or above ``cutoff``."""
    X = np.asarray(holdout_features, dtype=float)
    if len(X) == 0:
        raise ValueError("holdout set is empty")
    return float(np.mean(classifier.predict_proba(X)[:, 1] >= cutoff))
