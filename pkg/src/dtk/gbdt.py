"""Gradient-boosted decision trees for binary classification.

Log-loss boosting: trees are fit to the residuals ``y - p`` by exact greedy
variance-reduction splits, and each leaf takes the Newton step
``sum(r) / sum(p (1 - p))``.  Missing values (NaN) follow a per-split default
direction chosen by gain at training time.

The estimator follows the scikit-learn API, so it can be cloned, grid
searched and dropped into pipelines.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_array, check_is_fitted

FORMAT = "dtk-gbdt"
FORMAT_VERSION = 1
_EPS_GAIN = 1e-12


@dataclass
class TrainConfig:
    n_trees: int = 150
    max_depth: int = 5
    learning_rate: float = 0.1
    min_samples_leaf: int = 10
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")

    def estimator(self) -> "GBDTClassifier":
        return GBDTClassifier(
            n_trees=self.n_trees,
            max_depth=self.max_depth,
            learning_rate=self.learning_rate,
            min_samples_leaf=self.min_samples_leaf,
            validation_fraction=self.validation_fraction,
            random_state=self.seed,
        )

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return asdict(self)


class Tree:
    """Flat array representation of one regression tree.

    Node 0 is the root; ``feature[i] == -1`` marks a leaf.  Values ``x <=
    threshold`` go left; NaN goes left iff ``missing_left``.
    """

    def __init__(self):
        self.feature: list = []
        self.threshold: list = []
        self.missing_left: list = []
        self.left: list = []
        self.right: list = []
        self.value: list = []
        self.gain: list = []

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.missing_left.append(True)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.gain.append(0.0)
        return len(self.feature) - 1

    def freeze(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.missing_left = np.asarray(self.missing_left, dtype=bool)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=float)
        self.gain = np.asarray(self.gain, dtype=float)
        return self

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return node
            x = X[rows, np.where(inner, feat, 0)]
            go_left = np.where(np.isnan(x), self.missing_left[node], x <= self.threshold[node])
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self, names, i=0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {
            "feature": names[self.feature[i]],
            "threshold": float(self.threshold[i]),
            "missing": "left" if self.missing_left[i] else "right",
            "gain": float(self.gain[i]),
            "left": self.to_dict(names, self.left[i]),
            "right": self.to_dict(names, self.right[i]),
        }

    @classmethod
    def from_dict(cls, doc, names) -> "Tree":
        tree = cls()
        index = {n: j for j, n in enumerate(names)}

        def build(d):
            i = tree.add_node()
            if "leaf" in d:
                tree.value[i] = float(d["leaf"])
                return i
            tree.feature[i] = index[d["feature"]]
            tree.threshold[i] = float(d["threshold"])
            tree.missing_left[i] = d.get("missing", "left") == "left"
            tree.gain[i] = float(d.get("gain", 0.0))
            tree.left[i] = build(d["left"])
            tree.right[i] = build(d["right"])
            return i

        build(doc)
        return tree.freeze()


def _log_loss(y, f):
    # mean of log(1 + e^f) - y f, stable
    return float(np.mean(np.logaddexp(0.0, f) - y * f))


def find_best_split(Xt, idx2d, r, min_samples_leaf):
    """Best split of one node.

    ``Xt`` is the feature-major data (features x samples); row ``j`` of
    ``idx2d`` lists the node's samples sorted by feature ``j`` with NaNs last.
    Returns ``(gain, feature, threshold, missing_left, position)`` or ``None``.
    Ties go to the lowest feature index, then the lowest threshold, then to
    sending missing values left.
    """
    n_feat, n = idx2d.shape
    if n < 2 * min_samples_leaf:
        return None
    V = Xt[np.arange(n_feat)[:, None], idx2d]
    R = r[idx2d]
    nan = np.isnan(V)
    n_miss = nan.sum(axis=1)
    n_valid = n - n_miss
    Rv = np.where(nan, 0.0, R)
    cR = np.cumsum(Rv, axis=1)[:, :-1]
    total = float(R[0].sum())
    s_miss = total - Rv.sum(axis=1)

    pos = np.arange(n - 1)[None, :]
    with np.errstate(invalid="ignore"):
        distinct = V[:, 1:] > V[:, :-1]
    valid = (pos <= (n_valid - 2)[:, None]) & distinct
    if not valid.any():
        return None
    n_left = (pos + 1).astype(float)
    base = total * total / n

    best = None
    for miss_left in (True, False):
        if miss_left:
            sl = cR + s_miss[:, None]
            nl = n_left + n_miss[:, None]
        else:
            if not n_miss.any():
                break
            sl = cR
            nl = np.broadcast_to(n_left, cR.shape)
        nr = n - nl
        ok = valid & (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = sl * sl / nl + (total - sl) ** 2 / nr - base
        gain = np.where(ok, gain, -np.inf)
        # for features without missing values the two options coincide
        if not miss_left:
            gain[n_miss == 0] = -np.inf
        col = np.argmax(gain, axis=1)
        g = gain[np.arange(n_feat), col]
        for j in range(n_feat):
            if not np.isfinite(g[j]):
                continue
            cand = (g[j], j, int(col[j]), miss_left)
            if best is None or cand[0] > best[0] or (
                cand[0] == best[0] and (cand[1], cand[2]) < (best[1], best[2])
            ):
                best = cand
    if best is None or best[0] <= _EPS_GAIN * max(1.0, abs(base)):
        return None
    gain, j, i, miss_left = best
    lo, hi = V[j, i], V[j, i + 1]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return float(gain), int(j), float(thr), bool(miss_left), i


class GBDTClassifier(ClassifierMixin, BaseEstimator):
    """Binary gradient-boosted trees with log loss.

    Parameters
    ----------
    n_trees : int
        Number of boosting rounds.
    max_depth : int
        Maximum depth of every tree.
    learning_rate : float
        Shrinkage applied to each tree's contribution.
    min_samples_leaf : int
        Minimum number of training rows in any leaf.
    validation_fraction : float
        Share of rows held out (stratified by label) for the validation loss
        curve.  ``0`` trains on everything.
    random_state : int
        Seed of the validation split.

    Attributes
    ----------
    init_score_ : float
        Log-odds of the training positive rate.
    trees_ : list of Tree
    feature_names_in_ : ndarray of str
    loss_curve_ : ndarray of shape (n_trees, 2)
        Train and validation log loss after each tree (validation is NaN
        without a holdout).
    """

    def __init__(
        self,
        n_trees=150,
        max_depth=5,
        learning_rate=0.1,
        min_samples_leaf=10,
        validation_fraction=0.2,
        random_state=0,
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            self.n_trees,
            self.max_depth,
            self.learning_rate,
            self.min_samples_leaf,
            self.validation_fraction,
            self.random_state,
        )

    def fit(self, X, y):
        cfg = self._config()
        names = _feature_names(X)
        X = check_array(_values(X), dtype=float, ensure_all_finite="allow-nan")
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"{len(y)} labels for {len(X)} rows")
        y = y.astype(float)
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("labels must be 0/1")
        if y.min() == y.max():
            raise ValueError("training labels contain a single class")
        self.feature_names_in_ = np.asarray(names if names is not None else [f"x{j}" for j in range(X.shape[1])], dtype=object)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])

        if cfg.validation_fraction > 0:
            tr, va = train_test_split(
                np.arange(len(y)), test_size=cfg.validation_fraction, stratify=y, random_state=cfg.seed
            )
            tr, va = np.sort(tr), np.sort(va)
        else:
            tr, va = np.arange(len(y)), np.arange(0)
        self.train_index_, self.valid_index_ = tr, va
        Xtr, ytr = X[tr], y[tr]
        if ytr.min() == ytr.max():
            raise ValueError("training split contains a single class")
        Xva, yva = X[va], y[va]

        p0 = ytr.mean()
        self.init_score_ = float(np.log(p0 / (1.0 - p0)))
        F = np.full(len(ytr), self.init_score_)
        Fva = np.full(len(yva), self.init_score_)
        Xt = np.ascontiguousarray(Xtr.T)
        root_idx = np.argsort(Xt, axis=1, kind="stable")

        self.trees_ = []
        curve = []
        prev = _log_loss(ytr, F)
        for _ in range(cfg.n_trees):
            p = expit(F)
            tree = self._grow(Xt, root_idx, ytr, F, ytr - p, p * (1.0 - p))
            self.trees_.append(tree)
            F = F + cfg.learning_rate * tree.predict(Xtr)
            loss = _log_loss(ytr, F)
            if loss > prev + 1e-12 * max(1.0, prev):
                raise RuntimeError(f"training log loss increased: {prev} -> {loss}")
            prev = loss
            if len(va):
                Fva = Fva + cfg.learning_rate * tree.predict(Xva)
                curve.append((loss, _log_loss(yva, Fva)))
            else:
                curve.append((loss, np.nan))
        self.loss_curve_ = np.asarray(curve)
        self._set_importance()
        return self

    def _grow(self, Xt, root_idx, y, F, r, h):
        tree = Tree()
        lr = self.learning_rate
        stack = [(tree.add_node(), root_idx, 0)]
        n_total = Xt.shape[1]
        while stack:
            node, idx2d, depth = stack.pop()
            split = None
            if depth < self.max_depth:
                split = find_best_split(Xt, idx2d, r, self.min_samples_leaf)
            if split is None:
                rows = idx2d[0]
                tree.value[node] = _leaf_value(y[rows], F[rows], r[rows], h[rows], lr)
                continue
            gain, j, thr, miss_left, _ = split
            x = Xt[j]
            go_left = np.zeros(n_total, dtype=bool)
            rows = idx2d[0]
            xr = x[rows]
            go_left[rows] = np.where(np.isnan(xr), miss_left, xr <= thr)
            sel = go_left[idx2d]
            n_left = int(sel[0].sum())
            left_idx = idx2d[sel].reshape(idx2d.shape[0], n_left)
            right_idx = idx2d[~sel].reshape(idx2d.shape[0], idx2d.shape[1] - n_left)
            tree.feature[node] = j
            tree.threshold[node] = thr
            tree.missing_left[node] = miss_left
            tree.gain[node] = gain
            li, ri = tree.add_node(), tree.add_node()
            tree.left[node], tree.right[node] = li, ri
            # right pushed first so the left subtree is numbered first
            stack.append((ri, right_idx, depth + 1))
            stack.append((li, left_idx, depth + 1))
        return tree.freeze()

    def _set_importance(self):
        gains = np.zeros(self.n_features_in_)
        for t in self.trees_:
            inner = t.feature >= 0
            np.add.at(gains, t.feature[inner], t.gain[inner])
        self.split_gain_ = gains
        top = gains.max()
        self.feature_importances_ = gains / top if top > 0 else gains

    def _check_X(self, X):
        check_is_fitted(self, "trees_")
        if isinstance(X, pd.DataFrame):
            missing = [c for c in self.feature_names_in_ if c not in X.columns]
            if missing:
                raise ValueError(f"missing feature columns: {missing}")
            X = X[list(self.feature_names_in_)]
        elif hasattr(X, "model_input"):
            return self._check_X(X.model_input())
        X = check_array(_values(X), dtype=float, ensure_all_finite="allow-nan")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def decision_function(self, X, n_trees=None):
        """Raw score ``F0 + lr * sum(tree outputs)`` using the first ``n_trees`` trees."""
        X = self._check_X(X)
        F = np.full(len(X), self.init_score_)
        for t in self.trees_[:n_trees]:
            F += self.learning_rate * t.predict(X)
        return F

    def predict_proba(self, X, n_trees=None):
        p = expit(self.decision_function(X, n_trees))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def variable_importance(self):
        """``(name, importance)`` pairs, descending, ties broken by name."""
        check_is_fitted(self, "trees_")
        pairs = [(str(n), float(v)) for n, v in zip(self.feature_names_in_, self.feature_importances_)]
        return sorted(pairs, key=lambda kv: (-kv[1], kv[0]))

    # -- persistence -------------------------------------------------------
    def to_dict(self) -> dict:
        check_is_fitted(self, "trees_")
        names = [str(n) for n in self.feature_names_in_]
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "params": self.get_params(),
            "initial_score": self.init_score_,
            "learning_rate": float(self.learning_rate),
            "features": names,
            "trees": [t.to_dict(names) for t in self.trees_],
            "importance": dict(self.variable_importance()),
            "loss_curve": [[float(a), None if np.isnan(b) else float(b)] for a, b in self.loss_curve_],
        }

    @classmethod
    def from_dict(cls, doc) -> "GBDTClassifier":
        if doc.get("format") != FORMAT:
            raise ValueError("not a dtk-gbdt model document")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        model = cls(**doc["params"])
        names = list(doc["features"])
        model.feature_names_in_ = np.asarray(names, dtype=object)
        model.n_features_in_ = len(names)
        model.classes_ = np.array([0, 1])
        model.init_score_ = float(doc["initial_score"])
        model.learning_rate = float(doc["learning_rate"])
        model.trees_ = [Tree.from_dict(t, names) for t in doc["trees"]]
        model.loss_curve_ = np.asarray([[a, np.nan if b is None else b] for a, b in doc["loss_curve"]], dtype=float)
        model._set_importance()
        return model

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "GBDTClassifier":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _leaf_value(y, F, r, h, lr):
    den = h.sum()
    if den <= 0:
        return 0.0
    v = r.sum() / den
    # keep the damped Newton step from raising this leaf's loss
    before = np.sum(np.logaddexp(0.0, F) - y * F)
    for _ in range(60):
        Fn = F + lr * v
        if np.sum(np.logaddexp(0.0, Fn) - y * Fn) <= before:
            return float(v)
        v *= 0.5
    return 0.0


def _feature_names(X):
    if isinstance(X, pd.DataFrame):
        return [str(c) for c in X.columns]
    if hasattr(X, "names") and hasattr(X, "model_input"):
        return list(X.names)
    return None


def _values(X):
    if hasattr(X, "model_input"):
        return X.model_input().to_numpy()
    if isinstance(X, pd.DataFrame):
        return X.to_numpy(dtype=float)
    return X


# ---------------------------------------------------------------------------
# Functional interface


def train(matrix, labels, config: TrainConfig | None = None) -> GBDTClassifier:
    if len(np.asarray(labels)) == 0:
        raise ValueError("empty training matrix")
    return (config or TrainConfig()).estimator().fit(matrix, labels)


def predict_proba(model: GBDTClassifier, matrix) -> np.ndarray:
    return model.predict_proba(matrix)[:, 1]


def variable_importance(model: GBDTClassifier):
    return model.variable_importance()


def loss_curve(model: GBDTClassifier) -> np.ndarray:
    return model.loss_curve_


def select_top_k(matrix, labels, rough_config: TrainConfig | None = None, k: int = 13) -> list:
    """Train a rough model and keep the ``k`` most important features."""
    names = _feature_names(matrix)
    n_feat = len(names) if names is not None else np.asarray(matrix).shape[1]
    if n_feat < k:
        raise ValueError(f"need at least {k} candidate features, got {n_feat}")
    cfg = rough_config or TrainConfig(n_trees=200, max_depth=5)
    model = train(matrix, labels, cfg)
    return [name for name, _ in model.variable_importance()[:k]]
