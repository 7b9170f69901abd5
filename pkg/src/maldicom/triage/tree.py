"""CART decision tree (Gini) and a bagged random forest, written from scratch.

Trees are stored as flat arrays so prediction is a vectorised walk: one
numpy step per tree level instead of one Python call per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..errors import DegenerateData, WidthMismatch

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray      # split feature per node, LEAF for leaves
    threshold: np.ndarray    # go left when x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray        # (n_nodes, n_classes) class distribution
    n_samples: np.ndarray
    impurity: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def max_depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=int)
        for i in range(self.node_count):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.intp)
        active = np.arange(len(X))
        while active.size:
            cur = node[active]
            feat = self.feature[cur]
            inner = feat != LEAF
            active, cur, feat = active[inner], cur[inner], feat[inner]
            if not active.size:
                break
            go_left = X[active, feat] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def feature_importances(self, n_features: int) -> np.ndarray:
        imp = np.zeros(n_features)
        for i in np.flatnonzero(self.feature != LEAF):
            l, r = self.left[i], self.right[i]
            imp[self.feature[i]] += (
                self.n_samples[i] * self.impurity[i]
                - self.n_samples[l] * self.impurity[l]
                - self.n_samples[r] * self.impurity[r]
            )
        total = imp.sum()
        return imp / total if total > 0 else imp

    def to_state(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_state(cls, state: dict) -> "Tree":
        ints = ("feature", "left", "right", "n_samples")
        return cls(**{k: np.asarray(v, dtype=np.intp if k in ints else np.float64) for k, v in state.items()})


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    return 1.0 - float((counts.astype(np.float64) ** 2).sum()) / (n * n)


@numba.njit(cache=True, nogil=True)
def _best_split(X, y, idx, features, n_classes):
    """Best Gini split of the rows ``idx`` over ``features`` (scanned in the given order).

    Returns ``(feature, threshold, score)``; feature is -1 when every
    candidate is constant.  ``score = sum_k nL_k^2 / nL + sum_k nR_k^2 / nR``
    is maximised, which minimises the weighted child Gini impurity.  Ties
    keep the earlier feature and, within a feature, the lower threshold.
    """
    n = idx.shape[0]
    total = np.zeros(n_classes, dtype=np.int64)
    for i in range(n):
        total[y[idx[i]]] += 1
    best_f, best_thr, best_score = -1, 0.0, -np.inf
    xs = np.empty(n)
    left = np.zeros(n_classes, dtype=np.int64)
    for f in features:
        for i in range(n):
            xs[i] = X[idx[i], f]
        order = np.argsort(xs, kind="mergesort")
        left[:] = 0
        sq_left = 0
        sq_right = 0
        for c in range(n_classes):
            sq_right += total[c] * total[c]
        for i in range(n - 1):
            c = y[idx[order[i]]]
            sq_left += 2 * left[c] + 1
            sq_right -= 2 * (total[c] - left[c]) - 1
            left[c] += 1
            lo = xs[order[i]]
            hi = xs[order[i + 1]]
            if not lo < hi:
                continue
            n_left = i + 1.0
            score = sq_left / n_left + sq_right / (n - n_left)
            if score > best_score:
                thr = lo + (hi - lo) / 2.0
                if not (lo <= thr and thr < hi):
                    thr = lo
                best_f, best_thr, best_score = f, thr, score
    return best_f, best_thr, best_score


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    max_depth=None,
    min_samples_split: int = 2,
    max_features=None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow a CART tree on integer-encoded labels ``y``.

    With ``max_features`` set, each node scores a random feature subset
    first and falls back to the remaining features only if none of the
    subset can split.  Candidates are always scanned in feature-index order
    so ties resolve to the lowest index.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.intp)
    n_features = X.shape[1]
    if max_features is not None and max_features < n_features and rng is None:
        raise ValueError("a random generator is required when max_features < n_features")

    feature, threshold, left, right, value, n_samples, impurity = [], [], [], [], [], [], []

    def new_node(idx: np.ndarray) -> int:
        counts = np.bincount(y[idx], minlength=n_classes)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(counts / counts.sum())
        n_samples.append(len(idx))
        impurity.append(_gini(counts))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(X))), np.arange(len(X)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if impurity[node] <= 0.0 or len(idx) < min_samples_split:
            continue
        if max_depth is not None and depth >= max_depth:
            continue

        if max_features is None or max_features >= n_features:
            groups = [np.arange(n_features)]
        else:
            drawn = rng.choice(n_features, size=max_features, replace=False)
            rest = np.setdiff1d(np.arange(n_features), drawn)
            groups = [np.sort(drawn), rest]

        f = -1
        for group in groups:
            f, thr, _ = _best_split(X, y, idx, group, n_classes)
            if f >= 0:
                break
        if f < 0:
            continue

        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.intp),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.intp),
        right=np.asarray(right, dtype=np.intp),
        value=np.asarray(value, dtype=np.float64),
        n_samples=np.asarray(n_samples, dtype=np.intp),
        impurity=np.asarray(impurity, dtype=np.float64),
    )


def _encode(X, y):
    X, y = check_X_y(X, y, dtype=np.float64)
    classes, y_enc = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise DegenerateData(f"need at least two classes, got {list(classes)}")
    return X, classes, y_enc.astype(np.intp)


def _check_width(est, X) -> np.ndarray:
    check_is_fitted(est)
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != est.n_features_in_:
        raise WidthMismatch(f"model was fitted on {est.n_features_in_} features, got {X.shape[1]}")
    return X


class DecisionTreeClassifier(ClassifierMixin, BaseEstimator):
    def __init__(self, max_depth=None, min_samples_split=2):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split

    def fit(self, X, y):
        X, self.classes_, y_enc = _encode(X, y)
        self.n_features_in_ = X.shape[1]
        self.tree_ = grow_tree(X, y_enc, len(self.classes_), self.max_depth, self.min_samples_split)
        self.feature_importances_ = self.tree_.feature_importances(self.n_features_in_)
        return self

    def predict_proba(self, X):
        return self.tree_.predict_proba(_check_width(self, X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def get_depth(self) -> int:
        check_is_fitted(self)
        return self.tree_.max_depth


def resolve_max_features(max_features, n_features: int) -> int:
    if max_features is None:
        return n_features
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    if max_features == "log2":
        return max(1, math.ceil(math.log2(n_features)))
    if isinstance(max_features, float):
        return max(1, min(n_features, math.ceil(max_features * n_features)))
    return max(1, min(n_features, int(max_features)))


def _fit_one(X, y_enc, n_classes, seed_seq, max_depth, min_samples_split, max_features, bootstrap):
    rng = np.random.default_rng(seed_seq)
    idx = rng.integers(0, len(X), len(X)) if bootstrap else np.arange(len(X))
    return grow_tree(X[idx], y_enc[idx], n_classes, max_depth, min_samples_split, max_features, rng)


class RandomForestClassifier(ClassifierMixin, BaseEstimator):
    """Bagged CART trees with a fresh random feature subset at every split.

    Tree ``i`` draws its bootstrap sample and feature subsets from the
    ``i``-th child of ``SeedSequence(random_state)``, so the fitted forest
    does not depend on ``n_jobs``.
    """

    def __init__(
        self,
        n_estimators=100,
        max_depth=None,
        min_samples_split=2,
        max_features="sqrt",
        bootstrap=True,
        random_state=None,
        n_jobs=None,
    ):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _seeds(self):
        return np.random.SeedSequence(self.random_state).spawn(self.n_estimators)

    def fit(self, X, y):
        X, self.classes_, y_enc = _encode(X, y)
        self.n_features_in_ = X.shape[1]
        self.max_features_ = resolve_max_features(self.max_features, self.n_features_in_)
        self.n_train_ = len(X)
        self.estimators_ = Parallel(n_jobs=self.n_jobs)(
            delayed(_fit_one)(
                X, y_enc, len(self.classes_), s, self.max_depth, self.min_samples_split,
                self.max_features_, self.bootstrap,
            )
            for s in self._seeds()
        )
        self.feature_importances_ = np.mean(
            [t.feature_importances(self.n_features_in_) for t in self.estimators_], axis=0
        )
        return self

    def bootstrap_indices(self, i: int) -> np.ndarray:
        """Training rows seen by tree ``i`` (regenerated from its seed)."""
        check_is_fitted(self)
        rng = np.random.default_rng(self._seeds()[i])
        if not self.bootstrap:
            return np.arange(self.n_train_)
        return rng.integers(0, self.n_train_, self.n_train_)

    def predict_proba(self, X):
        X = _check_width(self, X)
        proba = np.zeros((len(X), len(self.classes_)))
        for t in self.estimators_:
            proba += t.predict_proba(X)
        return proba / len(self.estimators_)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
