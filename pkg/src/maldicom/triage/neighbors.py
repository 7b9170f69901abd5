from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .tree import _check_width, _encode

_CHUNK = 512


def k_smallest(d: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the ``k`` smallest entries per row, ordered by (value, index).

    Same result as a stable full argsort truncated to ``k`` columns, at
    partition cost.
    """
    n_rows, n_cols = d.shape
    if k >= n_cols:
        return np.argsort(d, axis=1, kind="stable")[:, :k]
    part = np.argpartition(d, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(d, part, axis=1).max(axis=1)
    rows, cols = np.nonzero(d <= kth[:, None])
    order = np.lexsort((cols, d[rows, cols], rows))
    rows, cols = rows[order], cols[order]
    starts = np.searchsorted(rows, np.arange(n_rows))
    return cols[starts[:, None] + np.arange(k)]


class KNeighborsClassifier(ClassifierMixin, BaseEstimator):
    """Brute-force k-NN on z-scored features.

    Scores are neighbour vote fractions.  Distance ties go to the lower
    training-row index.
    """

    def __init__(self, n_neighbors=5, standardize=True):
        self.n_neighbors = n_neighbors
        self.standardize = standardize

    def fit(self, X, y):
        X, self.classes_, y_enc = _encode(X, y)
        self.n_features_in_ = X.shape[1]
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            std = X.std(axis=0)
            # constant columns carry no distance information
            self.scale_ = np.where(std > 0, std, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        self.X_train_ = (X - self.mean_) / self.scale_
        self.y_train_ = y_enc
        return self

    def kneighbors(self, X) -> np.ndarray:
        X = (_check_width(self, X) - self.mean_) / self.scale_
        k = min(self.n_neighbors, len(self.X_train_))
        train_sq = np.einsum("ij,ij->i", self.X_train_, self.X_train_)
        out = np.empty((len(X), k), dtype=np.intp)
        for lo in range(0, len(X), _CHUNK):
            q = X[lo : lo + _CHUNK]
            d = np.einsum("ij,ij->i", q, q)[:, None] + train_sq[None, :] - 2.0 * q @ self.X_train_.T
            out[lo : lo + _CHUNK] = k_smallest(d, k)
        return out

    def predict_proba(self, X):
        nn = self.kneighbors(X)
        votes = self.y_train_[nn]
        proba = np.zeros((len(nn), len(self.classes_)))
        for j in range(nn.shape[1]):
            proba[np.arange(len(nn)), votes[:, j]] += 1.0
        return proba / nn.shape[1]

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
