"""SMOTE oversampling.

Each synthetic point is ``x_i + u * (x_nn - x_i)`` with ``u ~ U[0, 1)`` and
``x_nn`` one of the ``k`` nearest same-class neighbours of ``x_i``
(Euclidean, self excluded).  Every class is grown to the majority count.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_X_y

from ..errors import ClassTooSmall
from .data import Dataset
from .neighbors import k_smallest

_CHUNK = 1024


def nearest_neighbors(X: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of ``X``; ties broken by row index."""
    n = len(X)
    sq = np.einsum("ij,ij->i", X, X)
    out = np.empty((n, k), dtype=np.intp)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        d = sq[lo:hi, None] + sq[None, :] - 2.0 * X[lo:hi] @ X.T
        np.maximum(d, 0.0, out=d)
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out[lo:hi] = k_smallest(d, k)
    return out


class SMOTE(BaseEstimator):
    def __init__(self, k_neighbors=5, random_state=None):
        self.k_neighbors = k_neighbors
        self.random_state = random_state

    def fit_resample(self, X, y):
        """Return ``(X_res, y_res)``: the originals followed by synthetic rows."""
        X, y = check_X_y(X, y, dtype=np.float64)
        k = self.k_neighbors
        classes, counts = np.unique(y, return_counts=True)
        target = counts.max()
        rng = np.random.default_rng(self.random_state)

        new_X, new_y = [X], [y]
        self.sample_origin_ = []
        for cls, count in zip(classes, counts):
            need = target - count
            if need == 0:
                continue
            if count < k + 1:
                raise ClassTooSmall(f"class {cls!r} has {count} samples; SMOTE with k={k} needs at least {k + 1}")
            members = np.flatnonzero(y == cls)
            Xc = X[members]
            nn = nearest_neighbors(Xc, k)
            base = rng.integers(0, count, need)
            pick = nn[base, rng.integers(0, k, need)]
            gap = rng.random(need)[:, None]
            new_X.append(Xc[base] + gap * (Xc[pick] - Xc[base]))
            new_y.append(np.full(need, cls, dtype=y.dtype))
            self.sample_origin_.append(np.column_stack([members[base], members[pick]]))
        self.n_synthetic_ = sum(len(a) for a in new_y[1:])
        return np.vstack(new_X), np.concatenate(new_y)


def smote_oversample(d: Dataset, k: int = 5, seed=None, task: str = "family") -> Dataset:
    """Dataset-level wrapper; synthetic rows inherit category/family from their base sample."""
    sampler = SMOTE(k_neighbors=k, random_state=seed)
    X_res, _ = sampler.fit_resample(d.X, d.labels(task))
    if not sampler.sample_origin_:
        return Dataset(d.X.copy(), d.category.copy(), d.family.copy(), list(d.feature_names))
    base = np.concatenate([o[:, 0] for o in sampler.sample_origin_])
    category = np.concatenate([d.category, d.category[base]])
    family = np.concatenate([d.family, d.family[base]])
    return Dataset(X_res, category, family, list(d.feature_names))
