from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin

from .tree import _check_width, _encode


class GaussianNB(ClassifierMixin, BaseEstimator):
    """Gaussian naive Bayes with empirical priors.

    Per-class variances are clipped from below at ``var_floor``.
    """

    def __init__(self, var_floor=1e-9):
        self.var_floor = var_floor

    def fit(self, X, y):
        X, self.classes_, y_enc = _encode(X, y)
        self.n_features_in_ = X.shape[1]
        k = len(self.classes_)
        self.theta_ = np.zeros((k, X.shape[1]))
        self.var_ = np.zeros((k, X.shape[1]))
        counts = np.bincount(y_enc, minlength=k)
        for c in range(k):
            Xc = X[y_enc == c]
            self.theta_[c] = Xc.mean(axis=0)
            self.var_[c] = np.maximum(Xc.var(axis=0), self.var_floor)
        self.class_prior_ = counts / counts.sum()
        return self

    def _joint_log_likelihood(self, X):
        X = _check_width(self, X)
        jll = np.empty((len(X), len(self.classes_)))
        for c in range(len(self.classes_)):
            ll = -0.5 * np.sum(np.log(2.0 * np.pi * self.var_[c]))
            ll = ll - 0.5 * np.sum((X - self.theta_[c]) ** 2 / self.var_[c], axis=1)
            jll[:, c] = np.log(self.class_prior_[c]) + ll
        return jll

    def predict_proba(self, X):
        jll = self._joint_log_likelihood(X)
        return np.exp(jll - logsumexp(jll, axis=1, keepdims=True))

    def predict(self, X):
        return self.classes_[np.argmax(self._joint_log_likelihood(X), axis=1)]
