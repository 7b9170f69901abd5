"""Training workflow shared by the CLI and the acceptance suite.

split (stratified 80:20) -> SMOTE on the training part only -> fit -> evaluate
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, stratified_split
from .metrics import Metrics, evaluate
from .naive_bayes import GaussianNB
from .neighbors import KNeighborsClassifier
from .smote import SMOTE
from .tree import DecisionTreeClassifier, RandomForestClassifier


def build_model(
    kind: str,
    seed: int = 42,
    n_estimators: int = 100,
    k: int = 5,
    max_depth: Optional[int] = None,
    n_jobs: Optional[int] = None,
):
    if kind == "dt":
        return DecisionTreeClassifier(max_depth=max_depth)
    if kind == "rf":
        return RandomForestClassifier(n_estimators=n_estimators, max_depth=max_depth, random_state=seed, n_jobs=n_jobs)
    if kind == "knn":
        return KNeighborsClassifier(n_neighbors=k)
    if kind == "gnb":
        return GaussianNB()
    raise ValueError(f"unknown model kind {kind!r}; choose from dt, rf, knn, gnb")


@dataclass
class SplitSpec:
    task: str = "family"
    test_size: float = 0.2
    seed: int = 42
    smote_k: int = 5
    smote: bool = True

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Prepared:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    train: Dataset
    test: Dataset
    n_synthetic: int


def prepare(d: Dataset, spec: SplitSpec = SplitSpec()) -> Prepared:
    train, test = stratified_split(d, spec.task, spec.test_size, spec.seed)
    X_train, y_train = train.X, train.labels(spec.task)
    n_synth = 0
    if spec.smote:
        sampler = SMOTE(k_neighbors=spec.smote_k, random_state=spec.seed)
        X_train, y_train = sampler.fit_resample(X_train, y_train)
        n_synth = sampler.n_synthetic_
    return Prepared(X_train, y_train, test.X, test.labels(spec.task), train, test, n_synth)


def train_and_evaluate(d: Dataset, kind: str, spec: SplitSpec = SplitSpec(), prepared: Optional[Prepared] = None, **hp):
    """Return ``(model, metrics, prepared)``."""
    prepared = prepared or prepare(d, spec)
    model = build_model(kind, seed=spec.seed, **hp).fit(prepared.X_train, prepared.y_train)
    return model, evaluate(model, prepared.X_test, prepared.y_test), prepared


# --- functional shorthands ---------------------------------------------------

def train_decision_tree(d: Dataset, hp: Optional[dict] = None, task: str = "family"):
    return DecisionTreeClassifier(**(hp or {})).fit(d.X, d.labels(task))


def train_random_forest(d: Dataset, hp: Optional[dict] = None, seed: int = 42, task: str = "family"):
    return RandomForestClassifier(random_state=seed, **(hp or {})).fit(d.X, d.labels(task))


def train_knn(d: Dataset, hp: Optional[dict] = None, task: str = "family"):
    return KNeighborsClassifier(**(hp or {})).fit(d.X, d.labels(task))


def train_gaussian_nb(d: Dataset, task: str = "family"):
    return GaussianNB().fit(d.X, d.labels(task))


def predict(model, x) -> tuple[str, dict[str, float]]:
    """Label and per-class scores for one feature vector."""
    scores = model.predict_proba(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    label = model.classes_[int(np.argmax(scores))]
    return str(label), {str(c): float(s) for c, s in zip(model.classes_, scores)}


