"""JSON model container.

Layout::

    {"format": "maldicom-model", "format_version": 1, "kind": "rf",
     "params": {...}, "classes": [...], "feature_names": [...],
     "split": {...}, "state": {...}}

Arrays are stored as ``{"dtype", "shape", "data"}`` with base64 raw bytes,
so reloaded models predict bit-identically.
"""

from __future__ import annotations

import base64
import json
import os
from typing import Any, Optional

import numpy as np

from .naive_bayes import GaussianNB
from .neighbors import KNeighborsClassifier
from .tree import DecisionTreeClassifier, RandomForestClassifier, Tree

FORMAT = "maldicom-model"
FORMAT_VERSION = 1

MODEL_KINDS = {
    "dt": DecisionTreeClassifier,
    "rf": RandomForestClassifier,
    "knn": KNeighborsClassifier,
    "gnb": GaussianNB,
}


def _enc(a) -> dict:
    a = np.ascontiguousarray(a)
    return {"dtype": a.dtype.str, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


def _enc_tree(t: Tree) -> dict:
    return {k: _enc(v) for k, v in t.to_state().items()}


def _dec_tree(d: dict) -> Tree:
    return Tree.from_state({k: _dec(v) for k, v in d.items()})


def kind_of(model) -> str:
    for kind, cls in MODEL_KINDS.items():
        if type(model) is cls:
            return kind
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _state(model) -> dict:
    if isinstance(model, DecisionTreeClassifier):
        return {"tree": _enc_tree(model.tree_)}
    if isinstance(model, RandomForestClassifier):
        return {"trees": [_enc_tree(t) for t in model.estimators_], "n_train": model.n_train_,
                "max_features": model.max_features_}
    if isinstance(model, KNeighborsClassifier):
        return {"mean": _enc(model.mean_), "scale": _enc(model.scale_),
                "X": _enc(model.X_train_), "y": _enc(model.y_train_)}
    if isinstance(model, GaussianNB):
        return {"theta": _enc(model.theta_), "var": _enc(model.var_), "prior": _enc(model.class_prior_)}
    raise TypeError(type(model).__name__)


def _restore(model, state: dict) -> None:
    if isinstance(model, DecisionTreeClassifier):
        model.tree_ = _dec_tree(state["tree"])
        model.feature_importances_ = model.tree_.feature_importances(model.n_features_in_)
    elif isinstance(model, RandomForestClassifier):
        model.estimators_ = [_dec_tree(t) for t in state["trees"]]
        model.n_train_ = state["n_train"]
        model.max_features_ = state["max_features"]
        model.feature_importances_ = np.mean(
            [t.feature_importances(model.n_features_in_) for t in model.estimators_], axis=0
        )
    elif isinstance(model, KNeighborsClassifier):
        model.mean_ = _dec(state["mean"])
        model.scale_ = _dec(state["scale"])
        model.X_train_ = _dec(state["X"])
        model.y_train_ = _dec(state["y"])
    elif isinstance(model, GaussianNB):
        model.theta_ = _dec(state["theta"])
        model.var_ = _dec(state["var"])
        model.class_prior_ = _dec(state["prior"])


def save_model(model, path: str | os.PathLike, feature_names=None, split: Optional[dict] = None) -> None:
    doc = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "kind": kind_of(model),
        "params": model.get_params(),
        "classes": [str(c) for c in model.classes_],
        "n_features": int(model.n_features_in_),
        "feature_names": list(feature_names) if feature_names is not None else None,
        "split": split,
        "state": _state(model),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path: str | os.PathLike) -> tuple[Any, dict]:
    """Return ``(model, header)``; the header holds everything but the learned state."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ValueError(f"{os.fspath(path)} is not a {FORMAT} file")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')}")
    model = MODEL_KINDS[doc["kind"]](**doc["params"])
    model.classes_ = np.asarray(doc["classes"])
    model.n_features_in_ = doc["n_features"]
    _restore(model, doc.pop("state"))
    return model, doc
