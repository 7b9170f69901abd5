from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np


@dataclass
class Metrics:
    labels: list[str]
    confusion: np.ndarray     # rows: true label, columns: predicted label
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    per_class: dict[str, dict[str, float]]

    def to_dict(self, model: str = "") -> dict:
        return {
            "model": model,
            "accuracy": self.accuracy,
            "precision_macro": self.precision_macro,
            "recall_macro": self.recall_macro,
            "f1_macro": self.f1_macro,
            "per_class": self.per_class,
        }

    @property
    def per_class_f1(self) -> dict[str, float]:
        return {k: v["f1"] for k, v in self.per_class.items()}

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["true\\pred", *self.labels])
        for lab, row in zip(self.labels, self.confusion):
            w.writerow([lab, *map(int, row)])
        return buf.getvalue()


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a, dtype=np.float64)
    np.divide(a, b, out=out, where=b > 0)
    return out


def metrics_from_confusion(confusion: np.ndarray, labels: Sequence[str]) -> Metrics:
    cm = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    actual = cm.sum(axis=1).astype(np.float64)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, actual)
    f1 = _safe_div(2.0 * tp, predicted + actual)
    per_class = {
        str(lab): {"precision": float(p), "recall": float(r), "f1": float(f), "support": int(s)}
        for lab, p, r, f, s in zip(labels, precision, recall, f1, actual)
    }
    return Metrics(
        labels=[str(x) for x in labels],
        confusion=cm,
        accuracy=float(tp.sum() / cm.sum()),
        precision_macro=float(precision.mean()),
        recall_macro=float(recall.mean()),
        f1_macro=float(f1.mean()),
        per_class=per_class,
    )


def confusion_matrix(y_true, y_pred, labels: Optional[Sequence] = None) -> tuple[np.ndarray, list]:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if labels is None:
        labels = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    pos = {lab: i for i, lab in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        cm[pos[t], pos[p]] += 1
    return cm, list(labels)


def evaluate(model, X, y, labels: Optional[Sequence] = None) -> Metrics:
    """Accuracy, macro precision/recall/F1 and per-class scores.

    Macro averages run over the union of true and predicted labels unless
    ``labels`` is given.  A class never predicted has precision 0.
    """
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    cm, labels = confusion_matrix(y, model.predict(X), labels)
    return metrics_from_confusion(cm, labels)


def benchmark_inference(models: Mapping[str, object], X, repeats: int = 5) -> dict[str, float]:
    """Median wall time in milliseconds of ``predict`` over the whole of ``X``."""
    if len(models) < 2:
        raise ValueError("benchmark needs at least two models to compare")
    out = {}
    for name, m in models.items():
        m.predict(X[:1])  # warm-up
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            m.predict(X)
            times.append((time.perf_counter() - t0) * 1000.0)
        out[name] = statistics.median(times)
    return out
