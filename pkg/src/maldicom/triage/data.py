"""CIC-MalMem-2022 style feature tables."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from ..errors import NonNumericFeature, SchemaMismatch, UnknownCategoryToken

CATEGORY_COLUMN = "Category"
# binary Benign/Malware flag shipped with the dataset; redundant with Category
CLASS_COLUMN = "Class"
BENIGN = "Benign"
CATEGORIES = ("Benign", "Ransomware", "Spyware", "Trojan")
FAMILIES = {
    "Ransomware": ("Ako", "Conti", "Maze", "Pysa", "Shade"),
    "Spyware": ("180solutions", "CWS", "Gator", "TIBS", "Transponder"),
    "Trojan": ("Emotet", "Reconyc", "Refroso", "Scar", "Zeus"),
}

MALMEM_FEATURES = (
    "pslist.nproc", "pslist.nppid", "pslist.avg_threads", "pslist.nprocs64bit", "pslist.avg_handlers",
    "dlllist.ndlls", "dlllist.avg_dlls_per_proc",
    "handles.nhandles", "handles.avg_handles_per_proc", "handles.nport", "handles.nfile", "handles.nevent",
    "handles.ndesktop", "handles.nkey", "handles.nthread", "handles.ndirectory", "handles.nsemaphore",
    "handles.ntimer", "handles.nsection", "handles.nmutant",
    "ldrmodules.not_in_load", "ldrmodules.not_in_init", "ldrmodules.not_in_mem",
    "ldrmodules.not_in_load_avg", "ldrmodules.not_in_init_avg", "ldrmodules.not_in_mem_avg",
    "malfind.ninjections", "malfind.commitCharge", "malfind.protection", "malfind.uniqueInjections",
    "psxview.not_in_pslist", "psxview.not_in_eprocess_pool", "psxview.not_in_ethread_pool",
    "psxview.not_in_pspcid_list", "psxview.not_in_csrss_handles", "psxview.not_in_session",
    "psxview.not_in_deskthrd", "psxview.not_in_pslist_false_avg", "psxview.not_in_eprocess_pool_false_avg",
    "psxview.not_in_ethread_pool_false_avg", "psxview.not_in_pspcid_list_false_avg",
    "psxview.not_in_csrss_handles_false_avg", "psxview.not_in_session_false_avg",
    "psxview.not_in_deskthrd_false_avg",
    "modules.nmodules",
    "svcscan.nservices", "svcscan.kernel_drivers", "svcscan.fs_drivers", "svcscan.process_services",
    "svcscan.shared_process_services", "svcscan.interactive_process_services", "svcscan.nactive",
    "callbacks.ncallbacks", "callbacks.nanonymous", "callbacks.ngeneric",
)


@dataclass
class Dataset:
    X: np.ndarray
    category: np.ndarray
    family: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.category = np.asarray(self.category, dtype=object)
        self.family = np.asarray(self.family, dtype=object)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.feature_names):
            raise SchemaMismatch(f"X has shape {self.X.shape}, expected {len(self.feature_names)} columns")
        if not (len(self.X) == len(self.category) == len(self.family)):
            raise SchemaMismatch("X, category and family must have the same number of rows")
        if not np.isfinite(self.X).all():
            raise NonNumericFeature("feature matrix contains NaN or infinite values")

    def __len__(self) -> int:
        return len(self.X)

    def labels(self, task: str = "family") -> np.ndarray:
        """Target labels: ``"family"`` (Benign + one label per family) or ``"category"``."""
        if task == "category":
            return self.category.astype(str)
        if task == "family":
            return np.array(
                [c if c == BENIGN else f"{c}-{f}" for c, f in zip(self.category, self.family)], dtype=str
            )
        raise ValueError(f"unknown task {task!r}; use 'family' or 'category'")

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.category[idx], self.family[idx], list(self.feature_names))

    def feature_index(self, name: str) -> int:
        return self.feature_names.index(name)


def parse_category(token: str) -> tuple[str, str]:
    """``"Trojan-Refroso-<hash>"`` -> ``("Trojan", "Refroso")``; ``"Benign"`` -> ``("Benign", "")``."""
    parts = str(token).strip().split("-")
    head = parts[0]
    if head == BENIGN:
        return BENIGN, ""
    if head not in CATEGORIES:
        raise UnknownCategoryToken(f"unknown category {head!r} in {token!r}")
    if len(parts) < 2 or not parts[1]:
        raise UnknownCategoryToken(f"no family in category string {token!r}")
    return head, parts[1]


def load_malmem_csv(path: str | os.PathLike, n_features: Optional[int] = None) -> Dataset:
    frame = pd.read_csv(path)
    if CATEGORY_COLUMN not in frame.columns:
        raise SchemaMismatch(f"{os.fspath(path)}: missing {CATEGORY_COLUMN!r} column; have {list(frame.columns)}")
    feature_cols = [c for c in frame.columns if c not in (CATEGORY_COLUMN, CLASS_COLUMN)]
    if n_features is not None and len(feature_cols) != n_features:
        raise SchemaMismatch(f"expected {n_features} feature columns, found {len(feature_cols)}")
    if not feature_cols:
        raise SchemaMismatch("no feature columns")
    bad = [c for c in feature_cols if not pd.api.types.is_numeric_dtype(frame[c])]
    if bad:
        raise NonNumericFeature(f"non-numeric feature columns: {bad}")

    parsed = [parse_category(c) for c in frame[CATEGORY_COLUMN]]
    category = np.array([p[0] for p in parsed], dtype=object)
    family = np.array([p[1] for p in parsed], dtype=object)
    return Dataset(frame[feature_cols].to_numpy(dtype=np.float64), category, family, list(feature_cols))


def write_malmem_csv(d: Dataset, path: str | os.PathLike, hashes: Optional[Sequence[str]] = None) -> None:
    frame = pd.DataFrame(d.X, columns=d.feature_names)
    cats = []
    for i, (c, f) in enumerate(zip(d.category, d.family)):
        if c == BENIGN:
            cats.append(BENIGN)
        else:
            suffix = hashes[i] if hashes is not None else f"{i:08x}"
            cats.append(f"{c}-{f}-{suffix}")
    frame.insert(0, CATEGORY_COLUMN, cats)
    frame[CLASS_COLUMN] = np.where(d.category == BENIGN, "Benign", "Malware")
    frame.to_csv(path, index=False)


def stratified_split(d: Dataset, task: str = "family", test_size: float = 0.2, seed: int = 42):
    """Stratified train/test split; returns ``(train, test)`` datasets."""
    idx = np.arange(len(d))
    train_idx, test_idx = train_test_split(idx, test_size=test_size, random_state=seed, stratify=d.labels(task))
    return d.subset(np.sort(train_idx)), d.subset(np.sort(test_idx))
