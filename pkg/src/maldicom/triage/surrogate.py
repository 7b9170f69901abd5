"""Synthetic stand-in for CIC-MalMem-2022 rows.

Same column names and label strings as the real CSV, so every loader and
training path can be exercised offline.  The values are *not* real memory
dumps and say nothing about how well a model does on the real dataset.

Generative model, per feature ``j``::

    log value = mu_j + malware_shift_j + category_shift_cj + family_shift_fj + sigma_j * N(0, 1)

Each shift vector is sparse: a random subset of features is affected, chosen
by the seed alone, with no feature group favoured.  Count-like features are
rounded to integers; ``*_avg``/``avg_*`` features keep two decimals.
"""

from __future__ import annotations

import numpy as np

from .data import BENIGN, FAMILIES, MALMEM_FEATURES, Dataset


def _sparse_shift(rng: np.random.Generator, n: int, density: float, scale: float) -> np.ndarray:
    return np.where(rng.random(n) < density, rng.normal(0.0, scale, n), 0.0)


def make_surrogate(n_per_class: int = 125, seed: int = 2022) -> Dataset:
    """Balanced sample: ``n_per_class`` rows for Benign and for each of the 15 families."""
    rng = np.random.default_rng(seed)
    p = len(MALMEM_FEATURES)
    mu = rng.uniform(0.5, 6.0, p)
    sigma = rng.uniform(0.3, 0.8, p)
    malware_shift = _sparse_shift(rng, p, 0.3, 0.8)
    cat_shift = {c: _sparse_shift(rng, p, 0.3, 0.8) for c in FAMILIES}
    fam_shift = {(c, f): _sparse_shift(rng, p, 0.2, 0.5) for c, fams in FAMILIES.items() for f in fams}
    is_count = np.array(["avg" not in name for name in MALMEM_FEATURES])

    groups = [(BENIGN, "", np.zeros(p))]
    for c, fams in FAMILIES.items():
        for f in fams:
            groups.append((c, f, malware_shift + cat_shift[c] + fam_shift[(c, f)]))

    X, cats, fams_out = [], [], []
    for c, f, shift in groups:
        logv = mu + shift + sigma * rng.standard_normal((n_per_class, p))
        X.append(np.exp(logv))
        cats += [c] * n_per_class
        fams_out += [f] * n_per_class
    X = np.vstack(X)
    X[:, is_count] = np.round(X[:, is_count])
    X[:, ~is_count] = np.round(X[:, ~is_count], 2)
    order = rng.permutation(len(X))
    return Dataset(X[order], np.array(cats, dtype=object)[order], np.array(fams_out, dtype=object)[order],
                   list(MALMEM_FEATURES))
