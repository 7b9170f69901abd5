"""Shapley attributions for a single prediction.

The value of a coalition ``S`` is the model's target-class score averaged
over a background set, with the features in ``S`` copied from the instance
``x`` and all other player features taken from each background row.
Features that are not players stay fixed at ``x``.  With that choice
``v(empty)`` is the base value and ``v(all players) == f(x)``, so the exact
attributions satisfy efficiency by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import EmptyBackground, TooManyFeaturesForExact, WidthMismatch

MAX_EXACT_PLAYERS = 15
_ROW_BUDGET = 200_000


@dataclass
class ShapleyExplanation:
    phi: np.ndarray           # one entry per model feature; non-players are 0
    base_value: float
    fx: float
    players: np.ndarray
    target: int
    mode: str

    @property
    def efficiency_gap(self) -> float:
        return abs(float(self.phi.sum()) + self.base_value - self.fx)


def value_function(model, target: Optional[int] = None, x: Optional[np.ndarray] = None):
    """Return ``(f, target)`` where ``f(X)`` gives one score per row.

    ``model`` is either a classifier with ``predict_proba`` (scored on class
    index ``target``; default: the class predicted for ``x``) or a plain
    callable already returning one value per row.
    """
    if not hasattr(model, "predict_proba"):
        return (lambda X: np.asarray(model(X), dtype=np.float64)), -1
    if target is None:
        if x is None:
            raise ValueError("target class or instance required")
        target = int(np.argmax(model.predict_proba(x[None, :])[0]))
    return (lambda X: model.predict_proba(X)[:, target]), int(target)


def _prepare(x, background, players):
    x = np.asarray(x, dtype=np.float64).ravel()
    background = np.asarray(background, dtype=np.float64)
    if background.ndim != 2 or len(background) == 0:
        raise EmptyBackground("background set must contain at least one row")
    if background.shape[1] != x.size:
        raise WidthMismatch(f"instance has {x.size} features, background has {background.shape[1]}")
    players = np.arange(x.size) if players is None else np.asarray(sorted(set(int(p) for p in players)))
    return x, background, players


def _coalition_values(f, x, background, players, masks: np.ndarray) -> np.ndarray:
    """v(S) for every bitmask in ``masks`` (bit j = players[j] is in S)."""
    B, p = background.shape
    base = background.copy()
    outside = np.setdiff1d(np.arange(p), players)
    base[:, outside] = x[outside]
    bits = ((masks[:, None] >> np.arange(len(players))) & 1).astype(bool)
    full = bits.all(axis=1)
    out = np.empty(len(masks))
    step = max(1, _ROW_BUDGET // B)
    for lo in range(0, len(masks), step):
        chunk = bits[lo : lo + step]
        H = np.broadcast_to(base, (len(chunk), B, p)).copy()
        for j, feat in enumerate(players):
            H[chunk[:, j], :, feat] = x[feat]
        scores = f(H.reshape(-1, p)).reshape(len(chunk), B)
        # shifted mean: exact when every row scores the same (dummy/symmetry axioms)
        out[lo : lo + step] = scores[:, 0] + (scores - scores[:, :1]).mean(axis=1)
    if full.any():
        out[full] = f(x[None, :])[0]
    return out


def marginal_prediction(
    model,
    x,
    coalition: Iterable[int],
    background,
    target: Optional[int] = None,
    players: Optional[Sequence[int]] = None,
) -> float:
    """Mean target score over ``background`` with ``coalition`` features taken from ``x``."""
    x, background, players = _prepare(x, background, players)
    coalition = set(int(c) for c in coalition)
    pos = {int(f): j for j, f in enumerate(players)}
    if not coalition <= pos.keys():
        raise ValueError(f"coalition {sorted(coalition - pos.keys())} not among the players")
    f, _ = value_function(model, target, x)
    mask = sum(1 << pos[c] for c in coalition)
    return float(_coalition_values(f, x, background, players, np.array([mask], dtype=np.int64))[0])


def _exact(f, x, background, players) -> tuple[np.ndarray, float]:
    n = len(players)
    if n > MAX_EXACT_PLAYERS:
        raise TooManyFeaturesForExact(f"exact enumeration of {n} features needs 2^{n} coalitions; limit is {MAX_EXACT_PLAYERS}")
    masks = np.arange(1 << n, dtype=np.int64)
    v = _coalition_values(f, x, background, players, masks)
    sizes = np.array([bin(m).count("1") for m in range(1 << n)])
    weight = np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)])
    phi = np.zeros(n)
    for j in range(n):
        without = masks[(masks >> j) & 1 == 0]
        phi[j] = np.sum(weight[sizes[without]] * (v[without | (1 << j)] - v[without]))
    return phi, float(v[0])


def _sampled(f, x, background, players, n_permutations: int, seed) -> tuple[np.ndarray, float]:
    """Permutation estimator pairing each permutation with one background row."""
    n, (B, p) = len(players), background.shape
    outside = np.setdiff1d(np.arange(p), players)
    phi = np.zeros(n)
    children = np.random.SeedSequence(seed).spawn(n_permutations)
    per_chunk = max(1, _ROW_BUDGET // (n + 1))
    for lo in range(0, n_permutations, per_chunk):
        batch = children[lo : lo + per_chunk]
        orders, rows = [], []
        for child in batch:
            rng = np.random.default_rng(child)
            order = rng.permutation(n)
            z = background[rng.integers(B)].copy()
            z[outside] = x[outside]
            chain = np.repeat(z[None, :], n + 1, axis=0)
            for k, j in enumerate(order, start=1):
                chain[k:, players[j]] = x[players[j]]
            orders.append(order)
            rows.append(chain)
        scores = f(np.vstack(rows)).reshape(len(batch), n + 1)
        deltas = np.diff(scores, axis=1)
        for order, d in zip(orders, deltas):
            phi[order] += d
    phi /= n_permutations
    base = float(_coalition_values(f, x, background, players, np.array([0], dtype=np.int64))[0])
    return phi, base


def shapley_values(
    model,
    x,
    background,
    mode: str = "exact",
    n_permutations: int = 2048,
    seed=None,
    target: Optional[int] = None,
    features: Optional[Sequence[int]] = None,
) -> ShapleyExplanation:
    """Attribute ``f(x) - base`` to ``features`` (default: all features).

    ``mode="exact"`` enumerates all coalitions (at most 15 players);
    ``mode="sampled"`` averages ``n_permutations`` seeded permutations.
    """
    x, background, players = _prepare(x, background, features)
    f, target = value_function(model, target, x)
    if mode == "exact":
        phi_players, base = _exact(f, x, background, players)
    elif mode == "sampled":
        phi_players, base = _sampled(f, x, background, players, n_permutations, seed)
    else:
        raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")
    phi = np.zeros(x.size)
    phi[players] = phi_players
    return ShapleyExplanation(phi, base, float(f(x[None, :])[0]), players, target, mode)


def feature_ranking(explanations: Sequence[ShapleyExplanation]) -> list[int]:
    """Feature indices by descending mean |phi|; ties go to the lower index."""
    if not explanations:
        raise ValueError("need at least one explanation")
    mean_abs = np.mean([np.abs(e.phi) for e in explanations], axis=0)
    return np.lexsort((np.arange(mean_abs.size), -mean_abs)).tolist()


def mean_abs_phi(explanations: Sequence[ShapleyExplanation]) -> np.ndarray:
    return np.mean([np.abs(e.phi) for e in explanations], axis=0)


def select_background(X: np.ndarray, size: int = 100, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if len(X) <= size:
        return np.asarray(X, dtype=np.float64).copy()
    return np.asarray(X, dtype=np.float64)[np.sort(rng.choice(len(X), size, replace=False))]
