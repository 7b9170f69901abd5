import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maldicom.errors import EmptyBackground, TooManyFeaturesForExact, WidthMismatch
from maldicom.triage import DecisionTreeClassifier, RandomForestClassifier
from maldicom.triage.shapley import (
    feature_ranking,
    marginal_prediction,
    mean_abs_phi,
    select_background,
    shapley_values,
)


def brute_force_shapley(f, x, background, players):
    """Textbook formula, one coalition at a time."""
    players = list(players)
    n = len(players)

    def v(S):
        Z = background.copy()
        rest = [j for j in range(len(x)) if j not in players]
        Z[:, rest] = x[rest]
        Z[:, list(S)] = x[list(S)]
        return float(np.mean(f(Z)))

    phi = {}
    for j in players:
        others = [p for p in players if p != j]
        total = 0.0
        for size in range(n):
            w = math.factorial(size) * math.factorial(n - size - 1) / math.factorial(n)
            for S in itertools.combinations(others, size):
                total += w * (v(S + (j,)) - v(S))
        phi[j] = total
    return phi, v(())


def fitted(seed, p=6, forest=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(150, p))
    y = (X[:, 0] + X[:, 1] * X[:, 2] > 0).astype(int) + (X[:, 3] > 1)
    model = (RandomForestClassifier(n_estimators=5, max_depth=4, random_state=seed) if forest
             else DecisionTreeClassifier(max_depth=5)).fit(X, y)
    return model, X


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("forest", [False, True])
def test_exact_matches_brute_force(seed, forest):
    model, X = fitted(seed, forest=forest)
    x, bg = X[0], X[100:120]
    e = shapley_values(model, x, bg)
    f = lambda Z: model.predict_proba(Z)[:, e.target]
    oracle, base = brute_force_shapley(f, x, bg, range(X.shape[1]))
    assert np.allclose(e.phi, [oracle[j] for j in range(X.shape[1])], atol=1e-9, rtol=0)
    assert abs(e.base_value - base) <= 1e-9
    assert e.efficiency_gap <= 1e-9


def test_player_subset_matches_brute_force():
    model, X = fitted(9, p=8)
    players = [1, 3, 4, 6]
    e = shapley_values(model, X[2], X[50:60], features=players)
    f = lambda Z: model.predict_proba(Z)[:, e.target]
    oracle, _ = brute_force_shapley(f, X[2], X[50:60], players)
    assert np.allclose(e.phi[players], [oracle[j] for j in players], atol=1e-9, rtol=0)
    assert (e.phi[[0, 2, 5, 7]] == 0).all()
    assert e.efficiency_gap <= 1e-9


def test_linear_closed_form():
    w = np.array([2.0, -1.0, 0.5])
    f = lambda Z: Z @ w
    bg = np.random.default_rng(0).normal(size=(30, 3))
    x = np.array([1.0, 2.0, 3.0])
    e = shapley_values(f, x, bg)
    assert np.allclose(e.phi, w * (x - bg.mean(axis=0)), atol=1e-12)


def test_symmetry_axiom():
    f = lambda Z: Z[:, 0] * Z[:, 1] + Z[:, 2]
    bg = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
    e = shapley_values(f, np.array([2.0, 2.0, 1.0]), bg)
    assert e.phi[0] == e.phi[1]


def test_dummy_axiom():
    f = lambda Z: np.sin(Z[:, 0]) + Z[:, 1] ** 2
    bg = np.random.default_rng(1).normal(size=(10, 3))
    e = shapley_values(f, np.array([0.3, -1.2, 9.0]), bg)
    assert e.phi[2] == 0.0


@given(st.integers(0, 2**16), st.integers(1, 6))
def test_efficiency_property(seed, p):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(p, p))
    f = lambda Z: np.tanh(Z @ W).sum(axis=1) * Z[:, 0]
    e = shapley_values(f, rng.normal(size=p), rng.normal(size=(int(rng.integers(1, 20)), p)))
    assert e.efficiency_gap <= 1e-9


def test_sampled_converges_to_exact():
    model, X = fitted(3)
    x, bg = X[1], X[100:110]
    exact = shapley_values(model, x, bg)
    approx = shapley_values(model, x, bg, mode="sampled", n_permutations=4000, seed=0)
    assert approx.target == exact.target
    assert np.abs(approx.phi - exact.phi).max() < 0.05


def test_sampled_deterministic():
    model, X = fitted(4)
    a = shapley_values(model, X[0], X[50:60], mode="sampled", n_permutations=64, seed=5)
    b = shapley_values(model, X[0], X[50:60], mode="sampled", n_permutations=64, seed=5)
    assert np.array_equal(a.phi, b.phi)


def test_marginal_prediction():
    f = lambda Z: Z[:, 0] + 10 * Z[:, 1]
    bg = np.array([[0.0, 0.0], [2.0, 4.0]])
    x = np.array([5.0, 7.0])
    assert marginal_prediction(f, x, [], bg) == pytest.approx(1 + 20)
    assert marginal_prediction(f, x, [0], bg) == pytest.approx(5 + 20)
    assert marginal_prediction(f, x, [0, 1], bg) == pytest.approx(75)


def test_errors():
    f = lambda Z: Z.sum(axis=1)
    with pytest.raises(TooManyFeaturesForExact):
        shapley_values(f, np.zeros(16), np.zeros((1, 16)))
    with pytest.raises(EmptyBackground):
        shapley_values(f, np.zeros(3), np.zeros((0, 3)))
    with pytest.raises(WidthMismatch):
        shapley_values(f, np.zeros(3), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        shapley_values(f, np.zeros(3), np.zeros((2, 3)), mode="kernel")


def test_ranking_ties_and_mean():
    model, X = fitted(5)
    es = [shapley_values(model, X[i], X[100:110]) for i in range(3)]
    r = feature_ranking(es)
    m = mean_abs_phi(es)
    assert sorted(r) == list(range(X.shape[1]))
    assert all(m[a] >= m[b] for a, b in zip(r, r[1:]))
    for e in es:
        e.phi[:] = 0.0
    assert feature_ranking(es) == list(range(X.shape[1]))


def test_select_background():
    X = np.arange(500.0).reshape(250, 2)
    bg = select_background(X, 100, seed=1)
    assert bg.shape == (100, 2) and np.array_equal(bg, select_background(X, 100, seed=1))
    assert len(np.unique(bg[:, 0])) == 100
    assert select_background(X[:10], 100).shape == (10, 2)
