import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acc_audio.knn import knn_fit, knn_predict, knn_predict_batch


def oracle(vectors, labels, k, query):
    """All-pairs distances in plain Python, then the documented vote rule."""
    dists = [(math.sqrt(sum((a - b) ** 2 for a, b in zip(v, query))), i) for i, v in enumerate(vectors)]
    nearest = sorted(dists)[:k]
    counts = Counter(labels[i] for _, i in nearest)
    summed = {c: sum(d for d, i in nearest if labels[i] == c) for c in counts}
    return min(counts, key=lambda c: (-counts[c], summed[c], c))


def test_single_item():
    model = knn_fit(np.ones((1, 4, 4)), [3], k=1)
    for q in (np.zeros((4, 4)), np.full((4, 4), 9.0)):
        assert knn_predict(model, q) == 3


def test_duplicate_vectors_lowest_index():
    x = np.zeros((3, 2, 2))
    assert knn_predict(knn_fit(x, [4, 1, 2], k=1), np.ones((2, 2))) == 4
    assert knn_predict(knn_fit(x, [1, 4, 2], k=1), np.ones((2, 2))) == 1


def test_model_size_and_verbatim():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((100, 96, 96))
    model = knn_fit(x, rng.integers(0, 7, 100))
    assert len(model) == 100 and model.vectors.shape == (100, 9216)
    assert np.array_equal(model.vectors[17], x[17].ravel())


def test_exact_match_and_majority():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20, 6))
    y = rng.integers(0, 7, 20)
    assert knn_predict(knn_fit(x, y, k=1), x[13]) == y[13]
    x3 = np.array([[0.0], [1.0], [2.0], [10.0]])
    assert knn_predict(knn_fit(x3, [2, 5, 2, 5], k=3), np.array([0.9])) == 2


def test_vote_tie_rules():
    # one vote each: the closer neighbour wins
    x = np.array([[0.0], [3.0]])
    assert knn_predict(knn_fit(x, [6, 1], k=2), np.array([1.0])) == 6
    # equal counts and equal summed distance: lower label wins
    x = np.array([[-1.0], [1.0]])
    assert knn_predict(knn_fit(x, [5, 2], k=2), np.array([0.0])) == 2


def test_fit_errors():
    with pytest.raises(ValueError):
        knn_fit(np.zeros((0, 4)), [], k=1)
    with pytest.raises(ValueError, match="exceeds"):
        knn_fit(np.zeros((3, 4)), [0, 1, 2], k=4)
    with pytest.raises(ValueError):
        knn_fit(np.zeros((3, 4)), [0, 1], k=1)
    with pytest.raises(ValueError):
        knn_fit(np.zeros((3, 4)), [0, 1, 2], k=0)
    with pytest.raises(ValueError):
        knn_predict(knn_fit(np.zeros((3, 4)), [0, 1, 2], k=1), np.zeros(5))


def test_matches_oracle_500_cases():
    # small integer coordinates keep distances exact and make ties common
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n, d = int(rng.integers(1, 15)), int(rng.integers(1, 5))
        x = rng.integers(-3, 4, (n, d)).astype(float)
        y = rng.integers(0, 4, n)
        k = int(rng.integers(1, n + 1))
        q = rng.integers(-3, 4, (4, d)).astype(float)
        got = knn_predict_batch(knn_fit(x, y, k), q)
        want = [oracle(x.tolist(), y.tolist(), k, row) for row in q.tolist()]
        assert got.tolist() == want


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(1, 7))
def test_permutation_invariant(seed, n, k):
    rng = np.random.default_rng(seed)
    k = min(k, n)
    # continuous coordinates: distinct distances, so no tie rule is exercised
    x = rng.standard_normal((n, 3))
    y = rng.integers(0, 7, n)
    q = rng.standard_normal((5, 3))
    perm = rng.permutation(n)
    a = knn_predict_batch(knn_fit(x, y, k), q)
    b = knn_predict_batch(knn_fit(x[perm], y[perm], k), q)
    assert np.array_equal(a, b)
