import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from ovc.checks import brute_force_max
from ovc.hungarian import hungarian_max, solve_min


def total(scores, pairs):
    return sum(scores[i, j] for i, j in pairs)


def test_identity_dominant():
    assert hungarian_max(np.array([[1.0, 0.0], [0.0, 1.0]])) == [(0, 0), (1, 1)]


def test_anti_diagonal():
    assert hungarian_max(np.array([[0.0, 1.0], [1.0, 0.0]])) == [(0, 1), (1, 0)]


def test_empty():
    assert hungarian_max(np.zeros((0, 3))) == []
    assert hungarian_max(np.zeros((2, 0))) == []


def test_rejects_nonfinite():
    with pytest.raises(ValueError):
        hungarian_max(np.array([[np.inf]]))


def test_exhaustive_up_to_six():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, m = rng.integers(1, 7, size=2)
        s = rng.uniform(-1, 1, size=(n, m))
        pairs = hungarian_max(s)
        assert len(pairs) == min(n, m)
        assert len({i for i, _ in pairs}) == len({j for _, j in pairs}) == len(pairs)
        assert total(s, pairs) == pytest.approx(brute_force_max(s), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_agrees_with_scipy(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 9, size=2)
    s = rng.normal(size=(n, m))
    rows, cols = linear_sum_assignment(s, maximize=True)
    assert total(s, hungarian_max(s)) == pytest.approx(s[rows, cols].sum(), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_positive_scaling_keeps_assignment(seed, c):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 4, size=(5, 5)).astype(float)
    assert hungarian_max(s * c) == hungarian_max(s)


def test_ties_give_lexicographically_smallest():
    assert list(solve_min(np.zeros((3, 3)))) == [0, 1, 2]
    s = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    assert hungarian_max(s) == [(0, 0), (1, 1), (2, 2)]


def test_ties_match_enumeration_order():
    rng = np.random.default_rng(7)
    for _ in range(50):
        c = rng.integers(0, 3, size=(4, 4)).astype(float)
        best = min(sum(c[i, p[i]] for i in range(4)) for p in itertools.permutations(range(4)))
        first = next(p for p in itertools.permutations(range(4))
                     if sum(c[i, p[i]] for i in range(4)) == best)
        assert tuple(solve_min(c)) == first
