import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovc.clip_inference import (ClipQuerySet, Detection, aggregate_queries, filter_detections,
                                mask_logits, synthesize_masks)


def test_one_hot_weights_pick_frame():
    q = np.random.default_rng(0).normal(size=(3, 2, 4))
    w = np.zeros((3, 2))
    w[1] = 1
    assert np.array_equal(aggregate_queries(q, w), q[1])


def test_uniform_weights_average():
    q = np.random.default_rng(1).normal(size=(4, 3, 5))
    assert np.allclose(aggregate_queries(q, np.full((4, 3), 0.25)), q.mean(axis=0))


def test_hand_weighted_sum():
    q = np.stack([np.zeros((1, 4)), np.ones((1, 4))])
    w = np.array([[0.25], [0.75]])
    assert np.array_equal(aggregate_queries(q, w), np.full((1, 4), 0.75))


def test_near_normalized_weights_are_renormalized():
    q = np.random.default_rng(2).normal(size=(2, 1, 3))
    w = np.array([[0.5], [0.5005]])
    out = aggregate_queries(q, w)
    assert np.allclose(out, (0.5 * q[0] + 0.5005 * q[1]) / 1.0005)


def test_unnormalized_weights_rejected():
    with pytest.raises(ValueError):
        aggregate_queries(np.zeros((2, 1, 3)), np.array([[0.5], [0.6]]))
    with pytest.raises(ValueError):
        aggregate_queries(np.zeros((2, 1, 3)), np.array([[1.5], [-0.5]]))


def test_clip_query_set():
    q = np.random.default_rng(3).normal(size=(2, 3, 4))
    cqs = ClipQuerySet(q, np.full((2, 3), 0.5))
    assert np.allclose(cqs.aggregated, q.mean(axis=0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_aggregate_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(3, 5, 4))
    w = rng.uniform(size=(3, 5))
    w /= w.sum(axis=0)
    perm = rng.permutation(5)
    assert np.allclose(aggregate_queries(q[:, perm], w[:, perm]), aggregate_queries(q, w)[perm])


def test_zero_query_gives_half():
    out = synthesize_masks(np.zeros((2, 3)), np.random.default_rng(4).normal(size=(3, 2, 4, 4)))
    assert np.all(out == 0.5)


def test_closed_form():
    out = synthesize_masks(np.array([[2.0]]), np.ones((1, 2, 3, 3)))
    assert np.allclose(out, 1 / (1 + np.exp(-2.0)))
    assert out[0, 0, 0, 0] == pytest.approx(0.8808, abs=1e-4)


def test_matches_naive_contraction():
    rng = np.random.default_rng(5)
    q, d = rng.normal(size=(3, 4)), rng.normal(size=(4, 2, 3, 3))
    logits = mask_logits(q, d)
    for n, t, y, x in np.ndindex(3, 2, 3, 3):
        naive = 0.0
        for k in range(4):
            naive += q[n, k] * d[k, t, y, x]
        assert abs(logits[n, t, y, x] - naive) < 1e-12
        assert abs(synthesize_masks(q, d)[n, t, y, x] - 1 / (1 + np.exp(-naive))) < 1e-12


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        synthesize_masks(np.zeros((2, 3)), np.zeros((4, 1, 2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_logits_linear_and_probs_open_interval(seed):
    rng = np.random.default_rng(seed)
    q1, q2 = rng.normal(size=(2, 3)) * 20, rng.normal(size=(2, 3)) * 20
    d = rng.normal(size=(3, 2, 4, 4))
    assert np.allclose(mask_logits(q1 + q2, d), mask_logits(q1, d) + mask_logits(q2, d),
                       rtol=0, atol=1e-10)
    p = synthesize_masks(q1, d)
    assert np.all((p > 0) & (p < 1))


def _det(conf):
    return Detection(0, conf, np.zeros(2), np.zeros((1, 2, 2)))


def test_filter_detections():
    dets = [_det(0.1), _det(0.4), _det(0.9)]
    assert filter_detections(dets, 0.0) == dets
    assert filter_detections(dets, 0.3) == dets[1:]
    assert filter_detections(dets + [_det(1.0)], 1.0) == [dets[-1]] or \
        [d.confidence for d in filter_detections(dets + [_det(1.0)], 1.0)] == [1.0]


def test_detection_confidence_range():
    with pytest.raises(ValueError):
        _det(1.2)
