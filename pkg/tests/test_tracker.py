import numpy as np
import pytest

from ovc.clip_inference import Detection
from ovc.config import RunConfig
from ovc.records import ClipRecord
from ovc.synthetic import crossing, disappear, render_scenario, static
from ovc.tracker import (MalformedClipSequence, MemoryPool, Track, TrackEntry, associate_clip,
                         run_near_online, score_matrix)

A = np.array([[1.0, 1.0], [0.0, 0.0]])
B = np.array([[1.0, 0.0], [1.0, 0.0]])
E0, E1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])


def pool_with(*items, clip_index=0):
    pool = MemoryPool()
    for mask, emb in items:
        t = pool.spawn(0)
        t.entries.append(TrackEntry(clip_index, (0,), mask[None], emb, 1.0))
    return pool


def det(mask, emb, conf=0.9, cls=0):
    return Detection(cls, conf, np.asarray(emb, float), np.asarray(mask, float)[None])


class TestScoreMatrix:
    def test_hand_case(self):
        pool = pool_with((A, E0), (B, E1))
        s = score_matrix(pool, [det(A, E0), det(B, E1)], [0]).values
        assert np.allclose(s, [[2, 1 / 3], [1 / 3, 2]])

    def test_beta_terms(self):
        pool = pool_with((A, E0))
        d = [det(B, E0)]
        assert score_matrix(pool, d, [0], 1, 0).values[0, 0] == pytest.approx(1 / 3)
        assert score_matrix(pool, d, [0], 0, 1).values[0, 0] == pytest.approx(1.0)
        assert score_matrix(pool, d, [0], 2, 3).values[0, 0] == pytest.approx(2 / 3 + 3)

    def test_no_shared_frames_gives_zero_iou(self):
        pool = pool_with((A, E0))
        assert score_matrix(pool, [det(A, E1)], [5], 1, 1).values[0, 0] == 0.0

    def test_bounded(self):
        rng = np.random.default_rng(0)
        pool = pool_with(*[((rng.uniform(size=(2, 2)) > 0.5).astype(float), rng.normal(size=3))
                           for _ in range(4)])
        dets = [det((rng.uniform(size=(2, 2)) > 0.5), rng.normal(size=3)) for _ in range(5)]
        s = score_matrix(pool, dets, [0], 1.5, 0.5).values
        assert s.shape == (4, 5)
        assert np.all(s >= -0.5 - 1e-12) and np.all(s <= 2.0 + 1e-12)


class TestAssociate:
    def test_empty_pool_spawns(self):
        pool = MemoryPool()
        ids = associate_clip(pool, [det(A, E0), det(B, E1)], 0, [0])
        assert ids == [0, 1] and pool.next_id == 2

    def test_identical_detection_keeps_id(self):
        pool = pool_with((A, E0))
        s = score_matrix(pool, [det(A, E0)], [0]).values
        assert s[0, 0] == pytest.approx(2.0)
        assert associate_clip(pool, [det(A, E0)], 1, [0]) == [0]
        assert len(pool.tracks[0].entries) == 2

    def test_crossing_order_follows_embeddings(self):
        pool = pool_with((A, E0), (B, E1))
        assert associate_clip(pool, [det(B, E1), det(A, E0)], 1, [0]) == [1, 0]

    def test_low_score_spawns(self):
        pool = pool_with((A, E0))
        z = np.zeros((2, 2))
        assert associate_clip(pool, [det(z, E1)], 1, [1], tau_new=0.2) == [1]

    def test_class_consistent(self):
        pool = pool_with((A, E0))
        ids = associate_clip(pool, [det(A, E0, cls=3)], 1, [0], class_consistent=True)
        assert ids == [1]

    def test_one_to_one(self):
        rng = np.random.default_rng(1)
        pool = pool_with(*[(A, rng.normal(size=2)) for _ in range(3)])
        ids = associate_clip(pool, [det(A, rng.normal(size=2)) for _ in range(6)], 1, [0])
        assert len(set(ids)) == 6

    def test_eviction(self):
        pool = pool_with((A, E0))
        pool.horizon = 2
        pool.evict(2)
        assert len(pool.tracks) == 1
        pool.evict(3)
        assert pool.tracks == []


def test_reference_embedding_is_latest():
    t = Track(0, 0, [TrackEntry(0, (0,), A[None], E0, 1.0), TrackEntry(1, (1,), A[None], E1, 1.0)])
    assert np.array_equal(t.reference_embedding, E1)


def test_single_clip():
    r = render_scenario(static(0, n_frames=4), with_maps=False)
    tracks = run_near_online(r.clips, RunConfig())
    assert sorted(tracks) == [0, 1, 2]
    assert all(sorted(vt.frames) == [0, 1, 2, 3] for vt in tracks.values())


def test_static_keeps_ids_across_clips():
    r = render_scenario(static(0), with_maps=False)
    tracks = run_near_online(r.clips, RunConfig())
    assert len(tracks) == 3
    assert all(sorted(vt.frames) == list(range(8)) for vt in tracks.values())


def test_disappearance_within_memory_keeps_id():
    r = render_scenario(disappear(0, gap=3), with_maps=False)
    short = run_near_online(r.clips, RunConfig(t_mem=1))
    long = run_near_online(r.clips, RunConfig(t_mem=10))
    assert len(long) == 2 and len(short) == 3


def test_crossing_combined_vs_iou_only():
    r = render_scenario(crossing(0), with_maps=False)
    assert len(run_near_online(r.clips, RunConfig(overlap=1))) == 2
    assert len(run_near_online(r.clips, RunConfig(overlap=1, beta2=0.0))) > 2


def test_malformed_sequences():
    d = Detection(0, 0.9, E0, np.zeros((2, 2, 2)))
    ok = ClipRecord(0, [0, 1], (2, 2), [d])
    with pytest.raises(MalformedClipSequence):
        run_near_online([ok, ClipRecord(0, [1, 2], (2, 2), [d])], RunConfig())
    with pytest.raises(MalformedClipSequence):
        run_near_online([ClipRecord(0, [0, 2], (2, 2), [d])], RunConfig())
    with pytest.raises(MalformedClipSequence):
        run_near_online([ClipRecord(0, [0, 1, 2], (2, 2), [d])], RunConfig())
    with pytest.raises(MalformedClipSequence):
        run_near_online([ok, ClipRecord(1, [0, 1], (2, 2), [d])], RunConfig())


def test_deterministic():
    r = render_scenario(crossing(3), with_maps=False)
    a = run_near_online(r.clips, RunConfig(overlap=1))
    b = run_near_online(r.clips, RunConfig(overlap=1))
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].frames.keys() == b[k].frames.keys()
        assert all(np.array_equal(a[k].frames[f], b[k].frames[f]) for f in a[k].frames)
