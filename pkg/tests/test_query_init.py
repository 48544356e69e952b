import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovc.checks import _queries_from_embeddings, scan_peak
from ovc.query_init import (associate_frames, cell_bounds, class_agnostic_response,
                            cosine, grid_select)


def maps(t, h, w, d=3, de=2, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(d, t, h, w)), rng.normal(size=(de, t, h, w))


class TestResponse:
    def test_single_class_identity(self):
        s = np.random.default_rng(0).normal(size=(1, 2, 3, 3))
        assert np.array_equal(class_agnostic_response(s), s[0])

    def test_max(self):
        s = np.zeros((2, 1, 1, 1))
        s[0, 0, 0, 0], s[1, 0, 0, 0] = 0.2, 0.7
        assert class_agnostic_response(s)[0, 0, 0] == 0.7

    def test_matches_pixel_scan(self):
        s = np.random.default_rng(1).normal(size=(3, 2, 4, 5))
        out = class_agnostic_response(s)
        for idx in np.ndindex(out.shape):
            assert out[idx] == max(s[(c,) + idx] for c in range(3))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            class_agnostic_response(np.full((1, 1, 2, 2), np.nan))


class TestGridSelect:
    def test_cell_bounds_remainder_to_last(self):
        assert cell_bounds(7, 3) == [(0, 2), (2, 4), (4, 7)]

    def test_constant_map_picks_top_left(self):
        f, e = maps(1, 6, 6)
        out = grid_select(np.ones((1, 6, 6)), (2, 3), f, e)
        assert [q.position for q in out[0]] == [(0, 0), (0, 2), (0, 4), (3, 0), (3, 2), (3, 4)]

    def test_hot_pixels(self):
        resp = np.zeros((1, 4, 4))
        hot = [(1, 0), (0, 3), (2, 1), (3, 2)]
        for y, x in hot:
            resp[0, y, x] = 1
        f, e = maps(1, 4, 4)
        out = grid_select(resp, (2, 2), f, e)
        assert [q.position for q in out[0]] == hot
        q = out[0][1]
        assert np.array_equal(q.feature, f[:, 0, 0, 3])
        assert np.array_equal(q.embedding, e[:, 0, 0, 3])
        assert q.peak_value == 1.0 and q.grid_cell == (0, 1)

    def test_grid_too_large(self):
        f, e = maps(1, 3, 3)
        with pytest.raises(ValueError):
            grid_select(np.zeros((1, 3, 3)), (4, 1), f, e)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_peaks_dominate_cells(self, seed):
        rng = np.random.default_rng(seed)
        t, h, w = 2, int(rng.integers(1, 10)), int(rng.integers(1, 10))
        gy, gx = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
        resp = rng.integers(0, 3, size=(t, h, w)).astype(float)
        f, e = maps(t, h, w, seed=seed % 1000)
        out = grid_select(resp, (gy, gx), f, e)
        rows, cols = cell_bounds(h, gy), cell_bounds(w, gx)
        for fr in range(t):
            assert len(out[fr]) == gy * gx
            for n, q in enumerate(out[fr]):
                (r0, r1), (c0, c1) = rows[n // gx], cols[n % gx]
                y, x = q.position
                assert r0 <= y < r1 and c0 <= x < c1
                assert q.peak_value == resp[fr, r0:r1, c0:c1].max()
                assert (y - r0, x - c0) == scan_peak(resp[fr, r0:r1, c0:c1])


class TestAssociate:
    def test_w0_identity(self):
        emb = np.random.default_rng(2).normal(size=(3, 3, 3, 4))
        out = associate_frames(_queries_from_embeddings(emb), 1, 0)
        for t in range(3):
            assert [q.grid_cell for q in out.queries[t]] == [(y, x) for y in range(3) for x in range(3)]

    def test_central_frame_copied(self):
        emb = np.random.default_rng(3).normal(size=(2, 2, 2, 4))
        qs = _queries_from_embeddings(emb)
        out = associate_frames(qs, 0, 3)
        assert out.queries[0] == qs[0]

    def test_one_cell_shift(self):
        base = np.random.default_rng(4).normal(size=(2, 4, 4))
        emb = np.stack([base[:, 1:], base[:, :-1]])  # frame 1 moved right by a cell
        out = associate_frames(_queries_from_embeddings(emb), 0, 1)
        assert out.queries[1][0].grid_cell == (0, 1)
        assert out.queries[1][4].grid_cell == (1, 2)

    def test_tie_breaks(self):
        emb = np.ones((2, 3, 3, 2))
        out = associate_frames(_queries_from_embeddings(emb), 0, 2)
        # equal similarity everywhere: nearest cell, which is the cell itself
        assert [q.grid_cell for q in out.queries[1]] == [(y, x) for y in range(3) for x in range(3)]
        # when the own cell is worse, nearest equal-best cell with lowest index wins
        emb[1, 1, 1] = [-1.0, 0.0]
        out = associate_frames(_queries_from_embeddings(emb), 0, 2)
        assert out.queries[1][4].grid_cell == (0, 0)

    def test_bad_central_frame(self):
        with pytest.raises(ValueError):
            associate_frames(_queries_from_embeddings(np.ones((2, 1, 1, 2))), 2, 1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_window_and_superset(self, seed):
        rng = np.random.default_rng(seed)
        t_len, gy, gx = 4, 4, 5
        qs = _queries_from_embeddings(rng.normal(size=(t_len, gy, gx, 3)))
        t_c = int(rng.integers(t_len))
        prev = None
        for w in range(4):
            out = associate_frames(qs, t_c, w)
            sims = []
            for t in range(t_len):
                for n, q in enumerate(out.queries[t]):
                    anchor = qs[t_c][n]
                    dist = max(abs(q.grid_cell[0] - anchor.grid_cell[0]),
                               abs(q.grid_cell[1] - anchor.grid_cell[1]))
                    assert dist <= w * abs(t - t_c)
                    sims.append(cosine(anchor.embedding, q.embedding))
            if prev is not None:
                assert all(s >= p for s, p in zip(sims, prev))
            prev = sims
