"""Grid-guided query selection and windowed inter-frame query association."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FrameQuery:
    frame: int
    position: tuple[int, int]
    grid_cell: tuple[int, int]
    feature: np.ndarray
    embedding: np.ndarray
    peak_value: float


@dataclass
class AlignedQuerySet:
    """``queries[t][n]`` is the query standing for object slot ``n`` in frame ``t``."""

    queries: list[list[FrameQuery]]
    central_frame: int
    grid: tuple[int, int]


def class_agnostic_response(activation: np.ndarray) -> np.ndarray:
    """Pointwise max over the class axis of a ``[c, T, H0, W0]`` map."""
    s = np.asarray(activation, dtype=np.float64)
    if s.ndim != 4 or s.shape[0] < 1:
        raise ValueError(f"activation map must be [c, T, H0, W0], got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("activation map holds non-finite values")
    return s.max(axis=0)


def cell_bounds(length: int, cells: int) -> list[tuple[int, int]]:
    """Even split of ``range(length)``; the last cell absorbs the remainder."""
    base = length // cells
    bounds = [(i * base, (i + 1) * base) for i in range(cells)]
    bounds[-1] = (bounds[-1][0], length)
    return bounds


def grid_select(response: np.ndarray, grid: tuple[int, int],
                features: np.ndarray, embeddings: np.ndarray) -> list[list[FrameQuery]]:
    """Pick the peak pixel of every grid cell in every frame.

    Ties go to the first pixel in row-major order inside the cell, i.e. the
    top-left-most one.

    Returns:
        ``out[t][gy * Gx + gx]`` for each frame ``t``.
    """
    response = np.asarray(response, dtype=np.float64)
    t_len, h0, w0 = response.shape
    gy_n, gx_n = grid
    if gy_n < 1 or gx_n < 1 or gy_n > h0 or gx_n > w0:
        raise ValueError(f"grid {grid} does not fit a {h0}x{w0} map")
    features = np.asarray(features, dtype=np.float64)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if features.shape[1:] != response.shape or embeddings.shape[1:] != response.shape:
        raise ValueError("feature/embedding maps must match the response's [T, H0, W0]")
    rows = cell_bounds(h0, gy_n)
    cols = cell_bounds(w0, gx_n)
    out = []
    for t in range(t_len):
        frame_queries = []
        for gy, (r0, r1) in enumerate(rows):
            for gx, (c0, c1) in enumerate(cols):
                cell = response[t, r0:r1, c0:c1]
                dy, dx = np.unravel_index(np.argmax(cell), cell.shape)
                y, x = r0 + int(dy), c0 + int(dx)
                frame_queries.append(FrameQuery(
                    frame=t,
                    position=(y, x),
                    grid_cell=(gy, gx),
                    feature=features[:, t, y, x].copy(),
                    embedding=embeddings[:, t, y, x].copy(),
                    peak_value=float(response[t, y, x]),
                ))
        out.append(frame_queries)
    return out


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def associate_frames(queries: list[list[FrameQuery]], t_c: int, w: int = 5) -> AlignedQuerySet:
    """Align every frame's queries to the central frame's grid slots.

    For slot ``n`` and frame ``t``, candidates are the queries whose grid
    cell is within Chebyshev radius ``w * |t - t_c|`` of slot ``n``'s cell.
    The winner has the highest cosine similarity to the central query;
    ties go to the nearer cell, then the lower slot index. Several slots
    may pick the same query.
    """
    t_len = len(queries)
    if not 0 <= t_c < t_len:
        raise ValueError(f"central frame {t_c} outside [0, {t_len})")
    if w < 0:
        raise ValueError("window base radius must be >= 0")
    central = queries[t_c]
    cells = np.array([q.grid_cell for q in central])
    grid = (int(cells[:, 0].max()) + 1, int(cells[:, 1].max()) + 1)
    aligned: list[list[FrameQuery]] = []
    for t in range(t_len):
        if t == t_c:
            aligned.append(list(central))
            continue
        radius = w * abs(t - t_c)
        frame = queries[t]
        frame_cells = np.array([q.grid_cell for q in frame])
        row = []
        for anchor in central:
            dist = np.abs(frame_cells - np.array(anchor.grid_cell)).max(axis=1)
            best_key = None
            best = None
            for m in np.flatnonzero(dist <= radius):
                key = (-cosine(anchor.embedding, frame[m].embedding), int(dist[m]), int(m))
                if best_key is None or key < best_key:
                    best_key, best = key, frame[m]
            row.append(best)
        aligned.append(row)
    return AlignedQuerySet(queries=aligned, central_frame=t_c, grid=grid)
