"""Linear assignment by the shortest-augmenting-path Hungarian method.

Among all optimal assignments the one returned is the lexicographically
smallest column sequence (row 0's column first, then row 1's, ...) of the
square-padded problem, so results are fully deterministic under ties.
"""

from __future__ import annotations

import numpy as np


def _solve_square(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimum-cost perfect matching on a square matrix.

    Returns the row-to-column assignment and the row/column dual potentials.
    """
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int), np.zeros(0), np.zeros(0)
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row matched to column j (1-based, 0 = none)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            cols = np.flatnonzero(free) + 1
            better = cur[cols - 1] < minv[cols]
            minv[cols[better]] = cur[cols - 1][better]
            way[cols[better]] = j0
            j1 = cols[np.argmin(minv[cols])]
            delta = minv[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = np.empty(n, dtype=int)
    assign[p[1:] - 1] = np.arange(n)
    return assign, u[1:], v[1:]


def _total(cost: np.ndarray, assign: np.ndarray) -> float:
    return float(sum(cost[i, assign[i]] for i in range(len(assign))))


def solve_min(cost: np.ndarray) -> np.ndarray:
    """Lexicographically smallest optimal assignment of a square cost matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    assign, u, v = _solve_square(cost)
    if n <= 1:
        return assign
    best = _total(cost, assign)
    tol = 1e-9 * max(1.0, float(np.abs(cost).max())) * n
    reduced = cost - u[:, None] - v[None, :]
    for i in range(n):
        taken = set(assign[:i].tolist())
        for j in range(assign[i]):
            # only tight edges can be part of an optimal assignment
            if j in taken or reduced[i, j] > tol:
                continue
            rows = np.arange(i + 1, n)
            cols = np.array([c for c in range(n) if c not in taken and c != j], dtype=int)
            sub_assign, _, _ = _solve_square(cost[np.ix_(rows, cols)])
            trial = assign.copy()
            trial[i] = j
            trial[i + 1:] = cols[sub_assign]
            if _total(cost, trial) <= best + tol:
                assign = trial
                break
    return assign


def hungarian_max(scores: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-total one-to-one assignment of size ``min(n, m)``.

    Scores are negated into costs; rectangular inputs are padded to square
    with a constant sentinel cost that every real entry undercuts.

    Returns:
        Sorted ``(row, col)`` pairs.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError(f"score matrix must be 2-D, got shape {s.shape}")
    n, m = s.shape
    if n == 0 or m == 0:
        return []
    if not np.all(np.isfinite(s)):
        raise ValueError("score matrix must be finite")
    size = max(n, m)
    cost = -s
    sentinel = float(np.abs(cost).max()) + 1.0
    padded = np.full((size, size), sentinel)
    padded[:n, :m] = cost
    assign = solve_min(padded)
    return [(i, int(assign[i])) for i in range(n) if assign[i] < m]
