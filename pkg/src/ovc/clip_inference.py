"""Clip-level query aggregation, mask synthesis and confidence filtering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

WEIGHT_TOL = 1e-6
RENORM_TOL = 1e-3
# largest double below 1; keeps probabilities strictly inside (0, 1)
_ONE_MINUS = np.nextafter(1.0, 0.0)


@dataclass
class Detection:
    """One instance predicted for a clip.

    ``masks`` is ``[T, H, W]`` over the clip's frames, either probabilities
    or binary.
    """

    class_id: int
    confidence: float
    embedding: np.ndarray
    masks: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        self.masks = np.asarray(self.masks, dtype=np.float64)


@dataclass
class ClipQuerySet:
    per_frame: np.ndarray
    time_weights: np.ndarray
    aggregated: np.ndarray = field(init=False)

    def __post_init__(self):
        self.aggregated = aggregate_queries(self.per_frame, self.time_weights)


def aggregate_queries(per_frame: np.ndarray, time_weights: np.ndarray) -> np.ndarray:
    """Time-weighted sum of frame-level queries, ``[T, N, d] x [T, N] -> [N, d]``.

    Weights must be nonnegative and sum to one per query. Sums within 1e-3
    of one are renormalized; anything further off is rejected.
    """
    q = np.asarray(per_frame, dtype=np.float64)
    w = np.asarray(time_weights, dtype=np.float64)
    if q.ndim != 3 or w.shape != q.shape[:2]:
        raise ValueError(f"expected [T, N, d] queries and [T, N] weights, got {q.shape}, {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("time weights must be finite and nonnegative")
    sums = w.sum(axis=0)
    off = np.abs(sums - 1.0)
    if np.any(off > RENORM_TOL):
        bad = int(np.argmax(off))
        raise ValueError(f"time weights of query {bad} sum to {sums[bad]}, not 1")
    if np.any(off > WEIGHT_TOL):
        w = w / sums
    return np.einsum("tn,tnd->nd", w, q)


def mask_logits(q: np.ndarray, mask_features: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    d = np.asarray(mask_features, dtype=np.float64)
    if q.ndim != 2 or d.ndim != 4 or q.shape[1] != d.shape[0]:
        raise ValueError(f"query dim {q.shape} does not match mask features {d.shape}")
    return np.einsum("nk,kthw->nthw", q, d)


def _logistic(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, np.finfo(np.float64).tiny, _ONE_MINUS)


def synthesize_masks(q: np.ndarray, mask_features: np.ndarray) -> np.ndarray:
    """Per-query mask probabilities ``[N, T, H, W]`` from a linear combination
    of the mask features followed by the logistic function."""
    return _logistic(mask_logits(q, mask_features))


def filter_detections(dets: Sequence[Detection], tau_conf: float = 0.3) -> list[Detection]:
    if not 0.0 <= tau_conf <= 1.0:
        raise ValueError(f"tau_conf must be in [0, 1], got {tau_conf}")
    return [d for d in dets if d.confidence >= tau_conf]
