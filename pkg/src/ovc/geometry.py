"""Masks, boxes, run-length coding and the IoU family.

Mask volumes are plain numpy arrays shaped ``[T, H, W]``. Ground-truth
volumes are binary; predictions hold probabilities and are binarized at
0.5 before any overlap count.

Boxes use half-open pixel extents ``[x1, x2) x [y1, y2)`` so a single pixel
has area 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

BINARIZE_THRESHOLD = 0.5


class MalformedRLEError(ValueError):
    """Run-length counts do not describe a mask of the declared size."""


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"box corners out of order: {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class RleMask:
    """Row-major run lengths, alternating 0-runs and 1-runs, 0-run first."""

    size: tuple[int, int]
    counts: tuple[int, ...]

    def __post_init__(self):
        h, w = self.size
        if h < 1 or w < 1:
            raise MalformedRLEError(f"RLE size must be positive, got {self.size}")
        if any(c < 0 for c in self.counts):
            raise MalformedRLEError("RLE counts must be nonnegative")
        if sum(self.counts) != h * w:
            raise MalformedRLEError(
                f"RLE counts sum to {sum(self.counts)}, expected {h * w}"
            )
        if any(c == 0 for c in self.counts[1:]):
            raise MalformedRLEError("zero-length run after the leading count")

    def to_json(self) -> dict:
        return {"size": [int(self.size[0]), int(self.size[1])],
                "counts": [int(c) for c in self.counts]}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        return cls(size=tuple(obj["size"]), counts=tuple(obj["counts"]))


@dataclass(frozen=True)
class NeighborSet:
    target_index: int
    neighbors: frozenset[int]


def validate_volume(data: np.ndarray, binary: bool = False) -> np.ndarray:
    """Check the MaskVolume invariants and return ``data`` as float64."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"mask volume must be [T, H, W] with T, H, W >= 1, got {arr.shape}")
    if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
        raise ValueError("mask volume values must lie in [0, 1]")
    if binary and not np.all((arr == 0) | (arr == 1)):
        raise ValueError("binary mask volume holds values other than 0 and 1")
    return arr


def rle_encode(mask: np.ndarray) -> RleMask:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"rle_encode expects a 2-D mask, got shape {m.shape}")
    flat = m.reshape(-1).astype(bool)
    # indices where the value changes, bracketed by the ends
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(size=(int(m.shape[0]), int(m.shape[1])), counts=tuple(runs))


def rle_decode(rle: RleMask) -> np.ndarray:
    h, w = rle.size
    if sum(rle.counts) != h * w:
        raise MalformedRLEError(f"RLE counts sum to {sum(rle.counts)}, expected {h * w}")
    values = np.arange(len(rle.counts)) % 2
    flat = np.repeat(values.astype(np.uint8), rle.counts)
    return flat.reshape(h, w)


def binarize(mask: np.ndarray) -> np.ndarray:
    return np.asarray(mask) >= BINARIZE_THRESHOLD


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU over all voxels jointly; two empty masks score 0."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    ab = binarize(a)
    bb = binarize(b)
    union = np.count_nonzero(ab | bb)
    if union == 0:
        return 0.0
    return np.count_nonzero(ab & bb) / union


def box_iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def mask_to_boxes(mask: np.ndarray) -> list[Optional[Box]]:
    """Tight per-frame box of the nonzero pixels, ``None`` for empty frames."""
    vol = binarize(mask)
    boxes: list[Optional[Box]] = []
    for frame in vol:
        ys = np.flatnonzero(frame.any(axis=1))
        xs = np.flatnonzero(frame.any(axis=0))
        if ys.size == 0:
            boxes.append(None)
            continue
        boxes.append(Box(float(xs[0]), float(ys[0]), float(xs[-1] + 1), float(ys[-1] + 1)))
    return boxes


def max_box_iou(a: Sequence[Optional[Box]], b: Sequence[Optional[Box]]) -> float:
    best = 0.0
    for ba, bb in zip(a, b):
        if ba is None or bb is None:
            continue
        best = max(best, box_iou(ba, bb))
    return best


def neighbor_set(
    boxes: Sequence[Sequence[Optional[Box]]], i: int, epsilon: float = 0.1
) -> NeighborSet:
    """Instances whose box IoU with instance ``i`` exceeds ``epsilon`` in some frame.

    Args:
        boxes: ``boxes[k][t]`` is instance k's box in frame t, or ``None``
            when the instance is absent from that frame.
        i: target instance.
        epsilon: strict threshold on the per-frame maximum IoU.
    """
    if not 0 <= epsilon < 1:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    k = len(boxes)
    if not 0 <= i < k:
        raise IndexError(f"instance index {i} out of range for {k} instances")
    members = frozenset(
        j for j in range(k) if j != i and max_box_iou(boxes[i], boxes[j]) > epsilon
    )
    return NeighborSet(target_index=i, neighbors=members)


def inter_instance_mask(gt: Sequence[np.ndarray] | np.ndarray, o_i: NeighborSet) -> np.ndarray:
    """Union of the neighbours' masks with the target's own pixels removed."""
    gt = np.asarray(gt)
    target = gt[o_i.target_index].astype(bool)
    union = np.zeros(target.shape, dtype=bool)
    for j in sorted(o_i.neighbors):
        union |= gt[j].astype(bool)
    return (union & ~target).astype(np.float64)
