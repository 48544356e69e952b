"""Near-online clip-by-clip tracker with a memory pool.

Each clip's confident detections are scored against the tracks held in
memory (mask IoU over shared frames plus embedding cosine), matched with
the Hungarian method, and either extend an existing track or open a new
one. Tracks not seen in the last ``horizon`` clips are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ovc.clip_inference import Detection, filter_detections
from ovc.geometry import binarize, mask_iou
from ovc.hungarian import hungarian_max
from ovc.query_init import cosine

log = logging.getLogger(__name__)


class MalformedClipSequence(ValueError):
    pass


@dataclass
class TrackEntry:
    clip_index: int
    frames: tuple[int, ...]
    masks: np.ndarray
    embedding: np.ndarray
    confidence: float


@dataclass
class Track:
    id: int
    class_id: int
    entries: list[TrackEntry] = field(default_factory=list)

    @property
    def reference_embedding(self) -> np.ndarray:
        return self.entries[-1].embedding

    def frame_masks(self) -> dict[int, np.ndarray]:
        """Per-frame masks in memory; later clips override overlapped frames."""
        out: dict[int, np.ndarray] = {}
        for entry in self.entries:
            for k, f in enumerate(entry.frames):
                out[f] = entry.masks[k]
        return out


@dataclass
class MemoryPool:
    horizon: int = 10
    tracks: list[Track] = field(default_factory=list)
    next_id: int = 0

    def evict(self, current_clip: int) -> None:
        """Keep only entries from the previous ``horizon`` clips."""
        oldest = current_clip - self.horizon
        kept = []
        for track in self.tracks:
            track.entries = [e for e in track.entries if e.clip_index >= oldest]
            if track.entries:
                kept.append(track)
            else:
                log.debug("evicting track %d at clip %d", track.id, current_clip)
        self.tracks = kept

    def spawn(self, class_id: int) -> Track:
        track = Track(id=self.next_id, class_id=class_id)
        self.next_id += 1
        self.tracks.append(track)
        return track


@dataclass
class ScoreMatrix:
    values: np.ndarray
    beta1: float
    beta2: float


def _shared_iou(track: Track, det: Detection, clip_frames: Sequence[int]) -> float:
    memory = track.frame_masks()
    shared = [k for k, f in enumerate(clip_frames) if f in memory]
    if not shared:
        return 0.0
    a = np.stack([memory[clip_frames[k]] for k in shared])
    b = det.masks[shared]
    return mask_iou(a, b)


def score_matrix(pool: MemoryPool, dets: Sequence[Detection], clip_frames: Sequence[int],
                 beta1: float = 1.0, beta2: float = 1.0) -> ScoreMatrix:
    """``beta1 * mIoU + beta2 * cosine`` for every (memory track, detection) pair."""
    clip_frames = list(clip_frames)
    values = np.zeros((len(pool.tracks), len(dets)))
    for m, track in enumerate(pool.tracks):
        ref = track.reference_embedding
        for c, det in enumerate(dets):
            iou = _shared_iou(track, det, clip_frames) if beta1 else 0.0
            sim = cosine(ref, det.embedding) if beta2 else 0.0
            values[m, c] = beta1 * iou + beta2 * sim
    return ScoreMatrix(values, beta1, beta2)


def associate_clip(pool: MemoryPool, dets: Sequence[Detection], clip_index: int,
                   clip_frames: Sequence[int], beta1: float = 1.0, beta2: float = 1.0,
                   tau_new: float = 0.2, class_consistent: bool = False) -> list[int]:
    """Match one clip's detections to the pool and update it in place.

    ``dets`` must already be confidence-filtered.

    Returns:
        The track id given to each detection, in input order.
    """
    clip_frames = tuple(int(f) for f in clip_frames)
    pool.evict(clip_index)
    scores = score_matrix(pool, dets, clip_frames, beta1, beta2).values
    allowed = np.ones(scores.shape, dtype=bool)
    if class_consistent:
        for m, track in enumerate(pool.tracks):
            for c, det in enumerate(dets):
                allowed[m, c] = track.class_id == det.class_id
        floor = -abs(beta2) - abs(beta1) - 1.0
        scores = np.where(allowed, scores, floor)

    ids: list[int | None] = [None] * len(dets)
    targets: list[Track | None] = [None] * len(dets)
    for m, c in hungarian_max(scores):
        if allowed[m, c] and scores[m, c] >= tau_new:
            targets[c] = pool.tracks[m]
    for c, det in enumerate(dets):
        track = targets[c] or pool.spawn(det.class_id)
        track.entries.append(TrackEntry(
            clip_index=clip_index,
            frames=clip_frames,
            masks=np.asarray(det.masks, dtype=np.float64),  # binarized only when scored
            embedding=det.embedding,
            confidence=det.confidence,
        ))
        ids[c] = track.id
    return ids


@dataclass
class VideoTrack:
    id: int
    class_id: int
    frames: dict[int, np.ndarray] = field(default_factory=dict)


def run_near_online(clips: Sequence, config) -> dict[int, VideoTrack]:
    """Track every clip in order and assemble whole-video per-frame masks.

    Args:
        clips: :class:`ovc.records.ClipRecord` objects ordered by clip index.
        config: a :class:`ovc.config.RunConfig`.

    Returns:
        Mapping of track id to its per-frame binary masks. Frames shared by
        consecutive clips take the later clip's mask.
    """
    _check_sequence(clips)
    pool = MemoryPool(horizon=config.t_mem)
    video: dict[int, VideoTrack] = {}
    for rec in clips:
        dets = filter_detections(rec.detections, config.tau_conf)
        ids = associate_clip(pool, dets, rec.clip_index, rec.frames, config.beta1,
                             config.beta2, config.tau_new, config.class_consistent)
        # the later clip owns every frame it covers
        for vt in video.values():
            for f in rec.frames:
                vt.frames.pop(int(f), None)
        for tid, det in zip(ids, dets):
            vt = video.setdefault(tid, VideoTrack(id=tid, class_id=det.class_id))
            masks = binarize(det.masks)
            for k, f in enumerate(rec.frames):
                vt.frames[int(f)] = masks[k]
    return {tid: vt for tid, vt in sorted(video.items()) if vt.frames}


def _check_sequence(clips: Sequence) -> None:
    prev_index = None
    prev_start = None
    for rec in clips:
        frames = list(rec.frames)
        if not frames:
            raise MalformedClipSequence(f"clip {rec.clip_index} has no frames")
        if any(b - a != 1 for a, b in zip(frames, frames[1:])):
            raise MalformedClipSequence(f"clip {rec.clip_index} frames are not contiguous")
        if prev_index is not None:
            if rec.clip_index <= prev_index:
                raise MalformedClipSequence(
                    f"clip index {rec.clip_index} does not follow {prev_index}")
            if frames[0] <= prev_start:
                raise MalformedClipSequence(
                    f"clip {rec.clip_index} starts at frame {frames[0]}, not after {prev_start}")
        for d in rec.detections:
            if d.masks.shape[0] != len(frames):
                raise MalformedClipSequence(
                    f"clip {rec.clip_index} detection masks cover {d.masks.shape[0]} frames, "
                    f"expected {len(frames)}")
        prev_index, prev_start = rec.clip_index, frames[0]
