"""ClipRecord and track-dump JSON formats.

A ClipRecord file is one UTF-8 JSON object::

    {
      "clip_index": 0,
      "frames": [0, 1, 2, 3],
      "canvas": [H, W],
      "meta": {"scenario": "crossing", "seed": 7},            # optional
      "activation": {"shape": [c, T, H0, W0], "data": [...]},  # optional
      "features":   {"shape": [d, T, H0, W0], "data": [...]},  # optional
      "embeddings": {"shape": [de, T, H0, W0], "data": [...]}, # optional
      "detections": [
        {"class": 0, "confidence": 0.9, "embedding": [...],
         "masks": [{"size": [H, W], "counts": [...]}, ...]}   # one per frame
      ],
      "gt": {                                                  # optional
        "ids": [0, 1], "classes": [0, 0],
        "masks": [[RLE per frame], ...],
        "boxes": [[[x1, y1, x2, y2] or null per frame], ...]
      }
    }

Dense arrays are stored flat in C order next to an explicit shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ovc.clip_inference import Detection
from ovc.geometry import Box, MalformedRLEError, RleMask, rle_decode, rle_encode
from ovc.tracker import VideoTrack


class RecordError(ValueError):
    """Schema violation; the message names the offending field path."""


class RecordIOError(OSError):
    """The file could not be read or is not complete JSON."""


@dataclass
class GroundTruth:
    ids: list[int]
    classes: list[int]
    masks: np.ndarray  # [K, T, H, W] binary
    boxes: list[list[Optional[Box]]]


@dataclass
class ClipRecord:
    clip_index: int
    frames: list[int]
    canvas: tuple[int, int]
    detections: list[Detection] = field(default_factory=list)
    gt: Optional[GroundTruth] = None
    activation: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None
    embeddings: Optional[np.ndarray] = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClipRecord):
            return NotImplemented
        return record_to_json(self) == record_to_json(other)


def _dense(arr: np.ndarray) -> dict:
    a = np.asarray(arr, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _rle_list(vol: np.ndarray) -> list[dict]:
    return [rle_encode(frame >= 0.5).to_json() for frame in vol]


def record_to_json(rec: ClipRecord) -> dict:
    doc: dict[str, Any] = {
        "clip_index": int(rec.clip_index),
        "frames": [int(f) for f in rec.frames],
        "canvas": [int(rec.canvas[0]), int(rec.canvas[1])],
    }
    if rec.meta:
        doc["meta"] = rec.meta
    for name in ("activation", "features", "embeddings"):
        arr = getattr(rec, name)
        if arr is not None:
            doc[name] = _dense(arr)
    doc["detections"] = [
        {
            "class": int(d.class_id),
            "confidence": float(d.confidence),
            "embedding": [float(x) for x in d.embedding],
            "masks": _rle_list(d.masks),
        }
        for d in rec.detections
    ]
    if rec.gt is not None:
        doc["gt"] = {
            "ids": [int(i) for i in rec.gt.ids],
            "classes": [int(c) for c in rec.gt.classes],
            "masks": [_rle_list(m) for m in rec.gt.masks],
            "boxes": [[None if b is None else b.as_list() for b in row] for row in rec.gt.boxes],
        }
    return doc


def write_clip_record(rec: ClipRecord, path: str | Path) -> None:
    text = json.dumps(record_to_json(rec), separators=(",", ":"), sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _get(obj: Any, key: str, where: str, kind=None):
    if not isinstance(obj, dict):
        raise RecordError(f"{where}: expected an object")
    if key not in obj:
        raise RecordError(f"{where}.{key}: missing field" if where else f"{key}: missing field")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise RecordError(f"{_join(where, key)}: expected {getattr(kind, '__name__', kind)}")
    return value


def _join(where: str, key: str) -> str:
    return f"{where}.{key}" if where else key


def _parse_dense(obj: Any, where: str) -> np.ndarray:
    shape = _get(obj, "shape", where, list)
    data = _get(obj, "data", where, list)
    if int(np.prod(shape)) != len(data):
        raise RecordError(f"{where}.data: {len(data)} values do not fill shape {shape}")
    try:
        return np.asarray(data, dtype=np.float64).reshape(shape)
    except (TypeError, ValueError) as exc:
        raise RecordError(f"{where}.data: {exc}") from None


def _parse_rle(obj: Any, where: str, canvas: tuple[int, int]) -> np.ndarray:
    size = _get(obj, "size", where, list)
    counts = _get(obj, "counts", where, list)
    if tuple(size) != canvas:
        raise RecordError(f"{where}.size: {size} does not match canvas {list(canvas)}")
    try:
        return rle_decode(RleMask(size=tuple(size), counts=tuple(int(c) for c in counts)))
    except (MalformedRLEError, TypeError, ValueError) as exc:
        raise RecordError(f"{where}.counts: {exc}") from None


def _parse_volume(items: Any, where: str, canvas, n_frames: int) -> np.ndarray:
    if not isinstance(items, list):
        raise RecordError(f"{where}: expected a list of RLE masks")
    if len(items) != n_frames:
        raise RecordError(f"{where}: {len(items)} masks for {n_frames} frames")
    frames = [_parse_rle(item, f"{where}[{k}]", canvas) for k, item in enumerate(items)]
    return np.stack(frames).astype(np.float64)


def record_from_json(doc: Any) -> ClipRecord:
    if not isinstance(doc, dict):
        raise RecordError("<root>: expected an object")
    clip_index = _get(doc, "clip_index", "", int)
    frames = [int(f) for f in _get(doc, "frames", "", list)]
    canvas_raw = _get(doc, "canvas", "", list)
    if len(canvas_raw) != 2:
        raise RecordError("canvas: expected [H, W]")
    canvas = (int(canvas_raw[0]), int(canvas_raw[1]))
    rec = ClipRecord(clip_index=clip_index, frames=frames, canvas=canvas,
                     meta=dict(doc.get("meta", {})))
    for name in ("activation", "features", "embeddings"):
        if name in doc:
            arr = _parse_dense(doc[name], name)
            if arr.ndim != 4 or arr.shape[1] != len(frames):
                raise RecordError(f"{name}.shape: expected [*, {len(frames)}, H0, W0], got {list(arr.shape)}")
            setattr(rec, name, arr)
    for k, det in enumerate(_get(doc, "detections", "", list)):
        where = f"detections[{k}]"
        conf = _get(det, "confidence", where, (int, float))
        if not 0 <= conf <= 1:
            raise RecordError(f"{where}.confidence: {conf} outside [0, 1]")
        rec.detections.append(Detection(
            class_id=_get(det, "class", where, int),
            confidence=float(conf),
            embedding=np.asarray(_get(det, "embedding", where, list), dtype=np.float64),
            masks=_parse_volume(_get(det, "masks", where), f"{where}.masks", canvas, len(frames)),
        ))
    if "gt" in doc:
        g = doc["gt"]
        ids = _get(g, "ids", "gt", list)
        classes = _get(g, "classes", "gt", list)
        masks_raw = _get(g, "masks", "gt", list)
        boxes_raw = _get(g, "boxes", "gt", list)
        if not len(ids) == len(classes) == len(masks_raw) == len(boxes_raw):
            raise RecordError("gt: ids, classes, masks and boxes differ in length")
        masks = [_parse_volume(m, f"gt.masks[{k}]", canvas, len(frames))
                 for k, m in enumerate(masks_raw)]
        boxes = []
        for k, row in enumerate(boxes_raw):
            if not isinstance(row, list) or len(row) != len(frames):
                raise RecordError(f"gt.boxes[{k}]: expected one entry per frame")
            try:
                boxes.append([None if b is None else Box(*map(float, b)) for b in row])
            except (TypeError, ValueError) as exc:
                raise RecordError(f"gt.boxes[{k}]: {exc}") from None
        stacked = np.stack(masks) if masks else np.zeros((0, len(frames), *canvas))
        rec.gt = GroundTruth(ids=[int(i) for i in ids], classes=[int(c) for c in classes],
                             masks=stacked, boxes=boxes)
    return rec


def read_clip_record(path: str | Path) -> ClipRecord:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise RecordIOError(f"{path}: not UTF-8 ({exc})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecordIOError(f"{path}: truncated or invalid JSON ({exc})") from None
    try:
        return record_from_json(doc)
    except RecordError as exc:
        raise RecordError(f"{path}: {exc}") from None


def read_clip_dir(directory: str | Path) -> list[ClipRecord]:
    paths = sorted(Path(directory).glob("clip_*.json"))
    records = [read_clip_record(p) for p in paths]
    return sorted(records, key=lambda r: r.clip_index)


def clip_filename(clip_index: int) -> str:
    return f"clip_{clip_index:04d}.json"


# -- track dumps ----------------------------------------------------------

def tracks_to_json(tracks, canvas: tuple[int, int]) -> dict:
    return {
        "canvas": [int(canvas[0]), int(canvas[1])],
        "tracks": [
            {
                "id": int(t.id),
                "class": int(t.class_id),
                "frames": [
                    {"frame": int(f), "mask": rle_encode(t.frames[f]).to_json()}
                    for f in sorted(t.frames)
                ],
            }
            for t in tracks.values()
        ],
    }


def write_tracks(tracks, canvas, path: str | Path) -> None:
    text = json.dumps(tracks_to_json(tracks, canvas), separators=(",", ":"), sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_tracks(path: str | Path) -> tuple[dict[int, VideoTrack], tuple[int, int]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RecordIOError(f"{path}: truncated or invalid JSON ({exc})") from None
    canvas = tuple(_get(doc, "canvas", "", list))
    out = {}
    for k, t in enumerate(_get(doc, "tracks", "", list)):
        where = f"tracks[{k}]"
        vt = VideoTrack(id=_get(t, "id", where, int), class_id=_get(t, "class", where, int))
        for j, entry in enumerate(_get(t, "frames", where, list)):
            f = _get(entry, "frame", f"{where}.frames[{j}]", int)
            vt.frames[f] = _parse_rle(_get(entry, "mask", f"{where}.frames[{j}]"),
                                      f"{where}.frames[{j}].mask", canvas).astype(bool)
        out[vt.id] = vt
    return out, canvas
