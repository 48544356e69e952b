"""Seeded moving-shape occlusion scenarios and tracking metrics.

All randomness comes from :class:`CounterRNG`, a counter-based generator
built on the SplitMix64 finalizer. Draw ``i`` of a stream keyed by
``(seed, *labels)`` is ``mix64(key + (i + 1) * GOLDEN)``, so any value can
be reproduced in isolation and in any language with 64-bit wraparound.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ovc.clip_inference import Detection
from ovc.geometry import Box, mask_iou, mask_to_boxes
from ovc.hungarian import hungarian_max
from ovc.records import ClipRecord, GroundTruth

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


class ScenarioError(ValueError):
    pass


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _label_code(label) -> int:
    if isinstance(label, str):
        code = 0
        for b in label.encode("utf-8"):
            code = mix64(code ^ b)
        return code
    return int(label) & MASK64


class CounterRNG:
    """Stateless stream ``(seed, *labels) -> 64-bit words``."""

    def __init__(self, seed: int, *labels):
        key = mix64(int(seed))
        for label in labels:
            key = mix64(key ^ mix64((_label_code(label) + GOLDEN) & MASK64))
        self.key = key

    def bits(self, n: int, offset: int = 0) -> np.ndarray:
        counters = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + counters * np.uint64(GOLDEN)
            return _mix64_array(z)

    def uniform(self, n: int, offset: int = 0) -> np.ndarray:
        """Doubles in ``[0, 1)`` from the top 53 bits."""
        return (self.bits(n, offset) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """Box-Muller on draws ``2k`` (radius) and ``2k+1`` (angle)."""
        u = self.uniform(2 * n).reshape(n, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        return radius * np.cos(2.0 * np.pi * u[:, 1])


@dataclass(frozen=True)
class SceneObject:
    shape: str
    size: tuple[float, float]
    start: tuple[float, float]
    velocity: tuple[float, float]
    depth: int
    embedding: tuple[float, ...]
    class_id: int = 0
    absent: tuple[tuple[int, int], ...] = ()

    def center(self, t: int) -> tuple[float, float]:
        return (self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t)

    def present(self, t: int) -> bool:
        return not any(a <= t <= b for a, b in self.absent)


@dataclass(frozen=True)
class Scenario:
    """``depth`` 0 is the front; smaller depth wins contested pixels."""

    name: str
    seed: int
    canvas: tuple[int, int]
    n_frames: int
    objects: tuple[SceneObject, ...]
    clip_len: int = 4
    overlap: int = 3
    noise_rate: float = 0.02
    embed_noise: float = 0.05

    @property
    def stride(self) -> int:
        return self.clip_len - self.overlap

    def clip_starts(self) -> list[int]:
        return list(range(0, self.n_frames - self.clip_len + 1, self.stride))


@dataclass
class RenderedScenario:
    scenario: Scenario
    shapes: np.ndarray      # [K, T_total, H, W] bool, before occlusion
    visible: np.ndarray     # [K, T_total, H, W] bool, occlusion-resolved
    boxes: list[list[Optional[Box]]]
    occlusion: np.ndarray   # [K, T_total] hidden fraction of each shape
    activation: np.ndarray  # [c, T_total, H, W]
    embeddings: np.ndarray  # [d_e, T_total, H, W]
    features: np.ndarray    # [d_e + 1, T_total, H, W]
    clips: list[ClipRecord] = field(default_factory=list)

    @property
    def ids(self) -> list[int]:
        return list(range(len(self.scenario.objects)))


def rasterize(obj: SceneObject, t: int, canvas: tuple[int, int]) -> np.ndarray:
    h, w = canvas
    cy, cx = obj.center(t)
    ys = np.arange(h)[:, None] + 0.5
    xs = np.arange(w)[None, :] + 0.5
    hy, hx = obj.size[0] / 2.0, obj.size[1] / 2.0
    if obj.shape == "rectangle":
        return (np.abs(ys - cy) < hy) & (np.abs(xs - cx) < hx)
    if obj.shape == "ellipse":
        return ((ys - cy) / hy) ** 2 + ((xs - cx) / hx) ** 2 <= 1.0
    raise ScenarioError(f"unknown shape {obj.shape!r}")


def _check_scenario(s: Scenario) -> None:
    h, w = s.canvas
    if not s.objects:
        raise ScenarioError("scenario has no objects")
    depths = [o.depth for o in s.objects]
    if len(set(depths)) != len(depths):
        raise ScenarioError("depth order must be total (distinct depths)")
    if not 0 <= s.overlap < s.clip_len or s.n_frames < s.clip_len:
        raise ScenarioError("clip layout does not fit the frame count")
    for k, obj in enumerate(s.objects):
        for t in range(s.n_frames):
            if not obj.present(t):
                continue
            cy, cx = obj.center(t)
            if not (0 <= cy < h and 0 <= cx < w):
                raise ScenarioError(f"object {k} leaves the canvas at frame {t}")


def boundary(mask: np.ndarray) -> np.ndarray:
    """Pixels whose 4-neighbourhood contains the other label."""
    m = mask.astype(bool)
    edge = np.zeros_like(m)
    edge[1:, :] |= m[1:, :] != m[:-1, :]
    edge[:-1, :] |= m[:-1, :] != m[1:, :]
    edge[:, 1:] |= m[:, 1:] != m[:, :-1]
    edge[:, :-1] |= m[:, :-1] != m[:, 1:]
    return edge


def _bump(canvas, center, sigma=2.0) -> np.ndarray:
    h, w = canvas
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    return np.exp(-((ys - center[0]) ** 2 + (xs - center[1]) ** 2) / (2.0 * sigma**2))


def visible_centroid(mask: np.ndarray) -> Optional[tuple[int, int]]:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return int(round(float(ys.mean()))), int(round(float(xs.mean())))


def render_scenario(s: Scenario, with_maps: bool = True) -> RenderedScenario:
    """Rasterize, resolve occlusion by depth, derive maps and noisy detections."""
    _check_scenario(s)
    h, w = s.canvas
    k_n, t_n = len(s.objects), s.n_frames
    shapes = np.zeros((k_n, t_n, h, w), dtype=bool)
    for k, obj in enumerate(s.objects):
        for t in range(t_n):
            if obj.present(t):
                shapes[k, t] = rasterize(obj, t, s.canvas)
    visible = np.zeros_like(shapes)
    covered = np.zeros((t_n, h, w), dtype=bool)
    for k in sorted(range(k_n), key=lambda i: s.objects[i].depth):
        visible[k] = shapes[k] & ~covered
        covered |= shapes[k]
    area = shapes.sum(axis=(2, 3))
    hidden = area - visible.sum(axis=(2, 3))
    occlusion = np.divide(hidden, area, out=np.zeros(area.shape), where=area > 0)
    boxes = [mask_to_boxes(visible[k]) for k in range(k_n)]

    n_cls = max(o.class_id for o in s.objects) + 1
    d_e = len(s.objects[0].embedding)
    activation = np.zeros((n_cls, t_n, h, w))
    embeddings = np.zeros((d_e, t_n, h, w))
    if with_maps:
        for k, obj in enumerate(s.objects):
            emb = np.asarray(obj.embedding)
            for t in range(t_n):
                c = visible_centroid(visible[k, t])
                if c is None:
                    continue
                activation[obj.class_id, t] = np.maximum(activation[obj.class_id, t],
                                                         _bump(s.canvas, c))
                embeddings[:, t][:, visible[k, t]] = emb[:, None]
        activation = np.round(activation, 6)
    features = np.concatenate([embeddings, activation.max(axis=0, keepdims=True)], axis=0)

    out = RenderedScenario(s, shapes, visible, boxes, occlusion, activation, embeddings, features)
    out.clips = [_clip_record(out, ci, start, with_maps) for ci, start in enumerate(s.clip_starts())]
    return out


def _noisy_mask(mask: np.ndarray, rate: float, rng: CounterRNG) -> np.ndarray:
    if rate <= 0:
        return mask.copy()
    flips = boundary(mask) & (rng.uniform(mask.size).reshape(mask.shape) < rate)
    return mask ^ flips


def _jitter(embedding: np.ndarray, magnitude: float, rng: CounterRNG) -> np.ndarray:
    if magnitude <= 0:
        return embedding.copy()
    direction = rng.normal(embedding.size)
    return embedding + magnitude * direction / np.linalg.norm(direction)


def _clip_record(r: RenderedScenario, clip_index: int, start: int, with_maps: bool) -> ClipRecord:
    s = r.scenario
    frames = list(range(start, start + s.clip_len))
    sl = slice(start, start + s.clip_len)
    dets = []
    for k, obj in enumerate(s.objects):
        vis = r.visible[k, sl]
        if not vis.any():
            continue
        masks = np.stack([
            _noisy_mask(vis[j], s.noise_rate, CounterRNG(s.seed, "mask", clip_index, k, f))
            for j, f in enumerate(frames)
        ])
        emb = _jitter(np.asarray(obj.embedding), s.embed_noise,
                      CounterRNG(s.seed, "embed", clip_index, k))
        conf = 0.7 + 0.3 * float(CounterRNG(s.seed, "conf", clip_index, k).uniform(1)[0])
        dets.append(Detection(obj.class_id, round(conf, 6), np.round(emb, 8),
                              masks.astype(np.float64)))
    order = np.argsort(CounterRNG(s.seed, "order", clip_index).uniform(len(dets)), kind="stable")
    dets = [dets[i] for i in order]
    gt = GroundTruth(
        ids=r.ids,
        classes=[o.class_id for o in s.objects],
        masks=r.visible[:, sl].astype(np.float64),
        boxes=[row[sl] for row in r.boxes],
    )
    rec = ClipRecord(clip_index=clip_index, frames=frames, canvas=s.canvas, detections=dets,
                     gt=gt, meta={"scenario": s.name, "seed": int(s.seed)})
    if with_maps:
        rec.activation = r.activation[:, sl]
        rec.features = r.features[:, sl]
        rec.embeddings = r.embeddings[:, sl]
    return rec


# -- scenario presets -------------------------------------------------------

def orthogonal_embeddings(seed: int, count: int, dim: int = 16) -> list[tuple[float, ...]]:
    """Seeded unit vectors made mutually orthogonal by Gram-Schmidt."""
    if count > dim:
        raise ScenarioError("more objects than embedding dimensions")
    basis: list[np.ndarray] = []
    for k in range(count):
        v = CounterRNG(seed, "identity", k).normal(dim)
        for b in basis:
            v = v - (v @ b) * b
        v = v / np.linalg.norm(v)
        basis.append(v)
    return [tuple(float(x) for x in np.round(b, 8)) for b in basis]


def crossing(seed: int = 0, full_occlusion: bool = True, **kw) -> Scenario:
    """Two squares moving towards each other that meet at the middle frame.

    With ``full_occlusion`` the back square is completely hidden on the
    single frame shared by the clips around the meeting point, so the
    mask-IoU cue alone carries nothing across that boundary.
    """
    emb = orthogonal_embeddings(seed, 2)
    dy = 0.0 if full_occlusion else 5.0
    objects = (
        SceneObject("rectangle", (8, 8), (16.0, 8.0), (0.0, 4.0), 0, emb[0]),
        SceneObject("rectangle", (8, 8), (16.0 + dy, 56.0), (0.0, -4.0), 1, emb[1]),
    )
    params = dict(name="crossing", seed=seed, canvas=(32, 64), n_frames=13,
                  objects=objects, clip_len=4, overlap=1)
    params.update(kw)
    return Scenario(**params)


def parade(seed: int = 0, **kw) -> Scenario:
    emb = orthogonal_embeddings(seed, 4)
    objects = tuple(
        SceneObject("ellipse" if k % 2 else "rectangle", (10, 10),
                    (12.0 + 4 * (k % 2), 8.0 + 10 * k), (0.0, 1.5), k, emb[k], k % 2)
        for k in range(4)
    )
    params = dict(name="parade", seed=seed, canvas=(32, 80), n_frames=12, objects=objects)
    params.update(kw)
    return Scenario(**params)


def static(seed: int = 0, **kw) -> Scenario:
    emb = orthogonal_embeddings(seed, 3)
    objects = (
        SceneObject("rectangle", (8, 12), (8.0, 10.0), (0.0, 0.0), 0, emb[0]),
        SceneObject("ellipse", (10, 10), (20.0, 30.0), (0.0, 0.0), 1, emb[1]),
        SceneObject("rectangle", (6, 6), (10.0, 40.0), (0.0, 0.0), 2, emb[2], 1),
    )
    params = dict(name="static", seed=seed, canvas=(32, 48), n_frames=8, objects=objects)
    params.update(kw)
    return Scenario(**params)


def disappear(seed: int = 0, gap: int = 4, **kw) -> Scenario:
    """One object vanishes and comes back ``gap`` clips after its last sighting.

    Clips advance one frame at a time (overlap ``T - 1``). With the object
    last present on frame ``p``, clip ``p`` is its last sighting and clip
    ``p + gap`` its first sighting again, so it reappears on frame
    ``p + gap + T - 1``. A static second object stays in view throughout.
    """
    clip_len = kw.get("clip_len", 4)
    last = 5
    back = last + gap + clip_len - 1
    if gap < 2:
        # the vanished object must be missing from at least one whole clip
        raise ScenarioError(f"gap must be at least 2 clips, got {gap}")
    emb = orthogonal_embeddings(seed, 2)
    objects = (
        SceneObject("rectangle", (8, 8), (12.0, 12.0), (0.0, 0.0), 0, emb[0],
                    absent=((last + 1, back - 1),)),
        SceneObject("ellipse", (8, 8), (20.0, 40.0), (0.0, 0.0), 1, emb[1]),
    )
    params = dict(name="disappear", seed=seed, canvas=(32, 48), n_frames=back + clip_len,
                  objects=objects, clip_len=clip_len, overlap=clip_len - 1)
    params.update(kw)
    return Scenario(**params)


SCENARIOS = {"crossing": crossing, "parade": parade, "static": static, "disappear": disappear}


def make_scenario(name: str, seed: int, **kw) -> Scenario:
    try:
        return SCENARIOS[name](seed=seed, **kw)
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


# -- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    scenario: str
    seed: int
    id_switches: int
    assoc_acc: float
    mean_iou: float


MATCH_IOU = 0.5


def _frame_matches(gt_masks: dict[int, np.ndarray], pred_masks: dict[int, np.ndarray]):
    gt_ids = sorted(gt_masks)
    pred_ids = sorted(pred_masks)
    iou = np.zeros((len(gt_ids), len(pred_ids)))
    for a, g in enumerate(gt_ids):
        for b, p in enumerate(pred_ids):
            iou[a, b] = mask_iou(gt_masks[g][None], pred_masks[p][None])
    matched = {g: (None, 0.0) for g in gt_ids}
    for a, b in hungarian_max(iou):
        pid = pred_ids[b] if iou[a, b] >= MATCH_IOU else None
        matched[gt_ids[a]] = (pid, iou[a, b])
    return matched


def scenario_metrics(gt: dict[int, dict[int, np.ndarray]], pred: dict[int, dict[int, np.ndarray]],
                     scenario: str = "", seed: int = 0) -> Metrics:
    """ID switches, link-preservation accuracy and mean mask IoU.

    Args:
        gt: ground-truth id -> frame -> mask. Empty masks mean "not visible".
        pred: predicted id -> frame -> mask.

    A GT object is linked to the predicted id Hungarian-matched to it on a
    frame at IoU >= 0.5. A switch is a change of linked id between two
    consecutive linked frames; a GT link is preserved when consecutive
    visible frames carry the same linked id.
    """
    frames = sorted({f for per in gt.values() for f in per})
    history: dict[int, list] = {g: [] for g in gt}
    ious = []
    for f in frames:
        gt_f = {g: m for g, m in ((g, per.get(f)) for g, per in gt.items())
                if m is not None and np.any(m)}
        pred_f = {p: m for p, m in ((p, per.get(f)) for p, per in pred.items()) if m is not None}
        for g, (pid, iou) in _frame_matches(gt_f, pred_f).items():
            history[g].append(pid)
            ious.append(iou)
    switches = 0
    links = kept = 0
    for seq in history.values():
        linked = [p for p in seq if p is not None]
        switches += sum(1 for a, b in zip(linked, linked[1:]) if a != b)
        for a, b in zip(seq, seq[1:]):
            links += 1
            kept += a is not None and a == b
    if links:
        acc = kept / links
    else:
        acc = 1.0 if all(p is not None for seq in history.values() for p in seq) and ious else 0.0
    mean_iou = float(np.mean(ious)) if ious else 0.0
    return Metrics(scenario, int(seed), switches, float(acc), mean_iou)


def gt_tracks(records: Sequence[ClipRecord]) -> dict[int, dict[int, np.ndarray]]:
    """Per-frame GT masks from clip records; later clips win on shared frames."""
    out: dict[int, dict[int, np.ndarray]] = {}
    for rec in records:
        if rec.gt is None:
            continue
        for gid, vol in zip(rec.gt.ids, rec.gt.masks):
            per = out.setdefault(gid, {})
            for k, f in enumerate(rec.frames):
                per[f] = vol[k].astype(bool)
    return out


def with_seed(s: Scenario, seed: int) -> Scenario:
    return replace(s, seed=seed)
