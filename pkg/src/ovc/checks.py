"""Oracle and invariant suites run by ``ovc selftest`` and the acceptance tests.

Each suite returns a :class:`CheckResult`; none of them raise on failure.
"""

from __future__ import annotations

import contextlib
import io
import itertools
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ovc import losses as L
from ovc.config import load_config
from ovc.geometry import mask_iou, rle_decode, rle_encode
from ovc.hungarian import hungarian_max
from ovc.query_init import FrameQuery, associate_frames, cell_bounds, grid_select
from ovc.synthetic import (crossing, disappear, gt_tracks, render_scenario,
                           scenario_metrics)
from ovc.tracker import run_near_online

GRAD_TOL = 1e-5
GIOU_TOL = 1e-4
N_GRAD_POINTS = 20


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def worker_count() -> int:
    """Worker cap from ``OVC_THREADS``, else the CPU count."""
    raw = os.environ.get("OVC_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    start = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing suite is a failing suite
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CheckResult(name, ok, detail, time.perf_counter() - start)


# -- 1. gradients -----------------------------------------------------------

def _interior(rng, shape):
    return rng.uniform(0.05, 0.95, size=shape)


def _binary(rng, shape, p=0.5):
    return (rng.uniform(size=shape) < p).astype(np.float64)


def _disjoint_pair(rng, shape):
    gt = _binary(rng, shape, 0.4)
    inter = _binary(rng, shape, 0.4) * (1.0 - gt)
    return gt, inter


def _away_from_kinks(rng, beta):
    """A coordinate offset at least 1e-2 from 0 and from +-beta."""
    while True:
        d = rng.uniform(-3.0, 3.0)
        if min(abs(d), abs(abs(d) - beta)) > 1e-2:
            return d


def _random_box(rng):
    x1, y1 = rng.uniform(0, 5, size=2)
    return np.array([x1, y1, x1 + rng.uniform(1, 5), y1 + rng.uniform(1, 5)])


def _separated_boxes(rng):
    """Boxes whose coordinates differ pairwise so the loss is smooth there."""
    while True:
        p, g = _random_box(rng), _random_box(rng)
        coords_x = np.array([p[0], p[2], g[0], g[2]])
        coords_y = np.array([p[1], p[3], g[1], g[3]])
        gaps = [np.min(np.abs(np.subtract.outer(c, c))[~np.eye(4, dtype=bool)])
                for c in (coords_x, coords_y)]
        if min(gaps) > 1e-2:
            return p, g


def gradient_cases(seed: int = 0) -> dict[str, Callable[[np.random.Generator], float]]:
    """Per-loss closures returning the worst relative error at one random point."""
    shape = (2, 4, 4)

    def rel(result_grad, fn, x):
        return L.relative_error(result_grad, L.finite_diff_gradient(fn, x))

    def bce(rng):
        p, g = _interior(rng, shape), _binary(rng, shape)
        return rel(L.bce_loss(p, g).grads["pred"], lambda x: L.bce_loss(x, g).value, p)

    def dice(rng):
        p, g = _interior(rng, shape), _binary(rng, shape)
        return rel(L.dice_loss(p, g).grads["pred"], lambda x: L.dice_loss(x, g).value, p)

    def bce_inter(rng):
        p = _interior(rng, shape)
        g, o = _disjoint_pair(rng, shape)
        return rel(L.bce_inter_loss(p, g, o, 2.0).grads["pred"],
                   lambda x: L.bce_inter_loss(x, g, o, 2.0).value, p)

    def dice_inter(rng):
        p = _interior(rng, shape)
        g, o = _disjoint_pair(rng, shape)
        return rel(L.dice_inter_loss(p, g, o).grads["pred"],
                   lambda x: L.dice_inter_loss(x, g, o).value, p)

    def init_reid(rng):
        a, pos = rng.normal(size=8), rng.normal(size=8)
        neg = rng.normal(size=(3, 8))
        res = L.init_reid_loss(a, pos, neg)
        errs = [
            rel(res.grads["anchor"], lambda x: L.init_reid_loss(x, pos, neg).value, a),
            rel(res.grads["positive"], lambda x: L.init_reid_loss(a, x, neg).value, pos),
            rel(res.grads["negatives"], lambda x: L.init_reid_loss(a, pos, x).value, neg),
        ]
        return max(errs)

    def focal(rng):
        p, g = _interior(rng, shape), _binary(rng, shape)
        return rel(L.focal_loss(p, g).grads["pred"], lambda x: L.focal_loss(x, g).value, p)

    def smooth_l1(rng):
        g = _random_box(rng)
        p = g + np.array([_away_from_kinks(rng, 1.0) for _ in range(4)])
        return rel(L.smooth_l1_loss(p, g).grads["pred"],
                   lambda x: L.smooth_l1_loss(x, g).value, p)

    def giou(rng):
        p, g = _separated_boxes(rng)
        return rel(L.giou_loss(p, g).grads["pred"], lambda x: L.giou_loss(x, g).value, p)

    return {"bce": bce, "dice": dice, "bce_inter": bce_inter, "dice_inter": dice_inter,
            "init_reid": init_reid, "focal": focal, "smooth_l1": smooth_l1, "giou": giou}


def max_gradient_errors(seed: int = 0, points: int = N_GRAD_POINTS) -> dict[str, float]:
    cases = gradient_cases(seed)

    def run(item):
        name, fn = item
        rng = np.random.default_rng([seed, sorted(cases).index(name)])
        return name, max(fn(rng) for _ in range(points))

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return dict(pool.map(run, cases.items()))


def check_gradients() -> tuple[bool, str]:
    start = time.perf_counter()
    errors = max_gradient_errors()
    elapsed = time.perf_counter() - start
    bad = [n for n, e in errors.items() if e >= (GIOU_TOL if n == "giou" else GRAD_TOL)]
    detail = ", ".join(f"{n}={e:.1e}" for n, e in errors.items())
    if elapsed >= 30:
        bad.append(f"runtime {elapsed:.1f}s >= 30s")
    return not bad, detail if not bad else f"{detail}; failing: {bad}"


# -- 2. exact reductions ------------------------------------------------------

def _same(a: L.LossResult, b: L.LossResult, scale: float = 1.0) -> bool:
    if a.value != scale * b.value:
        return False
    return all(np.array_equal(a.grads[k], scale * b.grads[k]) for k in a.grads)


def check_reductions(cases: int = 10) -> tuple[bool, str]:
    shape = (2, 5, 5)
    failures = []
    for i in range(cases):
        rng = np.random.default_rng([2, i])
        p, g = rng.uniform(0, 1, shape), _binary(rng, shape)
        empty = np.zeros(shape)
        if not _same(L.dice_inter_loss(p, g, empty), L.dice_loss(p, g)):
            failures.append(f"dice_inter/dice case {i}")
        if not _same(L.bce_inter_loss(p, g, _binary(rng, shape) * (1 - g), 1.0), L.bce_loss(p, g)):
            failures.append(f"bce_inter/bce case {i}")
        if not _same(L.focal_loss(p, g, gamma=0.0, alpha_f=0.5), L.bce_loss(p, g), 0.5):
            failures.append(f"focal/bce case {i}")
    return not failures, f"{3 * cases} bitwise comparisons" + (f"; {failures}" if failures else "")


# -- 3. perfect predictions ----------------------------------------------------

def check_perfect() -> tuple[bool, str]:
    shape = (2, 6, 6)
    g = np.zeros(shape)
    g[:, 1:3, 1:4] = 1
    inter = np.zeros(shape)
    inter[:, 4:6, 2:5] = 1
    di = L.dice_inter_loss(g, g, inter).value
    d = L.dice_loss(g, g).value
    rng = np.random.default_rng(3)
    reid = L.init_reid_loss(rng.normal(size=8), rng.normal(size=8), None).value
    ok = di < 1e-5 and d < 1e-5 and reid == 0.0
    return ok, f"dice_inter={di:.1e}, dice={d:.1e}, init_reid={reid!r}"


# -- 4. Hungarian oracle -------------------------------------------------------

def brute_force_max(scores: np.ndarray) -> float:
    n, m = scores.shape
    best = -np.inf
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            best = max(best, sum(float(scores[r, c]) for r, c in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(n), m):
            pairs = sorted(zip(rows, range(m)))
            best = max(best, sum(float(scores[r, c]) for r, c in pairs))
    return best


def check_hungarian(trials: int = 100) -> tuple[bool, str]:
    start = time.perf_counter()
    mismatches = 0
    for i in range(trials):
        rng = np.random.default_rng([4, i])
        n, m = rng.integers(1, 7, size=2)
        scores = rng.normal(size=(n, m))
        pairs = hungarian_max(scores)
        total = sum(float(scores[r, c]) for r, c in sorted(pairs))
        rows = {r for r, _ in pairs}
        cols = {c for _, c in pairs}
        if len(pairs) != min(n, m) or len(rows) != len(pairs) or len(cols) != len(pairs):
            mismatches += 1
        elif total != brute_force_max(scores):
            mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 5
    return ok, f"{trials - mismatches}/{trials} optimal, {elapsed:.2f}s"


# -- 5. masks and RLE ----------------------------------------------------------

def brute_force_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = union = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        xa, yb = x >= 0.5, y >= 0.5
        inter += xa and yb
        union += xa or yb
    return 0.0 if union == 0 else inter / union


def check_masks() -> tuple[bool, str]:
    bad_rle = 0
    for i in range(1000):
        rng = np.random.default_rng([5, i])
        h, w = rng.integers(1, 65, size=2)
        m = (rng.uniform(size=(h, w)) < rng.uniform()).astype(np.uint8)
        if not np.array_equal(rle_decode(rle_encode(m)), m):
            bad_rle += 1
    bad_iou = 0
    for i in range(100):
        rng = np.random.default_rng([55, i])
        shape = (int(rng.integers(1, 4)), int(rng.integers(1, 17)), int(rng.integers(1, 17)))
        a, b = rng.uniform(size=shape), rng.uniform(size=shape)
        if mask_iou(a, b) != brute_force_iou(a, b):
            bad_iou += 1
    ok = bad_rle == 0 and bad_iou == 0
    return ok, f"RLE {1000 - bad_rle}/1000 lossless, IoU {100 - bad_iou}/100 exact"


# -- 6. peak selection ---------------------------------------------------------

def scan_peak(cell: np.ndarray) -> tuple[int, int]:
    best, pos = None, None
    for y in range(cell.shape[0]):
        for x in range(cell.shape[1]):
            if best is None or cell[y, x] > best:
                best, pos = cell[y, x], (y, x)
    return pos


def check_peaks(trials: int = 100) -> tuple[bool, str]:
    wrong = 0
    for i in range(trials):
        rng = np.random.default_rng([6, i])
        t, h, w = int(rng.integers(1, 3)), int(rng.integers(2, 13)), int(rng.integers(2, 13))
        gy, gx = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
        # small integer values force plenty of ties
        resp = rng.integers(0, 4, size=(t, h, w)).astype(np.float64) if i % 2 else rng.normal(size=(t, h, w))
        feats = rng.normal(size=(3, t, h, w))
        embs = rng.normal(size=(2, t, h, w))
        out = grid_select(resp, (gy, gx), feats, embs)
        rows, cols = cell_bounds(h, gy), cell_bounds(w, gx)
        for f in range(t):
            for n, q in enumerate(out[f]):
                (r0, r1), (c0, c1) = rows[n // gx], cols[n % gx]
                dy, dx = scan_peak(resp[f, r0:r1, c0:c1])
                if q.position != (r0 + dy, c0 + dx):
                    wrong += 1
    return wrong == 0, f"{trials} maps, {wrong} misplaced peaks"


# -- 7. association -------------------------------------------------------------

def _queries_from_embeddings(emb: np.ndarray) -> list[list[FrameQuery]]:
    """``emb[t, gy, gx]`` -> frame queries on a grid with one pixel per cell."""
    t_len, gy_n, gx_n, _ = emb.shape
    return [[FrameQuery(t, (gy, gx), (gy, gx), emb[t, gy, gx], emb[t, gy, gx], 1.0)
             for gy in range(gy_n) for gx in range(gx_n)] for t in range(t_len)]


def check_association() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    gy_n, gx_n, t_len = 4, 6, 5
    # static objects covering blocks of cells, identical embedding on every cell
    labels = np.repeat(np.repeat(np.arange(6).reshape(2, 3), 2, axis=0), 2, axis=1)
    protos = rng.normal(size=(6, 8))
    static = np.broadcast_to(protos[labels], (t_len, gy_n, gx_n, 8)).copy()
    problems = []
    for w in (0, 1, 5):
        aligned = associate_frames(_queries_from_embeddings(static), t_len // 2, w)
        for t in range(t_len):
            cells = [q.grid_cell for q in aligned.queries[t]]
            if cells != [(gy, gx) for gy in range(gy_n) for gx in range(gx_n)]:
                problems.append(f"identity broken w={w} t={t}")
    # every cell distinct; frame 1 is frame 0 shifted one cell to the right
    base = rng.normal(size=(gy_n, gx_n + 1, 8))
    shifted = np.stack([base[:, 1:], base[:, :-1]])
    for w in (1, 5):
        aligned = associate_frames(_queries_from_embeddings(shifted), 0, w)
        for n, q in enumerate(aligned.queries[1]):
            gy, gx = divmod(n, gx_n)
            if gx + 1 < gx_n and q.grid_cell != (gy, gx + 1):
                problems.append(f"shift missed w={w} cell={(gy, gx)}")
    return not problems, "identity for w in {0,1,5}; shift recovered for w in {1,5}" if not problems \
        else "; ".join(problems[:5])


# -- 8. tracking ----------------------------------------------------------------

def _switches(scenario, beta1: float, beta2: float) -> int:
    rendered = render_scenario(scenario, with_maps=False)
    cfg = load_config(overrides={"beta1": beta1, "beta2": beta2, "T": scenario.clip_len,
                                 "overlap": scenario.overlap})
    tracks = run_near_online(rendered.clips, cfg)
    pred = {tid: vt.frames for tid, vt in tracks.items()}
    return scenario_metrics(gt_tracks(rendered.clips), pred).id_switches


def check_tracking(seeds: int = 100) -> tuple[bool, str]:
    start = time.perf_counter()
    clean_combined = forced_iou_only = 0
    margin_ok = True
    for seed in range(seeds):
        sc = crossing(seed, noise_rate=0.02)
        e0, e1 = (np.asarray(o.embedding) for o in sc.objects)
        cos = float(e0 @ e1 / (np.linalg.norm(e0) * np.linalg.norm(e1)))
        margin_ok &= 1.0 - cos >= 0.5
        clean_combined += _switches(sc, 1.0, 1.0) == 0
        forced_iou_only += _switches(sc, 1.0, 0.0) >= 1
    elapsed = time.perf_counter() - start
    ok = margin_ok and clean_combined >= 95 and forced_iou_only == seeds and elapsed < 60
    return ok, (f"combined 0-switch {clean_combined}/{seeds}, mIoU-only >=1 switch "
                f"{forced_iou_only}/{seeds}, embedding margin ok={margin_ok}, {elapsed:.1f}s")


# -- 9. memory eviction -----------------------------------------------------------

def _ids_for_object(scenario, t_mem: int, obj: int = 0) -> set[int]:
    rendered = render_scenario(scenario, with_maps=False)
    cfg = load_config(overrides={"t_mem": t_mem, "beta2": 1.0})
    tracks = run_near_online(rendered.clips, cfg)
    gt = gt_tracks(rendered.clips)[obj]
    ids = set()
    for tid, vt in tracks.items():
        for f, m in vt.frames.items():
            if f in gt and gt[f].any() and mask_iou(gt[f][None], m[None]) >= 0.5:
                ids.add(tid)
    return ids


def check_eviction(t_mem: int = 10, seeds: int = 3) -> tuple[bool, str]:
    problems = []
    for seed in range(seeds):
        kept = _ids_for_object(disappear(seed, gap=t_mem), t_mem)
        lost = _ids_for_object(disappear(seed, gap=t_mem + 1), t_mem)
        again = _ids_for_object(disappear(seed, gap=t_mem + 1), t_mem)
        if len(kept) != 1:
            problems.append(f"seed {seed}: gap=T_mem gave ids {sorted(kept)}")
        if len(lost) != 2:
            problems.append(f"seed {seed}: gap=T_mem+1 gave ids {sorted(lost)}")
        if lost != again:
            problems.append(f"seed {seed}: non-deterministic")
    return not problems, "gap<=T_mem keeps id, gap>T_mem spawns new id" if not problems \
        else "; ".join(problems)


# -- 10. end-to-end determinism -------------------------------------------------------

def _pipeline(root: Path, seed: int) -> dict[str, bytes]:
    from ovc.cli import main

    sink = io.StringIO()
    clips, out, frames = root / "clips", root / "track", root / "render"
    with contextlib.redirect_stdout(sink):
        codes = [
            main(["generate", "--seed", str(seed), "--scenario", "crossing", "--out", str(clips),
                  "--with-maps"]),
            main(["track", "--in", str(clips), "--out", str(out)]),
            main(["render", "--in", str(clips), "--tracks", str(out / "tracks.json"),
                  "--out", str(frames)]),
        ]
    if any(codes):
        raise RuntimeError(f"pipeline exit codes {codes}")
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def check_determinism(seed: int = 11) -> tuple[bool, str]:
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        first, second = _pipeline(Path(a), seed), _pipeline(Path(b), seed)
    kinds = {"clip": 0, "tracks": 0, "metrics": 0, "ppm": 0}
    for name in first:
        kinds["clip"] += name.startswith("clips/")
        kinds["tracks"] += name.endswith("tracks.json")
        kinds["metrics"] += name.endswith(".csv")
        kinds["ppm"] += name.endswith(".ppm")
    same = first.keys() == second.keys() and all(first[k] == second[k] for k in first)
    complete = all(kinds.values())
    return same and complete, f"{len(first)} files byte-identical={same}, {kinds}"


SUITES: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
    ("1 gradient suite", check_gradients),
    ("2 exact loss reductions", check_reductions),
    ("3 perfect-prediction identities", check_perfect),
    ("4 Hungarian oracle", check_hungarian),
    ("5 mask/RLE oracle", check_masks),
    ("6 peak-selection oracle", check_peaks),
    ("7 association property", check_association),
    ("8 tracking behaviour", check_tracking),
    ("9 memory eviction", check_eviction),
    ("10 end-to-end determinism", check_determinism),
]


def run_suite(name: str) -> CheckResult:
    fn = dict(SUITES)[name]
    return _timed(name, fn)


def run_all() -> list[CheckResult]:
    return [_timed(name, fn) for name, fn in SUITES]
