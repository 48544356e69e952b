"""PPM frame overlays, SVG trajectory plots and the metrics CSV."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import quoteattr

import numpy as np

# fixed so renders are golden-file stable; id k gets PALETTE[k % 12]
PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
)

CSV_HEADER = "scenario,seed,id_switches,assoc_acc,mean_iou\n"


def render_frame(masks: Mapping[int, np.ndarray], canvas: tuple[int, int],
                 palette: Sequence[tuple[int, int, int]] = PALETTE) -> bytes:
    """Binary P6 image of one frame; overlapping pixels take the lowest id."""
    h, w = canvas
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    for tid in sorted(masks, reverse=True):
        m = np.asarray(masks[tid]) >= 0.5
        if m.shape != (h, w):
            raise ValueError(f"mask for id {tid} has shape {m.shape}, canvas is {canvas}")
        rgb[m] = palette[tid % len(palette)]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def centroid(mask: np.ndarray):
    ys, xs = np.nonzero(np.asarray(mask) >= 0.5)
    if ys.size == 0:
        return None
    return float(xs.mean()) + 0.5, float(ys.mean()) + 0.5


def render_trajectories(tracks: Mapping[int, Mapping[int, np.ndarray]],
                        canvas: tuple[int, int]) -> str:
    """SVG with one polyline of per-frame mask centroids for each track."""
    h, w = canvas
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="black"/>',
    ]
    for tid in sorted(tracks):
        pts = [centroid(tracks[tid][f]) for f in sorted(tracks[tid])]
        pts = [p for p in pts if p is not None]
        if not pts:
            continue
        r, g, b = PALETTE[tid % len(PALETTE)]
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        lines.append(
            f'<polyline id={quoteattr(f"track-{tid}")} points="{coords}" '
            f'fill="none" stroke="rgb({r},{g},{b})" stroke-width="1"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def format_metrics_rows(metrics: Sequence) -> str:
    rows = [CSV_HEADER]
    for m in metrics:
        rows.append(f"{m.scenario},{m.seed},{m.id_switches},{float(m.assoc_acc)!r},"
                    f"{float(m.mean_iou)!r}\n")
    return "".join(rows)


def write_metrics_csv(metrics: Sequence, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_metrics_rows(metrics))
