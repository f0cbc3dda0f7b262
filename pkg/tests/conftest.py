"""Shared fixtures and brute-force oracles used across the test suite.

The oracles here are deliberately slow and literal (per-pixel loops, full
pairwise scans) so the fast implementations in the package can be checked
against an independent computation.
"""

from __future__ import annotations

import math

import numpy as np

from strokelab.core import Sketch, Stroke


def seg_distance(p, a, b) -> float:
    """Distance from point p to segment ab, scalar version."""
    px, py = p[0] - a[0], p[1] - a[1]
    ex, ey = b[0] - a[0], b[1] - a[1]
    len2 = ex * ex + ey * ey
    if len2 == 0:
        return math.hypot(px, py)
    t = min(1.0, max(0.0, (px * ex + py * ey) / len2))
    return math.hypot(px - t * ex, py - t * ey)


def brute_raster(sketch: Sketch, width: float | None = None, content_only: bool = True) -> np.ndarray:
    """Per-pixel point-in-capsule test; returns a boolean foreground mask."""
    w, h = sketch.canvas
    fg = np.zeros((h, w), dtype=bool)
    for stroke in sketch.picked_strokes(content_only):
        r = 0.5 * (stroke.width if width is None else width)
        xy = stroke.xy
        for iy in range(h):
            for ix in range(w):
                if fg[iy, ix]:
                    continue
                for i in range(len(xy) - 1):
                    if seg_distance((ix, iy), xy[i], xy[i + 1]) <= r:
                        fg[iy, ix] = True
                        break
    return fg


def brute_edt(fg: np.ndarray) -> np.ndarray:
    """O(pixels^2) Euclidean distance to the nearest foreground pixel."""
    h, w = fg.shape
    ys, xs = np.nonzero(fg)
    out = np.empty((h, w))
    for iy in range(h):
        for ix in range(w):
            out[iy, ix] = math.sqrt(np.min((xs - ix) ** 2 + (ys - iy) ** 2))
    return out


def brute_min_distances(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    return np.array(
        [min(seg_distance(p, poly[i], poly[i + 1]) for i in range(len(poly) - 1)) for p in pts]
    )


def wave_stroke(
    n: int = 40,
    x0: float = 10.0,
    x1: float = 180.0,
    y: float = 100.0,
    amp: float = 12.0,
    cycles: float = 1.5,
    kind: str = "content",
    width: float = 1.5,
    t0: float = 0.0,
) -> Stroke:
    x = np.linspace(x0, x1, n)
    yy = y + amp * np.sin(np.linspace(0, cycles * 2 * np.pi, n))
    pts = np.column_stack([x, yy, t0 + np.linspace(0, 400, n), np.full(n, 0.6)])
    return Stroke(pts, kind=kind, width=width)


def random_smooth_stroke(rng: np.random.Generator, canvas=(200, 200), n: int = 30, t0: float = 0.0) -> Stroke:
    """A random smooth open curve that stays inside the canvas."""
    w, h = canvas
    margin = 0.15
    start = rng.uniform([w * margin, h * margin], [w * (1 - margin), h * (1 - margin)])
    end = rng.uniform([w * margin, h * margin], [w * (1 - margin), h * (1 - margin)])
    u = np.linspace(0, 1, n)
    base = np.outer(1 - u, start) + np.outer(u, end)
    normal = np.array([-(end - start)[1], (end - start)[0]])
    norm = np.linalg.norm(normal)
    if norm > 0:
        normal /= norm
    bend = rng.uniform(-0.15, 0.15) * np.linalg.norm(end - start)
    wiggle = rng.uniform(0, 6)
    phase = rng.uniform(0, 2 * np.pi)
    offset = bend * np.sin(np.pi * u) + wiggle * np.sin(3 * np.pi * u + phase)
    xy = base + np.outer(offset, normal)
    xy[:, 0] = np.clip(xy[:, 0], 2, w - 3)
    xy[:, 1] = np.clip(xy[:, 1], 2, h - 3)
    t = t0 + np.linspace(0, rng.uniform(200, 600), n)
    pressure = np.clip(0.5 + 0.3 * np.sin(u * np.pi), 0, 1)
    return Stroke(np.column_stack([xy, t, pressure]), width=1.5)


def random_sketch(
    seed: int,
    canvas=(200, 200),
    n_strokes: int = 4,
    group: str = "novice",
    points_per_stroke: int = 30,
) -> Sketch:
    rng = np.random.default_rng(seed)
    strokes = []
    t0 = 0.0
    for _ in range(n_strokes):
        s = random_smooth_stroke(rng, canvas, n=points_per_stroke, t0=t0)
        t0 = float(s.t[-1]) + float(rng.uniform(50, 150))
        strokes.append(s)
    return Sketch(strokes, prompt_id="p0", user_id=f"u{seed}", group=group, canvas=canvas)
