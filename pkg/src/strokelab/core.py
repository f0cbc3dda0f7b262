"""Core data model for vector sketches.

A sketch is an ordered list of strokes; a stroke is an ordered polyline of
timestamped, pressure-annotated points.  All geometry is stored in canvas
pixel coordinates (x right, y down) as float64 arrays, which keeps the
registration and synthesis code free of per-point object overhead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import GeometryError, ValidationError

STROKE_KINDS = ("content", "scaffold")
GROUPS = ("novice", "professional", "tracing", "synthetic")

DEFAULT_CANVAS = (800, 800)

# Consecutive points closer than this are treated as duplicates on import.
DUPLICATE_GAP = 1e-6
# Strokes whose whole polyline is shorter than this are dropped on import:
# they are pen taps, not strokes, and break direction-dependent code.
MIN_STROKE_LENGTH = 2.0


class Point(NamedTuple):
    """A single sample of the pen: position, time in ms, pressure in [0, 1]."""

    x: float
    y: float
    t_ms: float = 0.0
    pressure: float = 1.0


def _as_point_array(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValidationError(
            f"stroke points must form an (N, 4) array of x, y, t_ms, pressure; got shape {arr.shape}"
        )
    return arr


@dataclass
class Stroke:
    """An ordered run of pen samples sharing one kind and width.

    ``points`` is an (N, 4) float64 array with columns x, y, t_ms, pressure.
    Timestamps must be non-decreasing and N must be at least 2.
    """

    points: np.ndarray
    kind: str = "content"
    width: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.points = _as_point_array(self.points)
        if len(self.points) < 2:
            raise ValidationError("a stroke needs at least 2 points")
        if self.kind not in STROKE_KINDS:
            raise ValidationError(f"unknown stroke kind {self.kind!r}")
        if not (self.width > 0):
            raise ValidationError(f"stroke width must be positive, got {self.width}")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("stroke contains non-finite values")
        t = self.points[:, 2]
        if np.any(np.diff(t) < 0):
            raise ValidationError("stroke timestamps must be non-decreasing")
        p = self.points[:, 3]
        if np.any(p < 0) or np.any(p > 1):
            raise ValidationError("stroke pressure must lie in [0, 1]")

    @classmethod
    def from_xy(
        cls,
        xy,
        t=None,
        pressure=None,
        kind: str = "content",
        width: float = 1.0,
    ) -> "Stroke":
        """Build a stroke from bare coordinates, synthesising time/pressure."""
        xy = np.asarray(xy, dtype=np.float64)
        n = len(xy)
        pts = np.empty((n, 4))
        pts[:, :2] = xy
        pts[:, 2] = np.arange(n, dtype=np.float64) if t is None else t
        pts[:, 3] = 1.0 if pressure is None else pressure
        return cls(pts, kind=kind, width=width)

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def t(self) -> np.ndarray:
        return self.points[:, 2]

    @property
    def pressure(self) -> np.ndarray:
        return self.points[:, 3]

    def with_xy(self, xy: np.ndarray) -> "Stroke":
        """Same stroke with coordinates replaced, metadata kept."""
        pts = self.points.copy()
        pts[:, :2] = xy
        return replace(self, points=pts, extra=dict(self.extra))

    def arc_length(self) -> float:
        return float(np.sum(segment_lengths(self.xy)))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[Point]:
        for row in self.points:
            yield Point(*row)


@dataclass
class Sketch:
    """A full drawing: strokes in drawing order plus identifying metadata."""

    strokes: list[Stroke]
    prompt_id: str = ""
    user_id: str = ""
    group: str = "novice"
    canvas: tuple[int, int] = DEFAULT_CANVAS
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.group not in GROUPS:
            raise ValidationError(f"unknown group {self.group!r}")
        w, h = self.canvas
        if w <= 0 or h <= 0:
            raise ValidationError(f"canvas must be positive, got {self.canvas}")
        self.canvas = (int(w), int(h))

    def content_strokes(self) -> list[Stroke]:
        return [s for s in self.strokes if s.kind == "content"]

    def picked_strokes(self, content_only: bool = True) -> list[Stroke]:
        return self.content_strokes() if content_only else list(self.strokes)

    def points_xy(self, content_only: bool = True) -> np.ndarray:
        """All point coordinates concatenated, (N, 2); empty (0, 2) if none."""
        strokes = self.picked_strokes(content_only)
        if not strokes:
            return np.empty((0, 2))
        return np.concatenate([s.xy for s in strokes])

    def with_strokes(self, strokes: Sequence[Stroke]) -> "Sketch":
        return replace(self, strokes=list(strokes), extra=dict(self.extra))

    def __len__(self) -> int:
        return len(self.strokes)


def segment_lengths(xy: np.ndarray) -> np.ndarray:
    """Per-segment Euclidean lengths of a polyline, shape (N-1,)."""
    d = np.diff(np.asarray(xy, dtype=np.float64), axis=0)
    return np.hypot(d[:, 0], d[:, 1])


def arc_length(xy: np.ndarray) -> float:
    return float(np.sum(segment_lengths(xy)))


def clean_points(points: np.ndarray, gap: float = DUPLICATE_GAP) -> np.ndarray:
    """Drop consecutive near-duplicate samples (distance < gap)."""
    pts = _as_point_array(points)
    if len(pts) == 0:
        return pts
    keep = [0]
    for i in range(1, len(pts)):
        if math.hypot(*(pts[i, :2] - pts[keep[-1], :2])) >= gap:
            keep.append(i)
    return pts[keep]


def resample_stroke(stroke: Stroke, spacing: float) -> Stroke:
    """Refine a stroke so consecutive samples are at most ``spacing`` apart.

    Every original vertex is kept (corners survive exactly) and each segment
    is split into equal arc-length pieces, so the resampled chain traces the
    same polyline and the total arc length is unchanged.  Time and pressure
    are interpolated linearly within each segment.
    """
    if not (spacing > 0):
        raise ValidationError(f"spacing must be positive, got {spacing}")
    pts = stroke.points
    out = [pts[0]]
    for i in range(len(pts) - 1):
        a, b = pts[i], pts[i + 1]
        seg = math.hypot(b[0] - a[0], b[1] - a[1])
        pieces = max(1, math.ceil(seg / spacing - 1e-12))
        for k in range(1, pieces):
            out.append(a + (b - a) * (k / pieces))
        out.append(b)
    return replace(stroke, points=np.asarray(out), extra=dict(stroke.extra))


def closest_point_on_polyline(
    pts: np.ndarray, poly: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closest point on a polyline for each query point.

    Returns ``(dist, arc_frac, foot)`` where ``dist`` is the Euclidean
    distance, ``arc_frac`` the foot position as a fraction of total arc
    length in [0, 1], and ``foot`` the (M, 2) foot coordinates.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    poly = np.asarray(poly, dtype=np.float64)
    if len(poly) < 2:
        raise GeometryError("polyline needs at least 2 points")
    a = poly[:-1]
    e = poly[1:] - a
    seg_len2 = np.einsum("ij,ij->i", e, e)
    safe = np.where(seg_len2 > 0, seg_len2, 1.0)
    # (M, S) parameter of the perpendicular foot on each segment, clamped.
    tt = np.clip(
        ((pts[:, None, :] - a[None, :, :]) * e[None, :, :]).sum(-1) / safe[None, :],
        0.0,
        1.0,
    )
    foot = a[None, :, :] + tt[:, :, None] * e[None, :, :]
    d2 = ((pts[:, None, :] - foot) ** 2).sum(-1)
    idx = np.argmin(d2, axis=1)
    rows = np.arange(len(pts))
    seg_len = np.sqrt(seg_len2)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = max(cum[-1], 1e-12)
    arc = cum[idx] + tt[rows, idx] * seg_len[idx]
    return np.sqrt(d2[rows, idx]), arc / total, foot[rows, idx]


def point_at_arc_fraction(poly: np.ndarray, frac: float) -> np.ndarray:
    """Point on the polyline at a given fraction of its total arc length."""
    poly = np.asarray(poly, dtype=np.float64)
    seg = segment_lengths(poly)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        return poly[0].copy()
    s = np.clip(frac, 0.0, 1.0) * total
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(i, len(seg) - 1)
    local = (s - cum[i]) / seg[i] if seg[i] > 0 else 0.0
    return poly[i] + local * (poly[i + 1] - poly[i])
