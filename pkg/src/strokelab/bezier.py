"""Degree-5 Bézier fitting of strokes.

Every stroke, regardless of its point count, is summarised by six control
points: endpoints clamped to the stroke's endpoints, the four interior
points solved by linear least squares under chord-length parameterization
and refined by two foot-point reparameterization passes.  Six points is
enough for single-stroke shapes (lines, arcs, s-curves) while giving the
disturber networks a fixed-size input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Stroke
from .errors import ValidationError

DEGREE = 5
N_CONTROL = DEGREE + 1
_BINOM = np.array([1.0, 5.0, 10.0, 10.0, 5.0, 1.0])

# Below this control-polygon diagonal the local frame would blow up
# normalized coordinates; clamp instead of dividing by ~0.
_MIN_FRAME_SCALE = 1e-6

REPARAM_PASSES = 2
_NEWTON_STEPS = 2


@dataclass(frozen=True)
class StrokeFrame:
    """Normalisation mapping stroke-local coordinates to canvas space."""

    centroid: tuple[float, float]
    scale: float

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.centroid) / self.scale

    def to_canvas(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) * self.scale + self.centroid


def _frame_of(control: np.ndarray) -> StrokeFrame:
    lo = control.min(axis=0)
    hi = control.max(axis=0)
    scale = max(float(np.hypot(*(hi - lo))), _MIN_FRAME_SCALE)
    c = control.mean(axis=0)
    return StrokeFrame((float(c[0]), float(c[1])), scale)


@dataclass
class BezierStroke:
    """A stroke reduced to six Bézier control points plus its local frame."""

    control: np.ndarray  # (6, 2)
    source_len: int
    frame: StrokeFrame
    fit_error: float = 0.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.control, dtype=np.float64)
        if arr.shape != (N_CONTROL, 2):
            raise ValidationError(f"control points must be (6, 2), got {arr.shape}")
        self.control = arr

    def local_controls(self) -> np.ndarray:
        """Control points in the stroke-local frame, flattened to 12 floats."""
        return self.frame.to_local(self.control).ravel()

    def with_control(self, control: np.ndarray) -> "BezierStroke":
        """New curve with replaced control points and a recomputed frame."""
        control = np.asarray(control, dtype=np.float64)
        return BezierStroke(control, self.source_len, _frame_of(control), self.fit_error)


def bernstein_matrix(u: np.ndarray) -> np.ndarray:
    """Degree-5 Bernstein basis evaluated at parameters u, shape (N, 6)."""
    u = np.asarray(u, dtype=np.float64)[:, None]
    k = np.arange(N_CONTROL)[None, :]
    return _BINOM[None, :] * u**k * (1.0 - u) ** (DEGREE - k)


def evaluate(control: np.ndarray, u: np.ndarray) -> np.ndarray:
    return bernstein_matrix(u) @ control


def _derivatives(control: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivative of the curve at parameters u."""
    u = np.asarray(u, dtype=np.float64)[:, None]
    d1 = DEGREE * np.diff(control, axis=0)  # degree-4 control points
    d2 = (DEGREE - 1) * np.diff(d1, axis=0)  # degree-3 control points
    k4 = np.arange(5)[None, :]
    b4 = np.array([1.0, 4.0, 6.0, 4.0, 1.0])[None, :] * u**k4 * (1 - u) ** (4 - k4)
    k3 = np.arange(4)[None, :]
    b3 = np.array([1.0, 3.0, 3.0, 1.0])[None, :] * u**k3 * (1 - u) ** (3 - k3)
    return b4 @ d1, b3 @ d2


def _chord_params(pts: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    return cum / total if total > 0 else np.linspace(0, 1, len(pts))


def _solve_interior(pts: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Clamped least-squares fit: endpoints fixed, interior 4 points solved.

    The interior points are parameterized as offsets from the straight chord
    so under-determined cases (very short strokes) fall back to the chord
    instead of drifting toward the origin.
    """
    basis = bernstein_matrix(u)
    a = basis[:, 1:5]
    rhs = pts - np.outer(basis[:, 0], pts[0]) - np.outer(basis[:, 5], pts[-1])
    base = np.linspace(pts[0], pts[-1], N_CONTROL)[1:5]
    delta, *_ = np.linalg.lstsq(a, rhs - a @ base, rcond=None)
    control = np.empty((N_CONTROL, 2))
    control[0] = pts[0]
    control[1:5] = base + delta
    control[5] = pts[-1]
    return control


def _foot_point_update(control: np.ndarray, pts: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Newton steps moving each parameter toward the true closest point."""
    u = u.copy()
    for _ in range(_NEWTON_STEPS):
        diff = evaluate(control, u) - pts
        d1, d2 = _derivatives(control, u)
        g = np.einsum("ij,ij->i", diff, d1)
        gp = np.einsum("ij,ij->i", d1, d1) + np.einsum("ij,ij->i", diff, d2)
        step = np.where(np.abs(gp) > 1e-12, g / np.where(gp == 0, 1, gp), 0.0)
        u = np.clip(u - step, 0.0, 1.0)
    u[0], u[-1] = 0.0, 1.0
    return u


def fit_bezier(stroke: Stroke) -> BezierStroke:
    """Fit a clamped degree-5 Bézier curve to a stroke's polyline.

    Records the maximum point-to-curve distance over the input samples as
    ``fit_error``.  Two-point strokes become an exact straight line.
    """
    pts = stroke.xy
    n = len(pts)
    if n < 2:
        raise ValidationError("cannot fit a curve to fewer than 2 points")
    if n == 2:
        control = np.linspace(pts[0], pts[1], N_CONTROL)
        return BezierStroke(control, n, _frame_of(control), 0.0)
    u = _chord_params(pts)
    control = _solve_interior(pts, u)
    for _ in range(REPARAM_PASSES):
        u = _foot_point_update(control, pts, u)
        control = _solve_interior(pts, u)
    resid = evaluate(control, u) - pts
    err = float(np.max(np.hypot(resid[:, 0], resid[:, 1])))
    return BezierStroke(control, n, _frame_of(control), err)


def sample_polyline(b: BezierStroke, n: int) -> np.ndarray:
    """Evaluate the curve at n uniform parameters, (n, 2)."""
    if n < 2:
        raise ValidationError("need at least 2 samples")
    return evaluate(b.control, np.linspace(0.0, 1.0, n))
