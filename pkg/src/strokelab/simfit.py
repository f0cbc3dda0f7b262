"""Similarity-transform fitting between corresponding point sets.

Used to summarise how a freehand drawing deviates from its pixel-accurate
registration: a global (sketch-level) transform captures overall placement,
per-stroke transforms capture local placement, and the relative transform
between the two isolates each stroke's own deviation.

A similarity maps p to s * R(theta) * p + t.  Fitting minimises the sum of
squared correspondence residuals; with the rotation fixed by the cross/dot
moments, the optimal scale is the projection of the centred destination
onto the rotated centred source, so noise-free similarity data is recovered
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Sketch, Stroke
from .errors import GeometryError, ValidationError

# Point sets whose centred squared radius falls below this are treated as a
# single repeated point: rotation and scale are unobservable there.
_DEGENERATE_RADIUS2 = 1e-18


def _normalize_deg(theta: float) -> float:
    """Wrap an angle in degrees into (-180, 180]."""
    wrapped = math.fmod(theta, 360.0)
    if wrapped <= -180.0:
        wrapped += 360.0
    elif wrapped > 180.0:
        wrapped -= 360.0
    return wrapped


@dataclass(frozen=True)
class SimilarityTransform:
    """Rotation (degrees, counter-clockwise), uniform scale, translation."""

    theta_deg: float = 0.0
    scale: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    @property
    def translation_norm(self) -> float:
        return math.hypot(self.tx, self.ty)

    def rotation_matrix(self) -> np.ndarray:
        c = math.cos(math.radians(self.theta_deg))
        s = math.sin(math.radians(self.theta_deg))
        return np.array([[c, -s], [s, c]])

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return self.scale * pts @ self.rotation_matrix().T + self.translation

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """The transform equivalent to applying ``other`` first, then self."""
        t = self.apply(np.array([[other.tx, other.ty]]))[0]
        return SimilarityTransform(
            theta_deg=_normalize_deg(self.theta_deg + other.theta_deg),
            scale=self.scale * other.scale,
            tx=float(t[0]),
            ty=float(t[1]),
        )

    def inverse(self) -> "SimilarityTransform":
        if self.scale == 0:
            raise GeometryError("zero-scale transform has no inverse")
        inv_scale = 1.0 / self.scale
        c = math.cos(math.radians(-self.theta_deg))
        s = math.sin(math.radians(-self.theta_deg))
        tx = -inv_scale * (c * self.tx - s * self.ty)
        ty = -inv_scale * (s * self.tx + c * self.ty)
        return SimilarityTransform(_normalize_deg(-self.theta_deg), inv_scale, tx, ty)

    def to_dict(self) -> dict:
        return {
            "theta_deg": self.theta_deg,
            "scale": self.scale,
            "tx": self.tx,
            "ty": self.ty,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SimilarityTransform":
        return cls(
            theta_deg=float(obj["theta_deg"]),
            scale=float(obj["scale"]),
            tx=float(obj["tx"]),
            ty=float(obj["ty"]),
        )


def fit_similarity(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity mapping ``src`` onto ``dst``.

    Both arrays are (N, 2) with row-wise correspondence and N >= 2.  Raises
    if the counts differ or all source points coincide.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape:
        raise ValidationError(f"correspondence mismatch: {src.shape} vs {dst.shape}")
    if src.ndim != 2 or src.shape[1] != 2 or len(src) < 2:
        raise ValidationError(f"need (N, 2) arrays with N >= 2, got {src.shape}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    sc = src - mu_s
    dc = dst - mu_d
    radius2 = float(np.einsum("ij,ij->", sc, sc))
    if radius2 < _DEGENERATE_RADIUS2:
        raise GeometryError("source points are coincident; similarity is underdetermined")
    dot = float(np.einsum("ij,ij->", sc, dc))
    cross = float(np.einsum("i,i->", sc[:, 0], dc[:, 1]) - np.einsum("i,i->", sc[:, 1], dc[:, 0]))
    theta = math.atan2(cross, dot)
    scale = math.hypot(dot, cross) / radius2
    c, s = math.cos(theta), math.sin(theta)
    t = mu_d - scale * np.array([c * mu_s[0] - s * mu_s[1], s * mu_s[0] + c * mu_s[1]])
    return SimilarityTransform(math.degrees(theta), scale, float(t[0]), float(t[1]))


def residual_rms(t: SimilarityTransform, src: np.ndarray, dst: np.ndarray) -> float:
    r = t.apply(src) - np.asarray(dst, dtype=np.float64)
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", r, r))))


def _check_structure(a: Sketch, b: Sketch) -> None:
    if len(a.strokes) != len(b.strokes):
        raise ValidationError(
            f"sketches do not correspond: {len(a.strokes)} vs {len(b.strokes)} strokes"
        )
    for i, (sa, sb) in enumerate(zip(a.strokes, b.strokes)):
        if len(sa) != len(sb):
            raise ValidationError(f"stroke {i}: point counts differ ({len(sa)} vs {len(sb)})")


def _transform_sketch(sketch: Sketch, t: SimilarityTransform) -> Sketch:
    return sketch.with_strokes([s.with_xy(t.apply(s.xy)) for s in sketch.strokes])


def register_sketch_level(
    original: Sketch, registered: Sketch, content_only: bool = True
) -> tuple[SimilarityTransform, Sketch]:
    """One similarity over all corresponding points, applied to the sketch."""
    _check_structure(original, registered)
    src = original.points_xy(content_only)
    dst = registered.points_xy(content_only)
    if len(src) < 2:
        raise ValidationError("not enough points to fit a sketch-level transform")
    t = fit_similarity(src, dst)
    return t, _transform_sketch(original, t)


def register_stroke_level(
    original: Sketch,
    registered: Sketch,
    content_only: bool = True,
    fallback: SimilarityTransform | None = None,
) -> tuple[list[SimilarityTransform], Sketch]:
    """An independent similarity per stroke.

    Strokes with degenerate geometry fall back to the sketch-level transform
    (``fallback`` if given, otherwise fitted here) so every stroke still gets
    a well-defined transform.  Scaffold strokes always use the fallback when
    ``content_only`` is set.
    """
    _check_structure(original, registered)
    if fallback is None:
        fallback, _ = register_sketch_level(original, registered, content_only)
    transforms: list[SimilarityTransform] = []
    strokes: list[Stroke] = []
    for orig, reg in zip(original.strokes, registered.strokes):
        t = fallback
        if not (content_only and orig.kind == "scaffold"):
            try:
                t = fit_similarity(orig.xy, reg.xy)
            except GeometryError:
                t = fallback
        transforms.append(t)
        strokes.append(orig.with_xy(t.apply(orig.xy)))
    return transforms, original.with_strokes(strokes)


def relative_transform(
    global_t: SimilarityTransform, local_t: SimilarityTransform
) -> SimilarityTransform:
    """How a stroke's own placement deviates from the global placement.

    Defined as local composed with the inverse of global, i.e. the map that
    takes globally-placed points to locally-placed ones.  When the stroke
    follows the global transform exactly this is the identity.
    """
    return local_t.compose(global_t.inverse())


@dataclass
class MultiLevelRegistration:
    """All three registration levels of one drawing against one tracing."""

    original: Sketch
    pixel_level: Sketch
    sketch_transform: SimilarityTransform
    sketch_level: Sketch
    stroke_transforms: list[SimilarityTransform]
    stroke_level: Sketch

    def to_dict(self) -> dict:
        from .sketch_io import sketch_to_dict

        return {
            "format_version": 1,
            "sketch_transform": self.sketch_transform.to_dict(),
            "stroke_transforms": [t.to_dict() for t in self.stroke_transforms],
            "original": sketch_to_dict(self.original),
            "pixel_level": sketch_to_dict(self.pixel_level),
            "sketch_level": sketch_to_dict(self.sketch_level),
            "stroke_level": sketch_to_dict(self.stroke_level),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MultiLevelRegistration":
        from .sketch_io import sketch_from_dict

        return cls(
            original=sketch_from_dict(obj["original"], "original"),
            pixel_level=sketch_from_dict(obj["pixel_level"], "pixel_level"),
            sketch_transform=SimilarityTransform.from_dict(obj["sketch_transform"]),
            sketch_level=sketch_from_dict(obj["sketch_level"], "sketch_level"),
            stroke_transforms=[SimilarityTransform.from_dict(t) for t in obj["stroke_transforms"]],
            stroke_level=sketch_from_dict(obj["stroke_level"], "stroke_level"),
        )


def fit_levels(
    original: Sketch, pixel_level: Sketch, content_only: bool = True
) -> MultiLevelRegistration:
    """Fit the sketch-level and stroke-level transforms against a pixel-level result."""
    sketch_t, sketch_sk = register_sketch_level(original, pixel_level, content_only)
    stroke_ts, stroke_sk = register_stroke_level(
        original, pixel_level, content_only, fallback=sketch_t
    )
    return MultiLevelRegistration(
        original=original,
        pixel_level=pixel_level,
        sketch_transform=sketch_t,
        sketch_level=sketch_sk,
        stroke_transforms=stroke_ts,
        stroke_level=stroke_sk,
    )
