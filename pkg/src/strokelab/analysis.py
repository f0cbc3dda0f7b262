"""Metric suite for registered sketches.

Covers the downstream questions the registration enables: how accurately a
drawing reproduces its tracing at the sketch, stroke, and pixel levels, how
drawings of a group overlap each other, and how the drawing process unfolds
over time and stroke order.

Unless stated otherwise every operation looks at content strokes only;
scaffold strokes can be pulled in through the ``content_only`` flags.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Sketch, closest_point_on_polyline, resample_stroke, segment_lengths
from .errors import DimensionError, EmptyRasterError, GeometryError, ValidationError
from .pixreg import score
from .raster import RasterImage, distance_transform, rasterize
from .simfit import MultiLevelRegistration, relative_transform
from .stats import SpearmanResult, spearman

# Defaults shared by the pixel-overlap metrics; Chebyshev radius in px.
DEFAULT_TOLERANCE = 1
DEFAULT_OMEGA = 1.1
VALIDITY_THRESHOLD = 1.2
STROKE_VALID_RATE = 0.8
STROKE_CORRECT_RATE = 0.5

TEMPORAL_BINS = 25
SIGNIFICANCE_P = 0.001


@dataclass(frozen=True)
class Histogram:
    """Counts over contiguous bins; values past the last edge land in the last bin."""

    bin_edges: np.ndarray
    counts: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        counts = np.asarray(self.counts)
        if len(edges) != len(counts) + 1:
            raise ValidationError("bin_edges must be one longer than counts")
        if np.any(np.diff(edges) <= 0):
            raise ValidationError("bin_edges must be strictly increasing")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))

    def normalize(self) -> "Histogram":
        total = self.total
        fractions = self.counts / total if total else self.counts.astype(np.float64)
        return Histogram(self.bin_edges, fractions, normalized=True)


def build_histogram(
    values, bin_width: float = 1.0, vmin: float = 0.0, vmax: float = 50.0
) -> Histogram:
    """Fixed-width histogram; values at or past vmax are clamped into the last bin."""
    if not (bin_width > 0 and vmax > vmin):
        raise ValidationError("need bin_width > 0 and vmax > vmin")
    values = np.asarray(values, dtype=np.float64).ravel()
    n_bins = int(math.ceil((vmax - vmin) / bin_width - 1e-12))
    edges = vmin + bin_width * np.arange(n_bins + 1)
    idx = np.clip(np.floor((values - vmin) / bin_width).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins) if len(values) else np.zeros(n_bins, int)
    return Histogram(edges, counts)


@dataclass(frozen=True)
class DrawingErrors:
    """Per-drawing registration error summary across all three levels."""

    E_GR: float  # sketch-level |rotation|, degrees
    E_GT: float  # sketch-level translation of the tracing centroid, px
    E_GS: float  # sketch-level |scale - 1|
    E_LR: float  # mean per-stroke relative |rotation|, degrees
    E_LT: float  # mean per-stroke relative translation norm, px
    E_LS: float  # mean per-stroke relative |scale - 1|
    E_P: float  # fraction of strokes with under 50% pixel overlap
    valid: bool  # registration score E* above the validity threshold


def is_valid_drawing(result_or_e, threshold: float = VALIDITY_THRESHOLD) -> bool:
    """Whether a registration is trustworthy (best score E* above threshold)."""
    e = getattr(result_or_e, "best", None)
    e = e.E if e is not None else float(result_or_e)
    return e > threshold


def _dilated_tracing_mask(tracing: Sketch, tolerance: int, content_only: bool) -> np.ndarray:
    mask = rasterize(tracing, width=1.0, content_only=content_only).foreground_mask()
    if tolerance > 0:
        size = 2 * tolerance + 1
        mask = ndimage.maximum_filter(mask.astype(np.uint8), size, mode="constant") > 0
    return mask


def _stroke_overlap_rates(
    sketch: Sketch, tracing: Sketch, tolerance: int, content_only: bool
) -> list[float]:
    near = _dilated_tracing_mask(tracing, tolerance, content_only=True)
    rates = []
    for stroke in sketch.picked_strokes(content_only):
        fg = rasterize(
            Sketch([stroke], canvas=sketch.canvas), width=1.0, content_only=False
        ).foreground_mask()
        total = int(np.count_nonzero(fg))
        hit = int(np.count_nonzero(fg & near))
        rates.append(hit / total if total else 0.0)
    return rates


def valid_strokes(
    stroke_level: Sketch,
    tracing: Sketch,
    threshold: float = STROKE_VALID_RATE,
    tolerance: int = DEFAULT_TOLERANCE,
    content_only: bool = True,
) -> list[bool]:
    """Per-stroke flags: True when the stroke's overlap rate reaches threshold."""
    if stroke_level.canvas != tracing.canvas:
        raise DimensionError("sketch and tracing canvases differ")
    rates = _stroke_overlap_rates(stroke_level, tracing, tolerance, content_only)
    return [rate >= threshold for rate in rates]


def closest_distance_histogram(
    from_group: list[Sketch],
    to_group: list[Sketch],
    bin_width: float = 1.0,
    vmax: float = 50.0,
    content_only: bool = True,
) -> Histogram:
    """Distances from every stroke pixel of one group to the other group's strokes.

    For each foreground pixel of each drawing in ``from_group``, the distance
    to the nearest foreground pixel over the union of ``to_group`` drawings.
    Callers are expected to pass drawings that survived the validity filter.
    """
    if not from_group or not to_group:
        raise ValidationError("both groups must be non-empty")
    canvas = from_group[0].canvas
    for sk in list(from_group) + list(to_group):
        if sk.canvas != canvas:
            raise DimensionError("all drawings must share one canvas")
    union = np.zeros((canvas[1], canvas[0]), dtype=bool)
    for sk in to_group:
        union |= rasterize(sk, width=1.0, content_only=content_only).foreground_mask()
    if not union.any():
        raise EmptyRasterError("target group rasterizes to nothing")
    dist = distance_transform(RasterImage(np.where(union, 0, 255).astype(np.uint8))).data
    values = []
    for sk in from_group:
        fg = rasterize(sk, width=1.0, content_only=content_only).foreground_mask()
        values.append(dist[fg])
    return build_histogram(np.concatenate(values), bin_width=bin_width, vmin=0.0, vmax=vmax)


def compute_cdr(
    drawings: list[Sketch], radius: float = 3.0, content_only: bool = True
) -> RasterImage:
    """Commonly drawn region: pixels near every drawing and on at least one.

    A pixel is foreground iff each drawing has a stroke pixel within
    ``radius`` (Euclidean) and the pixel itself is a stroke pixel in at
    least one drawing, which keeps the region line-like rather than a blob.
    """
    if len(drawings) < 2:
        raise ValidationError("the commonly drawn region needs at least 2 drawings")
    canvas = drawings[0].canvas
    near_all = np.ones((canvas[1], canvas[0]), dtype=bool)
    any_fg = np.zeros((canvas[1], canvas[0]), dtype=bool)
    for sk in drawings:
        if sk.canvas != canvas:
            raise DimensionError("all drawings must share one canvas")
        fg = rasterize(sk, width=1.0, content_only=content_only).foreground_mask()
        if not fg.any():
            raise EmptyRasterError("a drawing rasterizes to nothing")
        dist = distance_transform(RasterImage(np.where(fg, 0, 255).astype(np.uint8))).data
        near_all &= dist <= radius
        any_fg |= fg
    cdr = near_all & any_fg
    return RasterImage(np.where(cdr, 0, 255).astype(np.uint8))


def scaffold_errors(
    multi: MultiLevelRegistration,
    tracing: Sketch,
    tolerance: int = DEFAULT_TOLERANCE,
    omega: float = DEFAULT_OMEGA,
    validity_threshold: float = VALIDITY_THRESHOLD,
    e_star: float | None = None,
    content_only: bool = True,
) -> DrawingErrors:
    """Error summary of one registered drawing against its tracing.

    Sketch-level errors come from the global transform G: |rotation|,
    |scale - 1|, and how far G moves the tracing's raster centroid.
    Stroke-level errors average |rotation|, translation norm, and
    |scale - 1| of each stroke's relative transform (local relative to
    global).  E_P is the fraction of stroke-level strokes whose width-1
    pixels overlap the tracing at a rate below 50%.
    """
    g = multi.sketch_transform
    trac_fg = rasterize(tracing, width=1.0, content_only=content_only).foreground_mask()
    if not trac_fg.any():
        raise EmptyRasterError("tracing rasterizes to nothing")
    ys, xs = np.nonzero(trac_fg)
    center = np.array([xs.mean(), ys.mean()])
    moved = g.apply(center[None, :])[0]

    rel_r, rel_t, rel_s = [], [], []
    for stroke, t in zip(multi.original.strokes, multi.stroke_transforms):
        if content_only and stroke.kind == "scaffold":
            continue
        rel = relative_transform(g, t)
        rel_r.append(abs(rel.theta_deg))
        rel_t.append(rel.translation_norm)
        rel_s.append(abs(rel.scale - 1.0))

    rates = _stroke_overlap_rates(multi.stroke_level, tracing, tolerance, content_only)
    incorrect = sum(1 for rate in rates if rate < STROKE_CORRECT_RATE)

    if e_star is None:
        e_star = score(
            rasterize(multi.pixel_level, width=1.0, content_only=content_only),
            rasterize(tracing, width=1.0, content_only=content_only),
            omega=omega,
            tolerance=tolerance,
        ).E
    return DrawingErrors(
        E_GR=abs(g.theta_deg),
        E_GT=float(np.hypot(*(moved - center))),
        E_GS=abs(g.scale - 1.0),
        E_LR=float(np.mean(rel_r)) if rel_r else 0.0,
        E_LT=float(np.mean(rel_t)) if rel_t else 0.0,
        E_LS=float(np.mean(rel_s)) if rel_s else 0.0,
        E_P=incorrect / len(rates) if rates else 0.0,
        valid=e_star > validity_threshold,
    )


def pixel_displacement_histogram(
    stroke_level: Sketch,
    pixel_level: Sketch,
    bin_width: float = 1.0,
    vmax: float = 50.0,
    content_only: bool = True,
) -> Histogram:
    """Histogram of per-point distances between two registration levels."""
    a_strokes = stroke_level.picked_strokes(content_only)
    b_strokes = pixel_level.picked_strokes(content_only)
    if len(a_strokes) != len(b_strokes):
        raise ValidationError("sketches do not correspond stroke-for-stroke")
    dists = []
    for a, b in zip(a_strokes, b_strokes):
        if len(a) != len(b):
            raise ValidationError("strokes do not correspond point-for-point")
        d = a.xy - b.xy
        dists.append(np.hypot(d[:, 0], d[:, 1]))
    values = np.concatenate(dists) if dists else np.empty(0)
    return build_histogram(values, bin_width=bin_width, vmin=0.0, vmax=vmax)


# --- temporal analysis ----------------------------------------------------

_PIXEL_SPACING = 0.5  # sub-pixel sampling step before rounding to pixels


def _timed_pixels(stroke) -> np.ndarray:
    """(N, 4) array of pixel x, y with interpolated t and pressure.

    The stroke is resampled densely along arc length, rounded to integer
    pixels, and consecutive repeats are collapsed, which approximates the
    width-1 rasterized line with a timestamp per pixel.
    """
    dense = resample_stroke(stroke, _PIXEL_SPACING).points
    cells = np.round(dense[:, :2])
    keep = np.ones(len(dense), dtype=bool)
    keep[1:] = np.any(cells[1:] != cells[:-1], axis=1)
    out = dense[keep].copy()
    out[:, :2] = cells[keep]
    return out


def _classify(result: SpearmanResult | None) -> str:
    if result is None or result.p_value >= SIGNIFICANCE_P:
        return "none"
    return "positive" if result.rho > 0 else "negative"


def _safe_spearman(x, y) -> SpearmanResult | None:
    try:
        return spearman(x, y)
    except (ValidationError, GeometryError):
        return None


@dataclass(frozen=True)
class FeatureCorrelation:
    feature: str
    rho: float | None
    p_value: float | None
    cls: str


@dataclass
class TemporalProfile:
    """How a drawing unfolds over 25 equal-duration time bins."""

    bin_counts: np.ndarray
    correlations: list[FeatureCorrelation]
    stroke_x_fractions: dict[str, float]
    stroke_y_fractions: dict[str, float]


def temporal_profile(
    sketch: Sketch, bins: int = TEMPORAL_BINS, content_only: bool = True
) -> TemporalProfile:
    """Bin stroke pixels into equal time slices and correlate features with time.

    Features: pixels per bin (vs bin index), pixel x, y, distance to the
    drawing centre, and pressure (each vs time).  Per-stroke x/y trends are
    aggregated into fractions of strokes classified positive/negative/none.
    """
    strokes = sketch.picked_strokes(content_only)
    if not strokes:
        raise ValidationError("sketch has no strokes to profile")
    per_stroke = [_timed_pixels(s) for s in strokes]
    pixels = np.concatenate(per_stroke)
    t = pixels[:, 2]
    t0, t1 = float(t.min()), float(t.max())
    if not t1 > t0:
        raise ValidationError("drawing duration is zero; temporal bins are undefined")

    edges = np.linspace(t0, t1, bins + 1)
    idx = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, bins - 1)
    bin_counts = np.bincount(idx, minlength=bins)

    all_points = np.concatenate([s.xy for s in strokes])
    center = all_points.mean(axis=0)
    center_dist = np.hypot(pixels[:, 0] - center[0], pixels[:, 1] - center[1])

    correlations = [
        FeatureCorrelation("bin_count", *_corr(np.arange(1, bins + 1), bin_counts)),
        FeatureCorrelation("x", *_corr(t, pixels[:, 0])),
        FeatureCorrelation("y", *_corr(t, pixels[:, 1])),
        FeatureCorrelation("center_dist", *_corr(t, center_dist)),
        FeatureCorrelation("pressure", *_corr(t, pixels[:, 3])),
    ]

    x_classes = [_classify(_safe_spearman(px[:, 2], px[:, 0])) for px in per_stroke]
    y_classes = [_classify(_safe_spearman(px[:, 2], px[:, 1])) for px in per_stroke]

    def fractions(classes: list[str]) -> dict[str, float]:
        n = len(classes)
        return {
            key: sum(1 for c in classes if c == key) / n
            for key in ("positive", "negative", "none")
        }

    return TemporalProfile(
        bin_counts=bin_counts,
        correlations=correlations,
        stroke_x_fractions=fractions(x_classes),
        stroke_y_fractions=fractions(y_classes),
    )


def _corr(x, y) -> tuple[float | None, float | None, str]:
    result = _safe_spearman(x, y)
    if result is None:
        return None, None, "none"
    return result.rho, result.p_value, _classify(result)


# --- stroke-order analysis --------------------------------------------------

ORDER_GAP_PX = 30.0
ORDER_ANGLE_DEG = 20.0
ATTACH_RADIUS_PX = 5.0


@dataclass(frozen=True)
class OrderingCosts:
    """Deviation from four stroke-ordering guidelines, each in [0, 1]."""

    simplicity: float
    proximity: float
    collinearity: float
    anchoring: float
    degenerate: bool = False  # fewer than 2 strokes; all costs forced to 0


def _stroke_complexity(xy: np.ndarray) -> float:
    """Arc length times mean absolute turning angle (radians)."""
    length = float(np.sum(segment_lengths(xy)))
    if len(xy) < 3:
        return 0.0
    v = np.diff(xy, axis=0)
    cross = v[:-1, 0] * v[1:, 1] - v[:-1, 1] * v[1:, 0]
    dot = np.einsum("ij,ij->i", v[:-1], v[1:])
    turning = np.abs(np.arctan2(cross, dot))
    return length * float(np.mean(turning))


def _endpoint_tangent(xy: np.ndarray, at_start: bool) -> np.ndarray:
    v = xy[1] - xy[0] if at_start else xy[-1] - xy[-2]
    norm = np.hypot(*v)
    return v / norm if norm > 0 else np.array([1.0, 0.0])


def ordering_costs(sketch: Sketch, content_only: bool = True) -> OrderingCosts:
    """Score the drawing order against four guidelines (lower = more compliant).

    simplicity: fraction of stroke pairs drawn against increasing-complexity
    order.  proximity: mean gap between consecutive strokes' endpoints,
    normalized by the canvas diagonal.  collinearity: for stroke pairs that
    look like continuations (endpoints within 30 px, tangents within 20
    degrees), the mean normalized separation in drawing order.  anchoring:
    fraction of attachment relations (a stroke endpoint on another stroke's
    interior) where the attachment was drawn before its substrate.
    """
    strokes = sketch.picked_strokes(content_only)
    k = len(strokes)
    if k < 2:
        return OrderingCosts(0.0, 0.0, 0.0, 0.0, degenerate=True)

    complexity = [_stroke_complexity(s.xy) for s in strokes]
    inversions = sum(
        1 for i in range(k) for j in range(i + 1, k) if complexity[i] > complexity[j]
    )
    simplicity = inversions / (k * (k - 1) / 2)

    diag = math.hypot(*sketch.canvas)
    gaps = [
        min(1.0, float(np.hypot(*(strokes[i + 1].xy[0] - strokes[i].xy[-1]))) / diag)
        for i in range(k - 1)
    ]
    proximity = float(np.mean(gaps))

    cos_limit = math.cos(math.radians(ORDER_ANGLE_DEG))
    separations = []
    for i in range(k):
        for j in range(i + 1, k):
            best = None
            for a_start in (True, False):
                for b_start in (True, False):
                    pa = strokes[i].xy[0 if a_start else -1]
                    pb = strokes[j].xy[0 if b_start else -1]
                    gap = float(np.hypot(*(pa - pb)))
                    if best is None or gap < best[0]:
                        best = (gap, a_start, b_start)
            gap, a_start, b_start = best
            if gap >= ORDER_GAP_PX:
                continue
            ta = _endpoint_tangent(strokes[i].xy, a_start)
            tb = _endpoint_tangent(strokes[j].xy, b_start)
            if abs(float(np.dot(ta, tb))) <= cos_limit:
                continue
            separations.append((j - i - 1) / (k - 2) if k > 2 else 0.0)
    collinearity = float(np.mean(separations)) if separations else 0.0

    relations = violations = 0
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if _is_attached(strokes[i].xy, strokes[j].xy):
                relations += 1
                if i < j:  # attachment drawn before its substrate
                    violations += 1
    anchoring = violations / relations if relations else 0.0

    return OrderingCosts(simplicity, proximity, collinearity, anchoring)


def _is_attached(a_xy: np.ndarray, b_xy: np.ndarray) -> bool:
    """Whether an endpoint of stroke a lies on the interior of stroke b."""
    total = float(np.sum(segment_lengths(b_xy)))
    if total <= 2 * ATTACH_RADIUS_PX:
        return False
    ends = np.array([a_xy[0], a_xy[-1]])
    dist, frac, _ = closest_point_on_polyline(ends, b_xy)
    arc = frac * total
    interior = (arc > ATTACH_RADIUS_PX) & (arc < total - ATTACH_RADIUS_PX)
    return bool(np.any((dist <= ATTACH_RADIUS_PX) & interior))


def compare_line_image(
    image: RasterImage,
    registered: Sketch,
    tolerance: int = DEFAULT_TOLERANCE,
    content_only: bool = True,
) -> tuple[float, float]:
    """Precision/recall of an external line image against a registered sketch.

    The image plays the role of the registered raster and the width-1
    rasterized sketch plays the tracing, so P is the fraction of image
    pixels explained by the sketch and R the fraction of sketch pixels
    covered by the image.
    """
    if image.data.shape != (registered.canvas[1], registered.canvas[0]):
        raise DimensionError("image and sketch canvas sizes differ")
    if not image.foreground_mask().any():
        raise EmptyRasterError("line image has no foreground")
    sc = score(
        image,
        rasterize(registered, width=1.0, content_only=content_only),
        omega=DEFAULT_OMEGA,
        tolerance=tolerance,
    )
    return sc.P, sc.R
