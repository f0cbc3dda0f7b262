"""Freehand-style sketch synthesis from a tracing.

Each tracing stroke is reduced to a degree-5 Bézier curve, disturbed at
three granularities (whole-stroke similarity, control-point shape change,
correlated point jitter), then the stroke layout is re-established so
junctions present in the tracing survive the disturbance.  All randomness
flows through one seeded generator, so outputs are bitwise reproducible
per (tracing, style, n1, n2, seed).
"""

from __future__ import annotations

import warnings

import numpy as np

from .bezier import BezierStroke, fit_bezier, sample_polyline
from .core import Sketch, Stroke
from .disturber import (
    DisturberSet,
    disturb_extrinsic,
    disturb_intrinsic,
    disturb_points,
)
from .errors import ValidationError
from .layout import (
    CONNECT_EPS_PX,
    SHAPE_WEIGHT,
    SMOOTH_WEIGHT,
    connection_graph,
    layout_init,
    layout_optimize,
)

MIN_SAMPLES = 16
NOISE_WARN_LEVEL = 0.3


def sample_curve_stroke(curve: BezierStroke, template: Stroke, n_points: int) -> Stroke:
    """Render a curve as a Stroke, carrying the template's pen metadata.

    Timestamps are spread linearly over the template's time span and
    pressure is resampled by normalized position along the stroke.
    """
    xy = sample_polyline(curve, n_points)
    pts = np.empty((n_points, 4))
    pts[:, 0:2] = xy
    u = np.linspace(0.0, 1.0, n_points)
    src_u = np.linspace(0.0, 1.0, len(template.points))
    pts[:, 2] = np.interp(u, [0.0, 1.0], [template.t[0], template.t[-1]])
    pts[:, 3] = np.interp(u, src_u, template.pressure)
    return Stroke(points=pts, kind="content", width=template.width)


def synthesize(
    tracing: Sketch,
    style: str,
    n1: float,
    n2: float,
    models: DisturberSet,
    seed: int = 7,
    *,
    eps_c: float = CONNECT_EPS_PX,
    w_s: float = SHAPE_WEIGHT,
    w_m: float = SMOOTH_WEIGHT,
) -> Sketch:
    """Produce one synthetic drawing of a tracing at the given noise levels.

    The pipeline per stroke: Bézier fit, extrinsic disturb (n1), intrinsic
    disturb (n2), polyline sampling at max(16, source point count), point
    disturb; then layout initialization against the tracing and layout
    optimization over the tracing's connection graph.  Stroke count and
    drawing order are preserved; the result is marked group="synthetic".
    """
    if models.style != style:
        raise ValidationError(f"models are for style {models.style!r}, requested {style!r}")
    for level, name in ((n1, "n1"), (n2, "n2")):
        if not 0.0 <= level <= 1.0:
            raise ValidationError(f"{name} must be in [0, 1], got {level}")
        if level > NOISE_WARN_LEVEL:
            warnings.warn(f"{name}={level} is above the calibrated range (0..0.3)", stacklevel=2)
    content = tracing.picked_strokes()
    if not content:
        raise ValidationError("tracing has no content strokes to synthesize from")

    rng = np.random.default_rng(seed)
    disturbed: list[Stroke] = []
    references: list[Stroke] = []
    for stroke in content:
        b0 = fit_bezier(stroke)
        _, b1 = disturb_extrinsic(b0, n1, models.extrinsic, rng)
        b2 = disturb_intrinsic(b1, n2, models.intrinsic, rng)
        n_points = max(MIN_SAMPLES, b0.source_len)
        # the reference uses the same sampling so layout_init sees a 1:1
        # point correspondence and the zero-noise case is an exact fixed point
        references.append(sample_curve_stroke(b0, stroke, n_points))
        poly = sample_curve_stroke(b2, stroke, n_points)
        disturbed.append(disturb_points(poly, models.point, rng, curve=b2, n=n2))

    placed = layout_init(disturbed, references)
    graph = connection_graph(references, eps_c=eps_c)
    final = layout_optimize(placed, graph, w_s=w_s, w_m=w_m)

    return Sketch(
        strokes=final,
        prompt_id=tracing.prompt_id,
        user_id=tracing.user_id,
        group="synthetic",
        canvas=tracing.canvas,
        extra={
            **tracing.extra,
            "synthesis": {"style": style, "n1": n1, "n2": n2, "seed": seed},
        },
    )
