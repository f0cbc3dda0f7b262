"""Reading, writing, and exporting sketches.

The on-disk sketch format is a single JSON object:

    {
      "prompt_id": "p03", "user_id": "u11", "group": "novice",
      "canvas": [800, 800],
      "strokes": [
        {"kind": "content", "width": 1.5,
         "points": [[x, y, t_ms, pressure], ...]},
        ...
      ]
    }

Unknown keys, both top-level and per stroke, survive a load/save round
trip unchanged.  Loading also normalises geometry: consecutive duplicate
points are dropped, and strokes left with fewer than two points or less
than 2 px of total arc length are discarded.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    GROUPS,
    MIN_STROKE_LENGTH,
    STROKE_KINDS,
    Sketch,
    Stroke,
    arc_length,
    clean_points,
)
from .errors import FormatError, ValidationError
from .raster import RasterImage

FORMAT_VERSION = 1

_SKETCH_KEYS = ("prompt_id", "user_id", "group", "canvas", "strokes")
_STROKE_KEYS = ("kind", "width", "points")

# SVG stroke colours; scaffold lines are drawn light and dashed so the two
# kinds stay distinguishable in any viewer.
_SVG_CONTENT_STYLE = 'stroke="#1a1a1a"'
_SVG_SCAFFOLD_STYLE = 'stroke="#8ba6d9" stroke-dasharray="6,4"'


def write_bytes_atomic(path: str | Path, data: bytes) -> None:
    """Write a file so readers never observe a partial result."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str | Path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise FormatError(f"{where}: missing required field {key!r}")
    return obj[key]


def sketch_from_dict(obj: dict, where: str = "sketch") -> Sketch:
    """Build a validated Sketch from decoded JSON data."""
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: top level must be an object")
    for key in ("prompt_id", "user_id"):
        value = _require(obj, key, where)
        if not isinstance(value, str):
            raise FormatError(f"{where}: field {key!r} must be a string")
    group = _require(obj, "group", where)
    if group not in GROUPS:
        raise ValidationError(f"{where}: unknown group {group!r} (expected one of {GROUPS})")
    canvas = _require(obj, "canvas", where)
    if (
        not isinstance(canvas, (list, tuple))
        or len(canvas) != 2
        or not all(isinstance(v, (int, float)) and v > 0 for v in canvas)
    ):
        raise FormatError(f"{where}: field 'canvas' must be [width, height] with positive values")
    raw_strokes = _require(obj, "strokes", where)
    if not isinstance(raw_strokes, list):
        raise FormatError(f"{where}: field 'strokes' must be a list")

    strokes: list[Stroke] = []
    for i, raw in enumerate(raw_strokes):
        label = f"{where}: stroke {i}"
        if not isinstance(raw, dict):
            raise FormatError(f"{label}: must be an object")
        kind = _require(raw, "kind", label)
        if kind not in STROKE_KINDS:
            raise ValidationError(f"{label}: unknown kind {kind!r}")
        width = _require(raw, "width", label)
        if not isinstance(width, (int, float)) or not width > 0:
            raise ValidationError(f"{label}: width must be a positive number")
        pts = _require(raw, "points", label)
        if not isinstance(pts, list) or any(
            not isinstance(p, (list, tuple)) or len(p) != 4 for p in pts
        ):
            raise FormatError(f"{label}: points must be a list of [x, y, t_ms, pressure]")
        arr = np.asarray(pts, dtype=np.float64)
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValidationError(f"{label}: points contain non-finite values")
        if len(arr) and (np.any(arr[:, 3] < 0) or np.any(arr[:, 3] > 1)):
            raise ValidationError(f"{label}: pressure must lie in [0, 1]")
        if len(arr) and np.any(np.diff(arr[:, 2]) < 0):
            raise ValidationError(f"{label}: timestamps must be non-decreasing")
        if len(arr) < 2:
            continue
        arr = clean_points(arr)
        if len(arr) < 2 or arc_length(arr[:, :2]) < MIN_STROKE_LENGTH:
            continue
        extra = {k: raw[k] for k in raw if k not in _STROKE_KEYS}
        strokes.append(Stroke(arr, kind=kind, width=float(width), extra=extra))

    extra = {k: obj[k] for k in obj if k not in _SKETCH_KEYS}
    return Sketch(
        strokes,
        prompt_id=obj["prompt_id"],
        user_id=obj["user_id"],
        group=group,
        canvas=(int(canvas[0]), int(canvas[1])),
        extra=extra,
    )


def sketch_to_dict(sketch: Sketch) -> dict:
    obj = {
        "prompt_id": sketch.prompt_id,
        "user_id": sketch.user_id,
        "group": sketch.group,
        "canvas": [sketch.canvas[0], sketch.canvas[1]],
        "strokes": [
            {
                "kind": s.kind,
                "width": s.width,
                "points": s.points.tolist(),
                **{k: v for k, v in sorted(s.extra.items())},
            }
            for s in sketch.strokes
        ],
    }
    for key in sorted(sketch.extra):
        obj.setdefault(key, sketch.extra[key])
    obj.setdefault("format_version", FORMAT_VERSION)
    return obj


def load_sketch(path: str | Path) -> Sketch:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: cannot read file: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return sketch_from_dict(obj, where=str(path))


def save_sketch(sketch: Sketch, path: str | Path) -> None:
    write_text_atomic(path, json.dumps(sketch_to_dict(sketch)))


def export_svg(sketch: Sketch, path: str | Path) -> None:
    """Write the sketch as an SVG with one path per stroke, in draw order."""
    w, h = sketch.canvas
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
    ]
    for stroke in sketch.strokes:
        cmds = [f"{'M' if i == 0 else 'L'} {x:.4f} {y:.4f}" for i, (x, y) in enumerate(stroke.xy)]
        style = _SVG_CONTENT_STYLE if stroke.kind == "content" else _SVG_SCAFFOLD_STYLE
        lines.append(
            f'  <path fill="none" {style} stroke-width="{stroke.width:g}" '
            f'stroke-linecap="round" stroke-linejoin="round" d="{" ".join(cmds)}"/>'
        )
    lines.append("</svg>")
    write_text_atomic(path, "\n".join(lines) + "\n")


def export_png(raster: RasterImage, path: str | Path) -> None:
    path = Path(path)
    img = Image.fromarray(raster.data, mode="L")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".png")
    os.close(fd)
    try:
        img.save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
