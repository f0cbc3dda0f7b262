"""CSV/JSON report emission for dataset-level analysis runs.

All outputs are deterministic: rows are sorted by (prompt_id, user_id),
group and histogram names alphabetically, and floats are printed with a
fixed format, so re-running on identical inputs reproduces identical bytes.
The CSV headers are part of the output contract.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import DrawingErrors, Histogram, OrderingCosts, TemporalProfile
from .errors import ValidationError
from .sketch_io import write_text_atomic

_FLOAT_FMT = "{:.10g}"

ERROR_COLUMNS = (
    "prompt_id",
    "user_id",
    "group",
    "valid",
    "E_GR",
    "E_GT",
    "E_GS",
    "E_LR",
    "E_LT",
    "E_LS",
    "E_P",
)
HISTOGRAM_COLUMNS = ("group", "name", "bin_lo", "bin_hi", "count")
TEMPORAL_COLUMNS = ("group", "feature", "positive", "negative", "none")
ORDERING_COLUMNS = ("group", "cost", "mean", "sd")

_ORDERING_NAMES = ("simplicity", "proximity", "collinearity", "anchoring")


@dataclass
class DrawingRecord:
    """Everything the report knows about one analysed drawing."""

    prompt_id: str
    user_id: str
    group: str
    errors: DrawingErrors | None = None
    temporal: TemporalProfile | None = None
    ordering: OrderingCosts | None = None


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return _FLOAT_FMT.format(value)
    return str(value)


def _write_csv(path: Path, header: tuple[str, ...], rows: list[tuple]) -> None:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    write_text_atomic(path, buf.getvalue())


def emit_report(
    records: list[DrawingRecord],
    out_dir: str | Path,
    histograms: dict[str, dict[str, Histogram]] | None = None,
) -> dict:
    """Write the report tables and summary; returns the summary dict.

    ``histograms`` maps group -> histogram name -> Histogram, covering the
    cross-group distance and displacement distributions.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create report directory {out}: {exc}") from exc
    records = sorted(records, key=lambda r: (r.prompt_id, r.user_id))
    histograms = histograms or {}

    error_rows = [
        (
            r.prompt_id,
            r.user_id,
            r.group,
            r.errors.valid,
            r.errors.E_GR,
            r.errors.E_GT,
            r.errors.E_GS,
            r.errors.E_LR,
            r.errors.E_LT,
            r.errors.E_LS,
            r.errors.E_P,
        )
        for r in records
        if r.errors is not None
    ]
    _write_csv(out / "drawing_errors.csv", ERROR_COLUMNS, error_rows)

    hist_rows = []
    for group in sorted(histograms):
        for name in sorted(histograms[group]):
            h = histograms[group][name]
            for lo, hi, count in zip(h.bin_edges[:-1], h.bin_edges[1:], h.counts):
                hist_rows.append((group, name, float(lo), float(hi), int(count)))
    _write_csv(out / "histograms.csv", HISTOGRAM_COLUMNS, hist_rows)

    groups = sorted({r.group for r in records})
    temporal_rows = []
    for group in groups:
        profiles = [r.temporal for r in records if r.group == group and r.temporal]
        if not profiles:
            continue
        features = [c.feature for c in profiles[0].correlations]
        for feature in features:
            classes = [
                next(c.cls for c in p.correlations if c.feature == feature) for p in profiles
            ]
            n = len(classes)
            temporal_rows.append(
                (
                    group,
                    feature,
                    sum(c == "positive" for c in classes) / n,
                    sum(c == "negative" for c in classes) / n,
                    sum(c == "none" for c in classes) / n,
                )
            )
        for axis, pick in (("stroke_x", "stroke_x_fractions"), ("stroke_y", "stroke_y_fractions")):
            fracs = [getattr(p, pick) for p in profiles]
            temporal_rows.append(
                (
                    group,
                    axis,
                    float(np.mean([f["positive"] for f in fracs])),
                    float(np.mean([f["negative"] for f in fracs])),
                    float(np.mean([f["none"] for f in fracs])),
                )
            )
    _write_csv(out / "temporal_classes.csv", TEMPORAL_COLUMNS, temporal_rows)

    ordering_rows = []
    for group in groups:
        costs = [r.ordering for r in records if r.group == group and r.ordering]
        if not costs:
            continue
        for name in _ORDERING_NAMES:
            values = np.array([getattr(c, name) for c in costs])
            sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            ordering_rows.append((group, name, float(values.mean()), sd))
    _write_csv(out / "ordering_costs.csv", ORDERING_COLUMNS, ordering_rows)

    summary = {
        "format_version": 1,
        "drawings": len(records),
        "groups": {
            group: sum(1 for r in records if r.group == group) for group in groups
        },
        "valid_drawings": sum(1 for r in records if r.errors and r.errors.valid),
        "tables": [
            "drawing_errors.csv",
            "histograms.csv",
            "temporal_classes.csv",
            "ordering_costs.csv",
        ],
    }
    write_text_atomic(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
