import json
import re

import numpy as np
import pytest
from PIL import Image

from conftest import random_sketch
from strokelab.core import Sketch, Stroke
from strokelab.errors import FormatError, ValidationError
from strokelab.raster import rasterize
from strokelab.sketch_io import (
    export_png,
    export_svg,
    load_sketch,
    save_sketch,
    sketch_from_dict,
)


def _sketch_dict(**overrides):
    obj = {
        "prompt_id": "p1",
        "user_id": "u1",
        "group": "novice",
        "canvas": [100, 80],
        "strokes": [
            {
                "kind": "content",
                "width": 1.5,
                "points": [[1.0, 2.0, 0.0, 0.5], [20.0, 2.0, 10.0, 0.6], [20.0, 30.0, 25.0, 0.7]],
            }
        ],
    }
    obj.update(overrides)
    return obj


def test_round_trip_is_fixed_point(tmp_path):
    sk = random_sketch(5, canvas=(120, 90))
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_sketch(sk, p1)
    loaded = load_sketch(p1)
    save_sketch(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    again = load_sketch(p2)
    assert again.prompt_id == sk.prompt_id and again.group == sk.group
    assert again.canvas == sk.canvas
    assert len(again.strokes) == len(sk.strokes)
    for a, b in zip(again.strokes, sk.strokes):
        assert np.array_equal(a.points, b.points)
        assert a.kind == b.kind and a.width == b.width


def test_unknown_keys_survive_round_trip(tmp_path):
    obj = _sketch_dict(device="tablet-x", session={"room": 3})
    obj["strokes"][0]["tool"] = "pen"
    path = tmp_path / "s.json"
    path.write_text(json.dumps(obj))
    sk = load_sketch(path)
    assert sk.extra["device"] == "tablet-x"
    assert sk.extra["session"] == {"room": 3}
    assert sk.strokes[0].extra["tool"] == "pen"
    out = tmp_path / "o.json"
    save_sketch(sk, out)
    reloaded = json.loads(out.read_text())
    assert reloaded["device"] == "tablet-x"
    assert reloaded["session"] == {"room": 3}
    assert reloaded["strokes"][0]["tool"] == "pen"


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"prompt_id": "p",\n  "user_id": }')
    with pytest.raises(FormatError, match="line 2"):
        load_sketch(path)


def test_missing_field_is_named():
    obj = _sketch_dict()
    del obj["canvas"]
    with pytest.raises(FormatError, match="canvas"):
        sketch_from_dict(obj)


def test_non_monotone_time_names_stroke():
    obj = _sketch_dict()
    obj["strokes"][0]["points"][2][2] = 5.0
    with pytest.raises(ValidationError, match="stroke 0"):
        sketch_from_dict(obj)


def test_pressure_out_of_range_rejected():
    obj = _sketch_dict()
    obj["strokes"][0]["points"][1][3] = 1.2
    with pytest.raises(ValidationError, match="pressure"):
        sketch_from_dict(obj)


def test_unknown_group_rejected():
    with pytest.raises(ValidationError, match="group"):
        sketch_from_dict(_sketch_dict(group="apprentice"))


def test_three_value_points_rejected():
    obj = _sketch_dict()
    obj["strokes"][0]["points"] = [[0, 0, 0], [5, 0, 1]]
    with pytest.raises(FormatError, match="points"):
        sketch_from_dict(obj)


def test_loading_cleans_duplicates_and_short_strokes():
    obj = _sketch_dict()
    obj["strokes"] = [
        {
            "kind": "content",
            "width": 1.0,
            "points": [[0, 0, 0, 1], [0, 0, 1, 1], [10, 0, 2, 1]],
        },
        # Total arc length under 2 px: dropped as a pen tap.
        {"kind": "content", "width": 1.0, "points": [[50, 50, 0, 1], [50.5, 50, 1, 1]]},
    ]
    sk = sketch_from_dict(obj)
    assert len(sk.strokes) == 1
    assert len(sk.strokes[0].points) == 2


def test_svg_export_round_trips_coordinates(tmp_path):
    sk = random_sketch(9, canvas=(150, 150), n_strokes=3)
    sk.strokes[1] = Stroke(sk.strokes[1].points, kind="scaffold", width=2.0)
    path = tmp_path / "out.svg"
    export_svg(sk, path)
    text = path.read_text()
    assert f'viewBox="0 0 {sk.canvas[0]} {sk.canvas[1]}"' in text
    paths = re.findall(r'<path[^>]*d="([^"]+)"', text)
    assert len(paths) == len(sk.strokes)
    for d, stroke in zip(paths, sk.strokes):
        coords = np.array(re.findall(r"[-\d.]+", d), dtype=float).reshape(-1, 2)
        assert np.allclose(coords, stroke.xy, atol=1e-3)
    assert "stroke-dasharray" in re.findall(r"<path[^>]*>", text)[1]


def test_png_export_round_trips(tmp_path):
    sk = random_sketch(2, canvas=(64, 48))
    img = rasterize(sk, width=2.0)
    path = tmp_path / "r.png"
    export_png(img, path)
    back = np.asarray(Image.open(path))
    assert np.array_equal(back, img.data)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    sk = random_sketch(1)
    save_sketch(sk, tmp_path / "s.json")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["s.json"]
