import numpy as np
import pytest

from conftest import random_sketch
from strokelab.core import Sketch, Stroke, closest_point_on_polyline
from strokelab.errors import DimensionError, EmptyRasterError, FormatError
from strokelab.pixreg import (
    DisplacementField,
    RegistrationConfig,
    apply_displacement,
    default_width_schedule,
    estimate_displacement,
    read_field,
    register_pixel_level,
    sample_field,
    score,
    write_field,
)
from strokelab.raster import RasterImage, rasterize


def brute_score(reg_mask, trac_mask, omega, tolerance):
    """Per-pixel double loop over Chebyshev neighbourhoods."""

    def hits(src, ref):
        h, w = src.shape
        n = 0
        for y, x in zip(*np.nonzero(src)):
            y0, y1 = max(0, y - tolerance), min(h, y + tolerance + 1)
            x0, x1 = max(0, x - tolerance), min(w, x + tolerance + 1)
            if ref[y0:y1, x0:x1].any():
                n += 1
        return n

    reg_n = np.count_nonzero(reg_mask)
    trac_n = np.count_nonzero(trac_mask)
    if reg_n == 0:
        return 0.0, 0.0, 0.0
    p = hits(reg_mask, trac_mask) / reg_n
    r = hits(trac_mask, reg_mask) / trac_n
    return p, r, omega * p + r


def as_raster(mask):
    return RasterImage(np.where(mask, 0, 255).astype(np.uint8))


def test_score_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        h, w = rng.integers(8, 24, size=2)
        reg = rng.random((h, w)) < 0.2
        trac = rng.random((h, w)) < 0.2
        if not trac.any():
            trac[h // 2, w // 2] = True
        for tol in (0, 1, 2):
            got = score(as_raster(reg), as_raster(trac), omega=1.1, tolerance=tol)
            p, r, e = brute_score(reg, trac, 1.1, tol)
            assert got.P == p and got.R == r
            assert got.E == pytest.approx(e, abs=1e-15)
            assert 0 <= got.P <= 1 and 0 <= got.R <= 1


def test_score_identical_rasters():
    sk = random_sketch(1, canvas=(64, 64))
    img = rasterize(sk, width=1.0)
    got = score(img, img)
    assert got.P == 1.0 and got.R == 1.0
    assert got.E == pytest.approx(2.1)


def test_score_empty_cases():
    trac = as_raster(np.eye(8, dtype=bool))
    empty = as_raster(np.zeros((8, 8), dtype=bool))
    got = score(empty, trac)
    assert (got.P, got.R, got.E) == (0.0, 0.0, 0.0)
    with pytest.raises(EmptyRasterError):
        score(trac, empty)


def test_score_dimension_mismatch():
    a = as_raster(np.ones((8, 8), dtype=bool))
    b = as_raster(np.ones((8, 9), dtype=bool))
    with pytest.raises(DimensionError):
        score(a, b)


def test_default_width_schedule():
    assert default_width_schedule(10) == (1, 1, 1, 1, 1, 1, 2, 3, 4, 5)


def test_sample_field_matches_bilinear_oracle():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(10, 12, 2)).astype(np.float32)
    fld = DisplacementField(data)
    pts = rng.uniform(0, [11, 9], size=(40, 2))
    got = sample_field(fld, pts)
    for (x, y), v in zip(pts, got):
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        x1, y1 = min(x0 + 1, 11), min(y0 + 1, 9)
        fx, fy = x - x0, y - y0
        want = (
            data[y0, x0] * (1 - fx) * (1 - fy)
            + data[y0, x1] * fx * (1 - fy)
            + data[y1, x0] * (1 - fx) * fy
            + data[y1, x1] * fx * fy
        )
        assert np.allclose(v, want, atol=1e-6)


def test_apply_displacement_constant_field():
    sk = random_sketch(3, canvas=(50, 50))
    data = np.zeros((50, 50, 2), dtype=np.float32)
    data[:, :, 0] = 3.0
    data[:, :, 1] = -2.0
    moved = apply_displacement(sk, DisplacementField(data))
    for a, b in zip(moved.strokes, sk.strokes):
        assert np.allclose(a.xy, b.xy + [3.0, -2.0], atol=1e-5)
        assert np.array_equal(a.t, b.t)
        assert np.array_equal(a.pressure, b.pressure)
        assert a.kind == b.kind and a.width == b.width


def test_field_dump_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    fld = DisplacementField(rng.normal(size=(7, 9, 2)).astype(np.float32))
    path = tmp_path / "f.dsdf"
    write_field(fld, path)
    back = read_field(path)
    assert np.array_equal(back.data, fld.data)
    raw = path.read_bytes()
    assert raw[:4] == b"DSDF"
    assert int.from_bytes(raw[4:8], "little") == 9
    assert int.from_bytes(raw[8:12], "little") == 7


def test_field_dump_rejects_garbage(tmp_path):
    p = tmp_path / "bad.dsdf"
    p.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(FormatError):
        read_field(p)
    p.write_bytes(b"DSDF" + (3).to_bytes(4, "little") + (3).to_bytes(4, "little") + b"\x00" * 8)
    with pytest.raises(FormatError, match="truncated"):
        read_field(p)


def test_estimate_displacement_identical_is_zero():
    sk = random_sketch(5, canvas=(96, 96))
    img = rasterize(sk, width=2.0)
    fld = estimate_displacement(img, img)
    assert np.max(np.abs(fld.data)) <= 1e-6


def test_estimate_displacement_dimension_and_empty_checks():
    sk = random_sketch(6, canvas=(64, 64))
    img = rasterize(sk, width=1.0)
    other = RasterImage(np.full((32, 32), 255, np.uint8))
    with pytest.raises(DimensionError):
        estimate_displacement(img, RasterImage(np.full((32, 64), 255, np.uint8)))
    with pytest.raises(EmptyRasterError):
        estimate_displacement(img, RasterImage(np.full((64, 64), 255, np.uint8)))
    with pytest.raises(EmptyRasterError):
        estimate_displacement(RasterImage(np.full((64, 64), 255, np.uint8)), img)
    del other


def test_estimate_displacement_recovers_translation():
    base = random_sketch(7, canvas=(128, 128), n_strokes=3)
    shifted = base.with_strokes([s.with_xy(s.xy + [6.0, -4.0]) for s in base.strokes])
    mov = rasterize(shifted, width=3.0)
    fix = rasterize(base, width=3.0)
    fld = estimate_displacement(mov, fix)
    moved = apply_displacement(shifted, fld)

    # Mean distance from each point to its own stroke's tracing polyline.
    def mean_dist(sk):
        dists = [
            closest_point_on_polyline(s.xy, b.xy)[0]
            for s, b in zip(sk.strokes, base.strokes)
        ]
        return float(np.mean(np.concatenate(dists)))

    before = mean_dist(shifted)
    after = mean_dist(moved)
    assert before > 5.0
    assert after < 0.4 * before


def test_estimate_displacement_never_increases_objective():
    rng = np.random.default_rng(8)
    base = random_sketch(9, canvas=(96, 96), n_strokes=2)
    warped = base.with_strokes(
        [
            s.with_xy(s.xy + 5.0 * np.column_stack([np.sin(s.xy[:, 1] / 17), np.cos(s.xy[:, 0] / 23)]))
            for s in base.strokes
        ]
    )
    mov = rasterize(warped, width=2.0)
    fix = rasterize(base, width=2.0)
    fld = estimate_displacement(mov, fix)

    from strokelab.raster import distance_transform

    dist = distance_transform(fix).data
    py, px = np.nonzero(mov.foreground_mask())

    def data_term(u):
        from strokelab.pixreg import _bilinear

        d = _bilinear(dist, px + u[py, px, 0], py + u[py, px, 1])
        return float(np.sum(d * d))

    zero = np.zeros_like(fld.data, dtype=np.float64)
    assert data_term(fld.data.astype(np.float64)) <= data_term(zero)


def test_estimate_displacement_is_deterministic():
    base = random_sketch(10, canvas=(96, 96))
    moved = base.with_strokes([s.with_xy(s.xy + [4.0, 3.0]) for s in base.strokes])
    mov = rasterize(moved, width=2.0)
    fix = rasterize(base, width=2.0)
    a = estimate_displacement(mov, fix)
    b = estimate_displacement(mov, fix)
    assert np.array_equal(a.data, b.data)


def test_register_self_picks_first_iteration():
    sk = random_sketch(11, canvas=(96, 96), n_strokes=3)
    res = register_pixel_level(sk, sk)
    assert res.chosen == 1
    assert res.best.E == pytest.approx(2.1)
    assert [s.width for s in res.iterations] == [1, 1, 1, 1, 1, 1, 2, 3, 4, 5]
    assert res.is_valid()
    for a, b in zip(res.registered.strokes, sk.strokes):
        assert np.allclose(a.xy, b.xy, atol=1e-5)


def test_register_scores_recomputable_from_snapshots():
    base = random_sketch(12, canvas=(96, 96), n_strokes=2)
    warped = base.with_strokes([s.with_xy(s.xy + [5.0, -3.0]) for s in base.strokes])
    res = register_pixel_level(warped, base)
    trac = rasterize(base, width=1.0)
    for it, snap in zip(res.iterations, res.snapshots):
        sc = score(rasterize(snap, width=1.0), trac, omega=res.config.omega, tolerance=res.config.tolerance)
        assert (sc.P, sc.R, sc.E) == (it.P, it.R, it.E)
    assert res.best.E == max(s.E for s in res.iterations)
    assert res.best.E >= res.iterations[0].E
    for snap in res.snapshots:
        assert len(snap.strokes) == len(warped.strokes)
        for a, b in zip(snap.strokes, warped.strokes):
            assert len(a) == len(b)
            assert np.array_equal(a.t, b.t)


def test_register_canvas_mismatch():
    a = random_sketch(13, canvas=(64, 64))
    b = random_sketch(13, canvas=(65, 64))
    with pytest.raises(DimensionError):
        register_pixel_level(a, b)
