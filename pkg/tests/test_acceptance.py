"""Acceptance gate: one test per shipped guarantee.

Each test here states a headline property of the toolkit end to end, with
the tolerance that property is promised at.  Oracles are brute-force and
self-contained so a pass means the fast implementation agrees with an
independent computation, not with itself.  Run with ``pytest -v
tests/test_acceptance.py`` to get one pass/fail line per guarantee.

The only environment-dependent test is the dataset aggregate check, which
needs a converted copy of the public drawing corpus; it skips with a
documented reason when ``STROKELAB_DATASET`` is unset.
"""

from __future__ import annotations

import json
import math
import os
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from strokelab.bezier import fit_bezier
from strokelab.analysis import is_valid_drawing, scaffold_errors, valid_strokes
from strokelab.cli import run
from strokelab.core import Sketch, Stroke, closest_point_on_polyline
from strokelab.disturber import DisturberSet
from strokelab.layout import (
    ConnectionGraph,
    connection_graph,
    connection_residuals,
    layout_optimize,
    objective_and_gradient,
)
from strokelab.pixreg import RegistrationConfig, register_pixel_level, score
from strokelab.raster import RasterImage, rasterize
from strokelab.simfit import MultiLevelRegistration, SimilarityTransform, fit_levels, fit_similarity
from strokelab.sketch_io import save_sketch, sketch_to_dict
from strokelab.stats import mann_whitney_u, spearman
from strokelab.synthesis import synthesize

from conftest import random_sketch


def _stroke(xy, t0=0.0, width=1.5, kind="content"):
    xy = np.asarray(xy, dtype=np.float64)
    n = len(xy)
    pts = np.column_stack([xy, t0 + 12.0 * np.arange(n), np.full(n, 0.6)])
    return Stroke(points=pts, kind=kind, width=width)


def _mean_closest(sketch: Sketch, reference: Sketch) -> float:
    """Mean distance from sketch content points to the reference's strokes."""
    pts = sketch.points_xy()
    best = np.full(len(pts), np.inf)
    for ref in reference.content_strokes():
        d, _, _ = closest_point_on_polyline(pts, ref.xy)
        best = np.minimum(best, d)
    return float(best.mean())


# ---------------------------------------------------------------------------
# Similarity recovery


def test_similarity_recovery_exact_to_1e6_within_one_second():
    rng = np.random.default_rng(42)
    cases = []
    for _ in range(1000):
        n = int(rng.integers(3, 33))
        src = rng.uniform(0, 100, (n, 2))
        theta = float(rng.uniform(-180.0, 180.0))
        s = float(rng.uniform(0.3, 3.0))
        t = rng.uniform(-140.0, 140.0, 2)  # |t| <= 200
        truth = SimilarityTransform(theta_deg=theta, scale=s, tx=float(t[0]), ty=float(t[1]))
        cases.append((src, truth.apply(src), truth))

    start = time.perf_counter()
    fits = [fit_similarity(src, dst) for src, dst, _ in cases]
    elapsed = time.perf_counter() - start

    for fit, (_, _, truth) in zip(fits, cases):
        dtheta = (fit.theta_deg - truth.theta_deg + 180.0) % 360.0 - 180.0
        assert abs(dtheta) <= 1e-6
        assert abs(fit.scale - truth.scale) <= 1e-6
        assert abs(fit.tx - truth.tx) <= 1e-6
        assert abs(fit.ty - truth.ty) <= 1e-6
    assert elapsed < 1.0, f"1000 fits took {elapsed:.3f}s"


# ---------------------------------------------------------------------------
# Score agreement with a per-pixel oracle


def _oracle_prf(moving: np.ndarray, target: np.ndarray, omega: float, tol: int):
    """Chebyshev-window precision/recall, one foreground pixel at a time."""

    def hit_rate(src: np.ndarray, dst: np.ndarray) -> float:
        pad = np.pad(dst, tol, constant_values=False) if tol else dst
        hits, total = 0, 0
        for y, x in zip(*np.nonzero(src)):
            total += 1
            if tol:
                window = pad[y : y + 2 * tol + 1, x : x + 2 * tol + 1]
            else:
                window = dst[y : y + 1, x : x + 1]
            if window.any():
                hits += 1
        return hits / total

    p = hit_rate(moving, target)
    r = hit_rate(target, moving)
    return p, r, omega * p + r


def test_score_matches_exhaustive_pixel_oracle_exactly():
    rng = np.random.default_rng(7)
    for _ in range(200):
        h, w = rng.integers(8, 65, 2)
        tol = int(rng.integers(0, 3))
        fg_a = rng.random((h, w)) < rng.uniform(0.02, 0.2)
        fg_b = rng.random((h, w)) < rng.uniform(0.02, 0.2)
        fg_a[tuple(rng.integers(0, (h, w)))] = True  # never empty
        fg_b[tuple(rng.integers(0, (h, w)))] = True
        a = RasterImage(np.where(fg_a, 0, 255).astype(np.uint8))
        b = RasterImage(np.where(fg_b, 0, 255).astype(np.uint8))
        got = score(a, b, omega=1.1, tolerance=tol)
        want_p, want_r, want_e = _oracle_prf(fg_a, fg_b, 1.1, tol)
        assert got.P == want_p and got.R == want_r and got.E == want_e


# ---------------------------------------------------------------------------
# Registration convergence on synthetic warps


def _warp_sketch(sketch: Sketch, rng: np.random.Generator, amplitude: float) -> Sketch:
    """Smooth low-frequency displacement with the requested peak amplitude."""
    w, h = sketch.canvas
    freq = rng.uniform(0.5, 1.5, 2) / max(w, h)
    phase = rng.uniform(0, 2 * np.pi, 2)
    direction = rng.normal(size=(2, 2))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)

    def disp(xy):
        arg = 2 * np.pi * (xy @ freq)
        return amplitude * (
            np.outer(np.sin(arg + phase[0]), direction[0])
            + np.outer(np.cos(arg + phase[1]), direction[1])
        ) / 2.0

    strokes = []
    for s in sketch.strokes:
        xy = s.xy + disp(s.xy)
        xy[:, 0] = np.clip(xy[:, 0], 2, w - 3)
        xy[:, 1] = np.clip(xy[:, 1], 2, h - 3)
        strokes.append(s.with_xy(xy))
    return sketch.with_strokes(strokes)


def test_registration_halves_distance_on_fifty_synthetic_warps():
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    assert RegistrationConfig().widths() == (1, 1, 1, 1, 1, 1, 2, 3, 4, 5)
    for case in range(50):
        tracing = random_sketch(1000 + case, canvas=(128, 128), n_strokes=3, group="tracing")
        amplitude = float(rng.uniform(5.0, 15.0))
        warped = _warp_sketch(tracing, rng, amplitude)

        result = register_pixel_level(warped, tracing)
        assert [it.width for it in result.iterations] == [1, 1, 1, 1, 1, 1, 2, 3, 4, 5]
        scores = [it.E for it in result.iterations]
        assert result.chosen == 1 + int(np.argmax(scores))
        assert result.best.E >= scores[0], f"case {case}: best iteration no better than first"

        before = _mean_closest(warped, tracing)
        after = _mean_closest(result.registered, tracing)
        assert after <= 0.5 * before, (
            f"case {case}: distance only {before:.2f} -> {after:.2f} px "
            f"(amplitude {amplitude:.1f})"
        )
    assert time.perf_counter() - start < 300.0


# ---------------------------------------------------------------------------
# Validity thresholds


def test_validity_thresholds_match_documented_constants():
    # drawing level: E* must exceed 1.2
    assert not is_valid_drawing(1.05)
    assert is_valid_drawing(1.26)

    # stroke level: 80% overlap rule, probed from both sides
    line = np.column_stack([np.arange(100.0), np.full(100, 10.0)])
    drawn = Sketch([_stroke(line, width=1.0)], canvas=(120, 24))
    for cover, expect in ((77, False), (79, True)):
        tracing = Sketch([_stroke(line[: cover + 1], width=1.0)], group="tracing", canvas=(120, 24))
        assert valid_strokes(drawn, tracing) == [expect], f"tracing covering x<={cover}"

    # pixel level: 2 of 5 strokes off the tracing -> E_P = 0.4 (50% rule)
    ys = [20.0, 40.0, 60.0, 80.0, 100.0]
    xs = np.linspace(10.0, 90.0, 30)
    on = [np.column_stack([xs, np.full(30, y)]) for y in ys[:3]]
    off = [np.column_stack([xs, np.full(30, y)]) for y in ys[3:]]
    drawing = Sketch(
        [_stroke(p, t0=500.0 * i, width=1.0) for i, p in enumerate(on + off)], canvas=(128, 128)
    )
    tracing = Sketch(
        [_stroke(p, width=1.0) for p in on + [p + [0.0, 15.0] for p in off]],
        group="tracing",
        canvas=(128, 128),
    )
    identity = SimilarityTransform.identity()
    multi = MultiLevelRegistration(
        original=drawing,
        pixel_level=drawing,
        sketch_transform=identity,
        sketch_level=drawing,
        stroke_transforms=[identity] * 5,
        stroke_level=drawing,
    )
    errors = scaffold_errors(multi, tracing)
    assert errors.E_P == 0.4


# ---------------------------------------------------------------------------
# Rank statistics against pair-count oracles


def _oracle_ranks_doubled(values):
    out = []
    for v in values:
        less = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v) - 1
        out.append(2 * (less + 1) + equal)
    return out


def _oracle_rho(x, y) -> float:
    a, b = _oracle_ranks_doubled(list(x)), _oracle_ranks_doubled(list(y))
    n = len(a)
    num = n * sum(ai * bi for ai, bi in zip(a, b)) - sum(a) * sum(b)
    da = n * sum(ai * ai for ai in a) - sum(a) ** 2
    db = n * sum(bi * bi for bi in b) - sum(b) ** 2
    return max(-1.0, min(1.0, num / math.sqrt(da * db)))


def _oracle_u(a, b) -> float:
    u = 0.0
    for x in a:
        for y in b:
            u += 1.0 if x > y else 0.5 if x == y else 0.0
    return u


def test_rank_statistics_match_bruteforce_oracles_exactly():
    rng = np.random.default_rng(5)
    for _ in range(500):
        n = int(rng.integers(5, 9))
        x = rng.integers(0, 6, n)
        y = rng.integers(0, 6, n)
        if x.min() == x.max() or y.min() == y.max():
            continue
        assert spearman(x, y).rho == _oracle_rho(x, y)

        m = int(rng.integers(5, 9))
        a = rng.integers(0, 6, n)
        b = rng.integers(0, 6, m)
        assert mann_whitney_u(a, b).U == _oracle_u(a, b)

    base = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6, 5.3]
    assert spearman(base, base).rho == 1.0
    assert spearman(base, [-v for v in base]).rho == -1.0


# ---------------------------------------------------------------------------
# Layout gradient and junction repair


def test_layout_gradient_and_all_connection_residuals_within_half_pixel():
    # analytic gradient vs central differences on 100 random strokes
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(4, 12))
        points = rng.uniform(0, 50, (n, 2))
        vhat = np.diff(points, axis=0) + rng.normal(0, 0.5, (n - 1, 2))
        targets = [(0, points[0] + rng.normal(0, 2, 2)), (n - 1, points[-1] + rng.normal(0, 2, 2))]
        _, grad = objective_and_gradient(points, vhat, targets)

        fd = np.zeros_like(grad)
        h = 1e-5
        for k in range(n):
            for axis in range(2):
                plus, minus = points.copy(), points.copy()
                plus[k, axis] += h
                minus[k, axis] -= h
                fp, _ = objective_and_gradient(plus, vhat, targets)
                fm, _ = objective_and_gradient(minus, vhat, targets)
                fd[k, axis] = (fp - fm) / (2 * h)
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel < 1e-4

    # 20 broken layouts: per-stroke translations, then full repair
    rng = np.random.default_rng(9)
    fixed = 0
    for case in range(20):
        # a rectangle of four strokes plus a T-branch into one side
        x0, y0 = rng.uniform(20, 40, 2)
        wdt, hgt = rng.uniform(60, 100, 2)
        corners = np.array(
            [[x0, y0], [x0 + wdt, y0], [x0 + wdt, y0 + hgt], [x0, y0 + hgt], [x0, y0]]
        )
        polys = [np.linspace(corners[i], corners[i + 1], 12) for i in range(4)]
        anchor = polys[0][int(rng.integers(3, 9))]
        polys.append(np.linspace(anchor, anchor + [0.0, 0.6 * hgt], 10))
        clean = [_stroke(p, t0=300.0 * i) for i, p in enumerate(polys)]

        graph = connection_graph(clean)
        assert len(graph.edges) >= 4
        broken = [
            s.with_xy(s.xy + rng.uniform(-6, 6, 2)) for s in clean
        ]
        repaired = layout_optimize(broken, graph)
        residuals = connection_residuals(repaired, graph)
        assert np.all(residuals <= 0.5), f"case {case}: residuals {residuals}"
        fixed += len(residuals)
    assert fixed > 0


# ---------------------------------------------------------------------------
# Synthesis sanity


def _fixture_tracings(count: int = 10) -> list[Sketch]:
    """Deterministic tracings with junctions: jittered box-and-arch drawings."""
    tracings = []
    for i in range(count):
        rng = np.random.default_rng(500 + i)
        cx, cy = rng.uniform(90, 110, 2)
        half = rng.uniform(30, 40)
        box = np.array(
            [
                [cx - half, cy - half],
                [cx + half, cy - half],
                [cx + half, cy + half],
                [cx - half, cy + half],
                [cx - half, cy - half],
            ]
        )
        strokes = [_stroke(np.linspace(box[j], box[j + 1], 14), t0=400.0 * j) for j in range(4)]
        ang = np.linspace(np.pi, 2 * np.pi, 20)
        radius = 0.8 * half
        arch = np.column_stack([cx + radius * np.cos(ang), cy - half + 0.5 * radius * np.sin(ang)])
        strokes.append(_stroke(arch, t0=1600.0))
        tracings.append(
            Sketch(strokes, prompt_id=f"fx{i}", user_id="artist", group="tracing", canvas=(200, 200))
        )
    return tracings


def test_synthesis_zero_noise_identity_monotone_noise_and_determinism():
    models = DisturberSet.zero("novice")
    tracings = _fixture_tracings(10)

    # zero disturbers and n1 = n2 = 0 reproduce each tracing
    for tracing in tracings:
        out = synthesize(tracing, "novice", 0.0, 0.0, models, seed=7)
        assert _mean_closest(out, tracing) <= 1.0
        assert out.group == "synthetic"

    # mean deviation cannot shrink as the noise level rises
    levels = (0.0, 0.1, 0.2, 0.3)
    means = []
    for level in levels:
        devs = [
            _mean_closest(synthesize(tr, "novice", level, level, models, seed=21 + k), tr)
            for k, tr in enumerate(tracings)
        ]
        means.append(float(np.mean(devs)))
    assert all(b >= a - 1e-12 for a, b in zip(means, means[1:])), means
    assert means[-1] > means[0]

    # identical seeds are bitwise identical; different seeds are not
    a = synthesize(tracings[0], "novice", 0.2, 0.2, models, seed=123)
    b = synthesize(tracings[0], "novice", 0.2, 0.2, models, seed=123)
    c = synthesize(tracings[0], "novice", 0.2, 0.2, models, seed=124)
    assert json.dumps(sketch_to_dict(a)) == json.dumps(sketch_to_dict(b))
    assert json.dumps(sketch_to_dict(a)) != json.dumps(sketch_to_dict(c))


# ---------------------------------------------------------------------------
# Dataset aggregate directions (optional, needs the public corpus)


@pytest.mark.skipif(
    "STROKELAB_DATASET" not in os.environ,
    reason="needs the public drawing corpus converted to the exchange format; "
    "set STROKELAB_DATASET to its directory to run the aggregate checks",
)
def test_group_scale_error_directions_on_public_dataset():
    """Novice global scale error: worse without scaffolds; professionals better.

    Aggregates are checked directionally and against the published novice
    values within +-0.03, since the upstream registration backend differs.
    """
    root = Path(os.environ["STROKELAB_DATASET"])
    files = sorted(p for p in root.iterdir() if p.suffix == ".json")
    tracings, drawings = {}, []
    for path in files:
        from strokelab.sketch_io import load_sketch

        sk = load_sketch(path)
        if sk.group == "tracing":
            tracings[sk.prompt_id] = sk
        elif sk.group in ("novice", "professional"):
            drawings.append(sk)
    assert tracings and drawings, "dataset must hold tracings and drawings"

    e_gs: dict[tuple[str, bool], list[float]] = {}
    for sk in drawings:
        tracing = tracings[sk.prompt_id]
        for with_scaffolds in (False, True):
            content_only = not with_scaffolds
            result = register_pixel_level(
                sk, tracing, RegistrationConfig(content_only=content_only)
            )
            if not result.is_valid():
                continue
            multi = fit_levels(sk, result.registered, content_only=content_only)
            errors = scaffold_errors(
                multi, tracing, e_star=result.best.E, content_only=content_only
            )
            e_gs.setdefault((sk.group, with_scaffolds), []).append(errors.E_GS)

    novice_without = float(np.mean(e_gs[("novice", False)]))
    novice_with = float(np.mean(e_gs[("novice", True)]))
    assert novice_without > novice_with
    assert abs(novice_without - 0.18) <= 0.03
    assert abs(novice_with - 0.14) <= 0.03
    assert float(np.mean(e_gs[("professional", False)])) < novice_without
    assert float(np.mean(e_gs[("professional", True)])) < novice_with


# ---------------------------------------------------------------------------
# End-to-end CLI determinism


def _build_cli_dataset(root: Path) -> None:
    root.mkdir()
    xs = np.linspace(60, 180, 22)
    template = [
        np.column_stack([xs, np.full(22, 80.0)]),
        np.column_stack([np.full(22, 60.0), np.linspace(80, 170, 22)]),
        np.column_stack([xs, np.full(22, 170.0)]),
    ]
    tracing = Sketch(
        [_stroke(p, t0=900.0 * i, width=2.0) for i, p in enumerate(template)],
        prompt_id="d1",
        user_id="artist",
        group="tracing",
        canvas=(240, 240),
    )
    save_sketch(tracing, root / "d1_tracing.json")
    for k, uid in enumerate(("u1", "u2")):
        rng = np.random.default_rng(77 + k)
        strokes = []
        for j, p in enumerate(template):
            off = rng.normal(0, 0.7, p.shape)
            off[0] = off[-1] = 0
            strokes.append(_stroke(p + off + [1.5, -1.0], t0=900.0 * j, width=2.0))
        sketch = Sketch(strokes, prompt_id="d1", user_id=uid, group="novice", canvas=(240, 240))
        save_sketch(sketch, root / f"d1_{uid}.json")


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_every_cli_subcommand_is_byte_deterministic(tmp_path):
    data = tmp_path / "data"
    _build_cli_dataset(data)
    trees = []
    for attempt in ("one", "two"):
        out = tmp_path / attempt
        prod, rep, mod = out / "prod", out / "report", out / "models"
        files = out / "files"
        files.mkdir(parents=True)
        ds = str(data)

        assert run(["register", "--dataset", ds, "--out-dir", str(prod), "--jobs", "2"]) == 0
        assert run(["fit-levels", "--dataset", ds, "--reg-dir", str(prod), "--out-dir", str(prod)]) == 0
        assert run(["analyze", "--dataset", ds, "--sidecars", str(prod), "--out", str(rep)]) == 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # tiny training set
            assert (
                run(
                    [
                        "train-disturbers",
                        "--dataset",
                        ds,
                        "--sidecars",
                        str(prod),
                        "--style",
                        "novice",
                        "--out",
                        str(mod),
                        "--epochs",
                        "25",
                    ]
                )
                == 0
            )
        tracing = str(data / "d1_tracing.json")
        syn = files / "syn.json"
        assert (
            run(
                [
                    "synthesize",
                    "--tracing",
                    tracing,
                    "--style",
                    "novice",
                    "--n1",
                    "0.15",
                    "--n2",
                    "0.15",
                    "--seed",
                    "7",
                    "--models",
                    str(mod),
                    "--out",
                    str(syn),
                    "--svg",
                    str(files / "syn.svg"),
                ]
            )
            == 0
        )
        assert (
            run(
                [
                    "compare-synthetic",
                    "--synthetic",
                    str(syn),
                    "--tracing",
                    tracing,
                    "--out",
                    str(files / "cmp.json"),
                ]
            )
            == 0
        )
        assert run(["rasterize", "--input", str(syn), "--out", str(files / "syn.png")]) == 0
        assert run(["export-svg", "--input", tracing, "--out", str(files / "tracing.svg")]) == 0
        trees.append(_tree_bytes(out))

    assert sorted(trees[0]) == sorted(trees[1])
    for name in trees[0]:
        assert trees[0][name] == trees[1][name], f"{name} differs between identical runs"
