"""Stroke layout: connectivity recovery after per-stroke disturbing.

Disturbing strokes independently breaks junctions that exist in the
tracing.  ``layout_init`` translates strokes one-by-one so each lands
where the tracing put it relative to the already-placed strokes;
``layout_optimize`` then pulls connected endpoints back together with a
quadratic objective (connection + shape preservation + smoothness) that
solves exactly as a sparse linear system per stroke.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csc_matrix, diags
from scipy.sparse.linalg import spsolve

from .core import Sketch, Stroke, point_at_arc_fraction
from .errors import ValidationError

CONNECT_EPS_PX = 3.0
RESIDUAL_TOL_PX = 0.5
SHAPE_WEIGHT = 1.0
SMOOTH_WEIGHT = 0.5
MAX_PASSES = 3


@dataclass(frozen=True)
class ConnectionEdge:
    """One stroke endpoint resting on (or touching) another stroke.

    ``param`` is the arc-length fraction of the resting point on stroke
    ``dst``; ``offset`` is the tracing-space vector from that point to the
    endpoint, kept so optimization restores the original contact geometry
    rather than collapsing gaps that the tracing itself has.
    """

    src: int
    end: str  # "start" | "end"
    dst: int
    param: float
    offset: tuple[float, float]


@dataclass(frozen=True)
class ConnectionGraph:
    n_strokes: int
    edges: tuple[ConnectionEdge, ...]
    eps_c: float = CONNECT_EPS_PX


def _strokes_of(obj) -> list[Stroke]:
    if isinstance(obj, Sketch):
        return obj.picked_strokes()
    return list(obj)


def _closest_on_polyline(point: np.ndarray, poly: np.ndarray) -> tuple[float, float]:
    """(distance, arc fraction) of the closest point on a polyline."""
    from .core import closest_point_on_polyline

    d, frac, _ = closest_point_on_polyline(np.asarray(point)[None, :], poly)
    return float(d[0]), float(frac[0])


def connection_graph(tracing: Sketch | Sequence[Stroke], eps_c: float = CONNECT_EPS_PX) -> ConnectionGraph:
    """Record every stroke endpoint lying within eps_c of another stroke.

    Endpoint-to-endpoint contacts would otherwise appear twice (once from
    each side); only the lower-indexed stroke's edge is kept for those.
    T-junctions (endpoint on an interior) are always kept.
    """
    strokes = _strokes_of(tracing)
    polys = [s.xy for s in strokes]
    edges: list[ConnectionEdge] = []
    for i, poly_i in enumerate(polys):
        for end, pt in (("start", poly_i[0]), ("end", poly_i[-1])):
            for j, poly_j in enumerate(polys):
                if j == i:
                    continue
                d, frac = _closest_on_polyline(pt, poly_j)
                if not d < eps_c:
                    continue
                foot = point_at_arc_fraction(poly_j, frac)
                end_gap = min(
                    np.hypot(*(foot - poly_j[0])), np.hypot(*(foot - poly_j[-1]))
                )
                if end_gap < eps_c and j < i:
                    continue  # the endpoint-endpoint contact is recorded from side j
                edges.append(
                    ConnectionEdge(i, end, j, float(frac), (float(pt[0] - foot[0]), float(pt[1] - foot[1])))
                )
    return ConnectionGraph(len(strokes), tuple(edges), eps_c)


def _endpoint_index(stroke_pts: np.ndarray, end: str) -> int:
    return 0 if end == "start" else len(stroke_pts) - 1


def _edge_target(edge: ConnectionEdge, polys: list[np.ndarray]) -> np.ndarray:
    foot = point_at_arc_fraction(polys[edge.dst], edge.param)
    return foot + edge.offset


def connection_residuals(strokes: Sequence[Stroke] | Sketch, graph: ConnectionGraph) -> np.ndarray:
    """Distance of each edge's endpoint from its target, in drawing order."""
    polys = [s.xy for s in _strokes_of(strokes)]
    if len(polys) != graph.n_strokes:
        raise ValidationError("stroke count does not match the connection graph")
    out = np.empty(len(graph.edges))
    for k, e in enumerate(graph.edges):
        pt = polys[e.src][_endpoint_index(polys[e.src], e.end)]
        out[k] = np.hypot(*(pt - _edge_target(e, polys)))
    return out


# ---------------------------------------------------------------------------
# Initialization


def _map_index(idx: int, n_from: int, n_to: int) -> int:
    if n_from == n_to:
        return idx
    if n_from < 2:
        return 0
    return int(round(idx * (n_to - 1) / (n_from - 1)))


def layout_init(
    disturbed: Sequence[Stroke] | Sketch,
    tracing: Sequence[Stroke] | Sketch,
    graph: ConnectionGraph | None = None,
) -> list[Stroke]:
    """Translate strokes one-by-one into tracing-consistent positions.

    For stroke i, each earlier stroke j votes with the closest tracing
    point pair (alpha on t_j, beta on t_i): the vote moves d_i so that its
    beta point sits at t_i_beta - t_j_alpha + d_j_alpha, i.e. the tracing
    offset re-anchored at the already-placed stroke.  Votes are blended
    with softmax(1/(dist+1)) weights.  The first stroke never moves; if
    disturbed == tracing every vote is exactly zero.  ``graph`` is
    accepted for signature symmetry but unused (closest pairs are
    recomputed on the tracing strokes directly).
    """
    d_strokes = _strokes_of(disturbed)
    t_strokes = _strokes_of(tracing)
    if len(d_strokes) != len(t_strokes):
        raise ValidationError("disturbed and tracing stroke lists must correspond")
    t_polys = [s.xy for s in t_strokes]
    placed = [s.xy.copy() for s in d_strokes]
    for i in range(1, len(placed)):
        votes = np.zeros((i, 2))
        scores = np.zeros(i)
        for j in range(i):
            diff = t_polys[j][:, None, :] - t_polys[i][None, :, :]
            d2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
            alpha, beta = np.unravel_index(np.argmin(d2), d2.shape)
            scores[j] = 1.0 / (np.sqrt(d2[alpha, beta]) + 1.0)
            a = _map_index(alpha, len(t_polys[j]), len(placed[j]))
            b = _map_index(beta, len(t_polys[i]), len(placed[i]))
            votes[j] = (t_polys[i][beta] - placed[i][b]) - (t_polys[j][alpha] - placed[j][a])
        w = np.exp(scores - scores.max())
        w /= w.sum()
        placed[i] += w @ votes
    return [s.with_xy(xy) for s, xy in zip(d_strokes, placed)]


# ---------------------------------------------------------------------------
# Optimization


def _difference_matrices(n: int):
    d1 = diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
    if n >= 3:
        d2 = diags([np.ones(n - 2), -2 * np.ones(n - 2), np.ones(n - 2)], [0, 1, 2], shape=(n - 2, n))
    else:
        d2 = csc_matrix((0, n))
    return csc_matrix(d1), csc_matrix(d2)


def objective_and_gradient(
    points: np.ndarray,
    vhat: np.ndarray,
    endpoint_targets: Sequence[tuple[int, np.ndarray]],
    w_s: float = SHAPE_WEIGHT,
    w_m: float = SMOOTH_WEIGHT,
) -> tuple[float, np.ndarray]:
    """Value and analytic gradient of the per-stroke layout objective.

    F = sum_e |p[k_e] - target_e|^2
        + w_s * sum_k |(p[k+1]-p[k]) - vhat[k]|^2
        + w_m * sum_k |p[k+1] - 2 p[k] + p[k-1]|^2
    """
    p = np.asarray(points, dtype=np.float64)
    grad = np.zeros_like(p)
    f = 0.0
    for k, target in endpoint_targets:
        r = p[k] - target
        f += float(r @ r)
        grad[k] += 2.0 * r
    dv = np.diff(p, axis=0) - vhat
    f += w_s * float(np.sum(dv * dv))
    grad[:-1] += -2.0 * w_s * dv
    grad[1:] += 2.0 * w_s * dv
    if len(p) >= 3:
        lap = p[2:] - 2 * p[1:-1] + p[:-2]
        f += w_m * float(np.sum(lap * lap))
        grad[2:] += 2.0 * w_m * lap
        grad[1:-1] += -4.0 * w_m * lap
        grad[:-2] += 2.0 * w_m * lap
    return f, grad


def _solve_stroke(
    points: np.ndarray,
    vhat: np.ndarray,
    endpoint_targets: Sequence[tuple[int, np.ndarray]],
    w_s: float,
    w_m: float,
) -> np.ndarray | None:
    """Exact minimizer of the quadratic objective, or None if singular."""
    n = len(points)
    d1, d2 = _difference_matrices(n)
    sel = np.zeros(n)
    rhs = np.zeros((n, 2))
    for k, target in endpoint_targets:
        sel[k] += 1.0
        rhs[k] += target
    a = diags([sel], [0]) + w_s * (d1.T @ d1) + w_m * (d2.T @ d2)
    rhs += w_s * (d1.T @ vhat)
    a = csc_matrix(a)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            sol = np.column_stack([spsolve(a, rhs[:, 0]), spsolve(a, rhs[:, 1])])
    except Exception:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol


def layout_optimize(
    strokes: Sequence[Stroke] | Sketch,
    graph: ConnectionGraph,
    w_s: float = SHAPE_WEIGHT,
    w_m: float = SMOOTH_WEIGHT,
    eps_fix: float = RESIDUAL_TOL_PX,
    max_passes: int = MAX_PASSES,
) -> list[Stroke]:
    """Re-join broken connections while preserving disturbed stroke shape.

    Strokes whose connection residual exceeds eps_fix are re-solved
    against targets on their neighbors' current polylines; a pass may
    move targets, so up to ``max_passes`` passes run.  Unresolved edges
    after the last pass are reported as warnings.
    """
    stroke_list = _strokes_of(strokes)
    if len(stroke_list) != graph.n_strokes:
        raise ValidationError("stroke count does not match the connection graph")
    polys = [s.xy.copy() for s in stroke_list]
    vhats = [np.diff(p, axis=0) for p in polys]

    # Edges act on both member strokes when the contact is endpoint to
    # endpoint (each pulls toward the other, so junction consensus forms
    # within the pass budget); a T-junction only moves the branch.
    incident: dict[int, list[tuple[ConnectionEdge, bool]]] = {}
    for e in graph.edges:
        incident.setdefault(e.src, []).append((e, True))
        dst_poly = polys[e.dst]
        foot = point_at_arc_fraction(dst_poly, e.param)
        if min(np.hypot(*(foot - dst_poly[0])), np.hypot(*(foot - dst_poly[-1]))) < graph.eps_c:
            incident.setdefault(e.dst, []).append((e, False))

    # Solving a stroke moves its neighbors' targets, so a pass keeps
    # re-solving the strokes of still-broken edges until none remain (or
    # the sweep budget runs out); later passes mop up what a singular skip
    # or a stubborn junction left behind.
    sweeps_per_pass = 2 * max(graph.n_strokes, 1)
    for _ in range(max_passes):
        for _ in range(sweeps_per_pass):
            residuals = _residuals_on(polys, graph)
            over = {e.src for e, r in zip(graph.edges, residuals) if r > eps_fix}
            over |= {e.dst for e, r in zip(graph.edges, residuals) if r > eps_fix}
            broken = sorted(i for i in over if incident.get(i))
            if not broken:
                break
            for i in broken:
                targets = []
                for e, is_src in incident[i]:
                    if is_src:
                        idx = _endpoint_index(polys[i], e.end)
                        targets.append((idx, _edge_target(e, polys)))
                    else:
                        src_pt = polys[e.src][_endpoint_index(polys[e.src], e.end)]
                        foot = point_at_arc_fraction(polys[i], e.param)
                        idx = 0 if e.param <= 0.5 else len(polys[i]) - 1
                        targets.append((idx, src_pt - e.offset + (polys[i][idx] - foot)))
                sol = _solve_stroke(polys[i], vhats[i], targets, w_s, w_m)
                if sol is None:
                    warnings.warn(f"stroke {i}: singular layout system, skipped", stacklevel=2)
                    continue
                polys[i] = sol
        if not np.any(_residuals_on(polys, graph) > eps_fix):
            break

    residuals = _residuals_on(polys, graph)
    for e, r in zip(graph.edges, residuals):
        if r > eps_fix:
            warnings.warn(
                f"connection {e.src}:{e.end} -> {e.dst} still {r:.2f} px off", stacklevel=2
            )
    return [s.with_xy(p) for s, p in zip(stroke_list, polys)]


def _residuals_on(polys: list[np.ndarray], graph: ConnectionGraph) -> np.ndarray:
    out = np.empty(len(graph.edges))
    for k, e in enumerate(graph.edges):
        pt = polys[e.src][_endpoint_index(polys[e.src], e.end)]
        out[k] = np.hypot(*(pt - _edge_target(e, polys)))
    return out
