"""Structural analysis backing the shadowing pipeline: positively invariant
flow tubes around vertex trajectories, gate points between regions,
boundary separation curves, and the scenario-fitted constants that replace
the existential constants of the underlying estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from .errors import HorizonExceeded
from .field import PatchyField
from .geometry import (TOL_GEO, collinear_overlap, segment_point_distance,
                       segment_segment_distance)
from .integrate import (DEFAULT_OPTS, Direction, SolverOptions, Trajectory,
                        VertexTrajectory, _bisect_event, _fast_field,
                        _rk4_step, boundary_classification, exit_time,
                        vertex_trajectories)


# -- flow-to-line helper ------------------------------------------------------

def time_to_line(f: PatchyField, alpha: int, x0, anchor, normal,
                 opts: SolverOptions = DEFAULT_OPTS, cap: float = 50.0,
                 backward: bool = False):
    """First time the single-patch flow from x0 crosses the given line.
    Returns (time, point) or None if the line is not met within the cap."""
    g = _fast_field(f.patch(alpha).field)
    sign = -1.0 if backward else 1.0
    ax, ay = float(anchor[0]), float(anchor[1])
    nx, ny = float(normal[0]), float(normal[1])

    def sd(px, py):
        return (px - ax) * nx + (py - ay) * ny

    x, y = float(x0[0]), float(x0[1])
    s0 = sd(x, y)
    t = 0.0
    while t < cap:
        dt = min(opts.h, cap - t)
        x2, y2 = _rk4_step(g, x, y, sign * dt)
        if sd(x2, y2) * s0 < 0 or abs(sd(x2, y2)) < opts.tol_geo:
            def pred(s):
                px, py = _rk4_step(g, x, y, sign * s)
                return sd(px, py) * s0 < 0 or abs(sd(px, py)) < opts.tol_geo
            s_star = _bisect_event(pred, 0.0, dt, opts.tol_t)
            px, py = _rk4_step(g, x, y, sign * s_star)
            return t + s_star, np.array([px, py])
        t, x, y = t + dt, x2, y2
    return None


# -- tubes --------------------------------------------------------------------

@dataclass
class Gate:
    """A window on one region boundary edge around a trajectory crossing."""

    crossing_index: int
    edge_id: int
    s_lo: float
    s_hi: float
    incoming: bool

    def interval_points(self, region):
        e = region.boundary_edges[self.edge_id]
        return e.point_at(self.s_lo), e.point_at(self.s_hi)

    def contains_point(self, region, p, pad: float = 1e-9) -> bool:
        e = region.boundary_edges[self.edge_id]
        a, b = e.a, e.b
        ex, ey = b[0] - a[0], b[1] - a[1]
        ll = ex * ex + ey * ey
        s = ((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / ll
        d = segment_point_distance(a, b, p)
        width = pad + 1e-7
        return (self.s_lo - pad / math.sqrt(ll) <= s <= self.s_hi + pad / math.sqrt(ll)
                and d <= width)


class Tube:
    """Width-lambda invariant neighborhood of one vertex trajectory, carried
    by gate windows on the edges it crosses. Membership is decided by
    tracing a point backward until it leaves the region and checking the
    exit against the gate windows."""

    def __init__(self, f: PatchyField, vt: VertexTrajectory, lam: float,
                 opts: SolverOptions = DEFAULT_OPTS):
        self.f = f
        self.alpha = vt.alpha
        self.vt = vt
        self.lam = float(lam)
        self.opts = opts
        self.region = f.effective_region(vt.alpha)
        self._bc = boundary_classification(f, vt.alpha)
        self.gates: list[Gate] = []
        self.spread = lam  # max gate half-width actually realized
        self._build()

    # gate construction -------------------------------------------------------

    def _edges_at(self, p, tol=1e-6):
        ids = []
        for i, e in enumerate(self.region.boundary_edges):
            if segment_point_distance(e.a, e.b, p) <= tol:
                ids.append(i)
        return ids

    def _param_on_edge(self, edge_id: int, p) -> float:
        e = self.region.boundary_edges[edge_id]
        a, b = e.a, e.b
        ex, ey = b[0] - a[0], b[1] - a[1]
        return float(((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / (ex * ex + ey * ey))

    def _build(self):
        vt, lam = self.vt, self.lam
        prev_points: list[np.ndarray] = []
        prev_half = lam
        for h, t_cross in enumerate(vt.crossing_times):
            center = vt.gamma.eval(t_cross)
            # spread can grow by the local flow modulus plus the ball width
            allowed = 1.5 * prev_half + lam
            half_here = lam
            for eid in self._edges_at(center):
                e = self.region.boundary_edges[eid]
                length = e.length
                sc = self._param_on_edge(eid, center)
                if prev_points:
                    hits = []
                    for q in prev_points:
                        r = time_to_line(self.f, self.alpha, q, e.a, e.normal,
                                         self.opts, cap=vt.duration + 2.0)
                        if r is not None:
                            hits.append(self._param_on_edge(eid, r[1]))
                    if hits:
                        lo = min(min(hits), sc) - lam / length
                        hi = max(max(hits), sc) + lam / length
                    else:
                        lo, hi = sc - lam / length, sc + lam / length
                else:
                    lo, hi = sc - lam / length, sc + lam / length
                lo = max(lo, sc - allowed / length)
                hi = min(hi, sc + allowed / length)
                lo, hi = max(0.0, lo), min(1.0, hi)
                if hi <= lo:
                    continue
                gate = Gate(h, eid, lo, hi,
                            incoming=eid in self._bc.incoming)
                self.gates.append(gate)
                half = 0.5 * (hi - lo) * length
                self.spread = max(self.spread, half)
                half_here = max(half_here, half)
            new_prev = []
            for gate in self.gates:
                if gate.crossing_index == h:
                    a, b = gate.interval_points(self.region)
                    new_prev.extend([a, 0.5 * (a + b), b])
            if new_prev:
                prev_points = new_prev
                prev_half = half_here

    # membership ---------------------------------------------------------------

    def contains(self, p, pad: Optional[float] = None) -> bool:
        pad = 2 * self.lam if pad is None else pad
        px, py = float(p[0]), float(p[1])
        if not self.f.region_contains_fast(self.alpha, px, py, self.opts.tol_geo):
            return False
        if self.distance_to_axis(p) > max(4.0, 2 * self.spread / max(self.lam, 1e-12)) * self.lam + pad:
            return False
        for gate in self.gates:
            if gate.contains_point(self.region, p, pad=self.lam):
                return True
        g = _fast_field(self.f.patch(self.alpha).field)
        x, y = px, py
        t = 0.0
        cap = self.vt.duration + 2.0
        tol = self.opts.tol_geo
        while t < cap:
            dt = min(self.opts.h, cap - t)
            nx, ny = _rk4_step(g, x, y, -dt)
            if not self.f.region_contains_fast(self.alpha, nx, ny, tol):
                def pred(s):
                    qx, qy = _rk4_step(g, x, y, -s)
                    return not self.f.region_contains_fast(self.alpha, qx, qy, tol)
                s_star = _bisect_event(pred, 0.0, dt, self.opts.tol_t)
                ex_, ey_ = _rk4_step(g, x, y, -s_star)
                exit_pt = np.array([ex_, ey_])
                return any(gate.contains_point(self.region, exit_pt,
                                               pad=10 * tol)
                           for gate in self.gates if gate.incoming)
            t, x, y = t + dt, nx, ny
        return False

    def distance_to_axis(self, p) -> float:
        ts = self.vt.gamma.sample_times()
        pts = np.vstack([self.vt.gamma.eval(t) for t in ts[:: max(1, len(ts) // 200)]])
        d = np.hypot(pts[:, 0] - p[0], pts[:, 1] - p[1])
        return float(d.min())

    def nearest_crossing(self, p):
        """(index, distance) of the crossing point closest to p."""
        best, bd = 0, math.inf
        for h, t_cross in enumerate(self.vt.crossing_times):
            c = self.vt.gamma.eval(t_cross)
            d = math.hypot(c[0] - p[0], c[1] - p[1])
            if d < bd:
                best, bd = h, d
        return best, bd


def build_tubes(f: PatchyField, alpha: int, lam: float,
                opts: SolverOptions = DEFAULT_OPTS,
                vts: Optional[Sequence[VertexTrajectory]] = None):
    vts = vertex_trajectories(f, alpha, opts) if vts is None else vts
    return [Tube(f, vt, lam, opts) for vt in vts]


def tubes_disjoint(tubes: Sequence[Tube], n_samples: int = 24) -> bool:
    """Sampled pairwise disjointness of tube axes inflated by their spread."""
    for i, ta in enumerate(tubes):
        for tb in tubes[i + 1:]:
            ga, gb = ta.vt.gamma, tb.vt.gamma
            ta_pts = [ga.eval(t) for t in np.linspace(ga.t0, ga.t1, n_samples)]
            gap = min(tb.distance_to_axis(p) for p in ta_pts)
            if gap <= ta.spread + tb.spread:
                return False
    return True


# -- gates between region pairs ----------------------------------------------

@dataclass
class GatePoint:
    point: np.ndarray
    lower: int
    upper: int
    on_vertex_trajectory: Optional[VertexTrajectory]
    vt_time: float = 0.0


def interface_overlaps(f: PatchyField, a: int, b: int,
                       opts: SolverOptions = DEFAULT_OPTS):
    """Collinear overlaps of outflow boundary of region a with inflow
    boundary of region b, as a list of segments."""
    ra, rb = f.effective_region(a), f.effective_region(b)
    bca = boundary_classification(f, a)
    bcb = boundary_classification(f, b)
    out = []
    for i in bca.outgoing:
        ea = ra.boundary_edges[i]
        for j in bcb.incoming:
            eb = rb.boundary_edges[j]
            seg = collinear_overlap(ea.a, ea.b, eb.a, eb.b)
            if seg is not None:
                out.append(seg)
    return out


def gate_points(f: PatchyField, a: int, b: int,
                opts: SolverOptions = DEFAULT_OPTS,
                vts_b: Optional[Sequence[VertexTrajectory]] = None,
                tol: float = 1e-7):
    """Points of the outflow/inflow interface that sit on a vertex of either
    region or on a vertex trajectory of the entering region."""
    overlaps = interface_overlaps(f, a, b, opts)
    if not overlaps:
        return []
    ra, rb = f.effective_region(a), f.effective_region(b)
    vts_b = vertex_trajectories(f, b, opts) if vts_b is None else vts_b
    found: list[GatePoint] = []

    def add(p, vt=None, vt_time=0.0):
        for gp in found:
            if math.hypot(gp.point[0] - p[0], gp.point[1] - p[1]) <= 10 * tol:
                if vt is not None and gp.on_vertex_trajectory is None:
                    gp.on_vertex_trajectory = vt
                    gp.vt_time = vt_time
                return
        found.append(GatePoint(np.asarray(p, dtype=float), a, b, vt, vt_time))

    for seg in overlaps:
        for vset in (ra.vertices, rb.vertices):
            for v in vset:
                if segment_point_distance(seg[0], seg[1], v) <= tol:
                    add(v)
        for vt in vts_b:
            ts = vt.gamma.sample_times()
            pts = np.vstack([vt.gamma.eval(t) for t in ts])
            d = np.array([segment_point_distance(seg[0], seg[1], p) for p in pts])
            k = 0
            while k < len(ts):
                if d[k] <= max(tol, 1e-7):
                    j = k
                    while j + 1 < len(ts) and d[j + 1] <= max(tol, 1e-7):
                        j += 1
                    kk = k + int(np.argmin(d[k:j + 1]))
                    add(pts[kk], vt, float(ts[kk]))
                    k = j + 1
                else:
                    k += 1
    return found


# -- punctured boundary components ---------------------------------------------

class BoundaryComplex:
    """Union of boundary pieces of one or two regions, punctured by balls
    around gate points; supports component lookup and separation distances.
    Exact on polygons: pieces are split combinatorially, never sampled."""

    def __init__(self, pieces, centers, radius: float):
        self.sub = []  # (a, b) sub-segments after puncturing
        for (a, b) in pieces:
            parts = [(np.asarray(a, float), np.asarray(b, float))]
            for c in centers:
                parts = [q for seg in parts for q in _cut_ball(seg, c, radius)]
            self.sub.extend(parts)
        n = len(self.sub)
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i in range(n):
            for j in range(i + 1, n):
                if segment_segment_distance(*self.sub[i], *self.sub[j]) <= 1e-9:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[ri] = rj
        self._find = find
        self.component = [find(i) for i in range(n)]

    def component_of_point(self, p, tol: float = 1e-6):
        best, bd = None, math.inf
        for i, (a, b) in enumerate(self.sub):
            d = segment_point_distance(a, b, p)
            if d < bd:
                best, bd = i, d
        if best is None or bd > tol:
            return None
        return self.component[best]

    def min_component_separation(self) -> float:
        comps = sorted(set(self.component))
        if len(comps) < 2:
            return math.inf
        best = math.inf
        for ci in range(len(comps)):
            for cj in range(ci + 1, len(comps)):
                for i, (a, b) in enumerate(self.sub):
                    if self.component[i] != comps[ci]:
                        continue
                    for j, (c, d) in enumerate(self.sub):
                        if self.component[j] != comps[cj]:
                            continue
                        best = min(best, segment_segment_distance(a, b, c, d))
        return best


def _cut_ball(seg, center, radius: float):
    """Remove from a segment its intersection with a closed ball."""
    a, b = seg
    ex, ey = b[0] - a[0], b[1] - a[1]
    ll = ex * ex + ey * ey
    if ll == 0.0:
        return []
    fx, fy = a[0] - center[0], a[1] - center[1]
    # |a + s e - c|^2 = r^2
    A, B, C = ll, 2 * (fx * ex + fy * ey), fx * fx + fy * fy - radius * radius
    disc = B * B - 4 * A * C
    if disc <= 0:
        return [seg]
    sq = math.sqrt(disc)
    s0, s1 = (-B - sq) / (2 * A), (-B + sq) / (2 * A)
    out = []
    if s0 > 0.0:
        lo, hi = 0.0, min(s0, 1.0)
        if (hi - lo) * math.sqrt(ll) > 1e-12:
            out.append((a + lo * np.array([ex, ey]), a + hi * np.array([ex, ey])))
    if s1 < 1.0:
        lo, hi = max(s1, 0.0), 1.0
        if (hi - lo) * math.sqrt(ll) > 1e-12:
            out.append((a + lo * np.array([ex, ey]), a + hi * np.array([ex, ey])))
    return out


def pair_separation(f: PatchyField, a: int, b: int, lam: float,
                    opts: SolverOptions = DEFAULT_OPTS,
                    gates: Optional[Sequence[GatePoint]] = None) -> float:
    """Separation of the punctured two-region boundary at puncture radius
    lam: the least distance between distinct connected components, or the
    outflow/inflow distance when the regions do not interface."""
    gates = gate_points(f, a, b, opts) if gates is None else gates
    ra, rb = f.effective_region(a), f.effective_region(b)
    if not interface_overlaps(f, a, b, opts):
        bca, bcb = boundary_classification(f, a), boundary_classification(f, b)
        best = math.inf
        for i in bca.outgoing:
            ea = ra.boundary_edges[i]
            for j in bcb.incoming:
                eb = rb.boundary_edges[j]
                best = min(best, segment_segment_distance(ea.a, ea.b, eb.a, eb.b))
        return best
    pieces = ([(e.a, e.b) for e in ra.boundary_edges]
              + [(e.a, e.b) for e in rb.boundary_edges])
    cx = BoundaryComplex(pieces, [g.point for g in gates], lam)
    return cx.min_component_separation()


def region_separation(f: PatchyField, alpha: int, lam: float,
                      opts: SolverOptions = DEFAULT_OPTS,
                      vts: Optional[Sequence[VertexTrajectory]] = None) -> float:
    """Separation of one region's boundary punctured at the vertex
    trajectory crossings: least distance from a punctured component to a
    boundary edge it does not touch."""
    region = f.effective_region(alpha)
    vts = vertex_trajectories(f, alpha, opts) if vts is None else vts
    centers = [vt.gamma.eval(t) for vt in vts for t in vt.crossing_times]
    pieces = [(e.a, e.b) for e in region.boundary_edges]
    sub = []
    origin = []
    for eid, (a, b) in enumerate(pieces):
        parts = [(np.asarray(a, float), np.asarray(b, float))]
        for c in centers:
            parts = [q for seg in parts for q in _cut_ball(seg, c, lam)]
        sub.extend(parts)
        origin.extend([eid] * len(parts))
    n = len(sub)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if segment_segment_distance(*sub[i], *sub[j]) <= 1e-9:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    comp_edges: dict[int, set] = {}
    comp_items: dict[int, list] = {}
    for i in range(n):
        c = find(i)
        comp_edges.setdefault(c, set()).add(origin[i])
        comp_items.setdefault(c, []).append(i)
    best = math.inf
    for c, items in comp_items.items():
        for eid, (a, b) in enumerate(pieces):
            if eid in comp_edges[c]:
                continue
            for i in items:
                best = min(best, segment_segment_distance(sub[i][0], sub[i][1], a, b))
    return best


# -- fitted constants ---------------------------------------------------------

@dataclass
class FittedConstants:
    """Numerical surrogates for the existential constants of the stability
    estimates, measured on the scenario at hand."""

    n_patches: int
    sup_speed: float              # M
    lip_flow: float               # c0: flow-map modulus over the horizon scale
    min_edge_margin: float        # c6: least |<g, n>| on region boundaries
    exit_time_lip: float          # c1 and c12: exit-time modulus
    backward_track: float         # c2
    gate_ball_factor: float       # c3: rho_pair(c3 d) > 2 d on the fitted range
    gate_delta: float             # delta3
    tube_ball_factor: float       # c14
    tube_delta: float             # delta9
    tube_lambda_max: float        # largest lambda with disjoint tubes
    tube_spread: float            # c13
    horizon: float
    delta_scenario: float = 0.0
    budget: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        m, n = self.sup_speed, self.n_patches
        replace = self.lip_flow * self.tube_spread * self.tube_ball_factor \
            * (1.0 + 8.0 * self.exit_time_lip)
        ccs = 4.0 * n * (1.0 + 4.0 * replace * (1.0 + m))
        glue = 2.0 * (m + self.lip_flow) * (1.0 + self.backward_track) \
            * (1.0 + self.gate_ball_factor)
        c4 = max(m, 1.0)
        loop = 3.0 * c4 * (1.0 + 2.0 * glue)
        self.budget = {
            "monotonize": 1.0 + n * (1.0 + 4.0 * m * (1.0 + self.lip_flow)
                                     / max(self.min_edge_margin, 1e-9)),
            "to_piecewise": 4.0 * (1.0 + self.lip_flow) ** 2
            * (1.0 + 2.0 * m * self.exit_time_lip) ** (n + 1),
            "replace_in_domain": replace,
            "build_ccs": ccs,
            "glue": glue,
            "loop": loop,
            "total": n * (1.0 + 2.0 * loop) ** n,
        }


def _estimate_lip_flow(f: PatchyField, horizon: float) -> float:
    lmax = 0.0
    for patch in f.patches:
        vs = patch.domain.vertices
        xs = np.linspace(vs[:, 0].min(), vs[:, 0].max(), 8)
        ys = np.linspace(vs[:, 1].min(), vs[:, 1].max(), 8)
        for x in xs:
            for y in ys:
                if not patch.domain.contains((x, y), 1e-9):
                    continue
                if hasattr(patch.field, "jacobian"):
                    j = patch.field.jacobian((x, y))
                else:
                    eps = 1e-6
                    g0 = np.asarray(patch.field((x, y)), float)
                    jx = (np.asarray(patch.field((x + eps, y)), float) - g0) / eps
                    jy = (np.asarray(patch.field((x, y + eps)), float) - g0) / eps
                    j = np.column_stack([jx, jy])
                lmax = max(lmax, float(np.linalg.norm(j, 2)))
    return (1.0 + lmax) * math.exp(min(lmax * horizon, 30.0))


def _estimate_sup_speed(f: PatchyField) -> float:
    m = 0.0
    for patch in f.patches:
        vs = patch.domain.vertices
        xs = np.linspace(vs[:, 0].min(), vs[:, 0].max(), 12)
        ys = np.linspace(vs[:, 1].min(), vs[:, 1].max(), 12)
        for x in xs:
            for y in ys:
                if patch.domain.contains((x, y), 1e-9):
                    m = max(m, float(np.hypot(*patch.g((x, y)))))
    return m


def _estimate_exit_time_lip(f: PatchyField, opts: SolverOptions) -> float:
    worst = 1.0
    for patch in f.patches:
        alpha = patch.index
        try:
            bc = boundary_classification(f, alpha)
        except Exception:
            continue
        region = f.effective_region(alpha)
        for i in bc.incoming:
            e = region.boundary_edges[i]
            pairs = []
            for s in (0.3, 0.5, 0.7):
                p = e.point_at(s)
                try:
                    pairs.append((p, exit_time(f, alpha, p, Direction.FORWARD, opts)))
                except HorizonExceeded:
                    continue
            for (pa, ta), (pb, tb) in zip(pairs, pairs[1:]):
                dd = math.hypot(pa[0] - pb[0], pa[1] - pb[1])
                if dd > 1e-9:
                    worst = max(worst, abs(ta - tb) / dd)
    return 1.5 * worst + 1.0


def _fit_ball_factor(sep_fn, lam_grid) -> tuple:
    """Smallest factor c with sep(c*d) > 2*d over a delta range, plus the
    largest admissible delta."""
    slopes = []
    for lam in lam_grid:
        s = sep_fn(lam)
        if math.isfinite(s) and lam > 0:
            slopes.append(s / lam)
    if not slopes:
        return 2.0, lam_grid[-1] / 4.0
    slope = min(slopes)
    if slope <= 0:
        return 2.0, 0.0
    c = max(2.0, 2.4 / slope)
    delta = lam_grid[-1] / c
    return c, delta


def calibrate(f: PatchyField, horizon: float = 2.0,
              opts: SolverOptions = DEFAULT_OPTS) -> FittedConstants:
    """Measure the scenario constants once per field. Cached on the field."""
    cached = getattr(f, "_fitted_constants", None)
    if cached is not None and cached.horizon >= horizon:
        return cached
    m = _estimate_sup_speed(f)
    c0 = _estimate_lip_flow(f, horizon)
    c6 = math.inf
    for patch in f.patches:
        bc = boundary_classification(f, patch.index)
        c6 = min(c6, bc.min_margin)
    c1 = _estimate_exit_time_lip(f, opts)
    c2 = c0 * (1.0 + c1)
    all_vts = {p.index: vertex_trajectories(f, p.index, opts) for p in f.patches}
    diam = 0.0
    for p in f.patches:
        vs = p.domain.vertices
        diam = max(diam, float(vs[:, 0].max() - vs[:, 0].min()),
                   float(vs[:, 1].max() - vs[:, 1].min()))
    lam_grid = np.array([0.02, 0.05, 0.1, 0.2]) * max(diam, 1.0) / 2.0

    pair_sep_min = math.inf
    c3 = 2.0
    idxs = f.indices
    for ia, a in enumerate(idxs):
        for b in idxs[ia + 1:]:
            if not interface_overlaps(f, a, b, opts):
                continue

            def sep(lam, a=a, b=b):
                return pair_separation(f, a, b, lam, opts)
            c3_ab, d3_ab = _fit_ball_factor(sep, lam_grid)
            pair_sep_min = min(pair_sep_min, d3_ab)
            c3 = max(c3, c3_ab)
    delta3 = pair_sep_min if math.isfinite(pair_sep_min) else lam_grid[-1]

    c14, delta9 = 2.0, math.inf
    spread_factor = 1.0
    lam_max = math.inf
    for p in f.patches:
        vts = all_vts[p.index]
        if not vts:
            continue

        def sep_r(lam, alpha=p.index, vts=vts):
            return region_separation(f, alpha, lam, opts, vts)
        c14_a, d9_a = _fit_ball_factor(sep_r, lam_grid)
        c14 = max(c14, c14_a)
        delta9 = min(delta9, d9_a)
        lam_ok = 0.0
        for lam in lam_grid:
            tubes = build_tubes(f, p.index, lam, opts, vts)
            spread_factor = max(spread_factor,
                                max(t.spread / lam for t in tubes))
            if tubes_disjoint(tubes):
                lam_ok = lam
            else:
                break
        lam_max = min(lam_max, lam_ok if lam_ok > 0 else lam_grid[0])
    if not math.isfinite(delta9):
        delta9 = lam_grid[-1]
    if not math.isfinite(lam_max):
        lam_max = lam_grid[-1]
    delta9 = min(delta9, lam_max / c14)

    consts = FittedConstants(
        n_patches=len(f.patches),
        sup_speed=m,
        lip_flow=c0,
        min_edge_margin=c6 if math.isfinite(c6) else 0.0,
        exit_time_lip=c1,
        backward_track=c2,
        gate_ball_factor=c3,
        gate_delta=float(delta3),
        tube_ball_factor=c14,
        tube_delta=float(delta9),
        tube_lambda_max=float(lam_max),
        tube_spread=float(spread_factor),
        horizon=horizon,
    )
    consts.delta_scenario = 0.5 * min(consts.gate_delta, consts.tube_delta)
    f._fitted_constants = consts
    return consts
