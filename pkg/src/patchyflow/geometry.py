"""Planar primitives: polygons, oriented lines, signed distances, tangent
cones, point classification and segment clipping.

All values are immutable after construction and safe to share across
workers. The single geometric tolerance ``TOL_GEO`` is the snap band used
to decide on-boundary questions; every operation takes an explicit ``tol``
where the contract depends on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import InvalidBoundaryPoint

TOL_GEO = 1e-9

Vec = np.ndarray


def as_point(p) -> Vec:
    q = np.asarray(p, dtype=float)
    if q.shape != (2,):
        raise ValueError(f"expected a planar point, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("point coordinates must be finite")
    return q


def _cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def segment_point_distance(a, b, p) -> float:
    """Euclidean distance from p to the closed segment [a, b]."""
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    px, py = float(p[0]), float(p[1])
    dx, dy = bx - ax, by - ay
    dd = dx * dx + dy * dy
    if dd == 0.0:
        return math.hypot(px - ax, py - ay)
    s = ((px - ax) * dx + (py - ay) * dy) / dd
    s = 0.0 if s < 0.0 else (1.0 if s > 1.0 else s)
    return math.hypot(px - ax - s * dx, py - ay - s * dy)


def segment_segment_distance(a0, a1, b0, b1) -> float:
    """Minimum distance between two closed segments."""
    d1x, d1y = a1[0] - a0[0], a1[1] - a0[1]
    d2x, d2y = b1[0] - b0[0], b1[1] - b0[1]
    den = _cross(d1x, d1y, d2x, d2y)
    if abs(den) > 1e-14:
        s = _cross(b0[0] - a0[0], b0[1] - a0[1], d2x, d2y) / den
        u = _cross(b0[0] - a0[0], b0[1] - a0[1], d1x, d1y) / den
        if 0.0 <= s <= 1.0 and 0.0 <= u <= 1.0:
            return 0.0
    return min(segment_point_distance(b0, b1, a0),
               segment_point_distance(b0, b1, a1),
               segment_point_distance(a0, a1, b0),
               segment_point_distance(a0, a1, b1))


def collinear_overlap(a0, a1, b0, b1, tol: float = TOL_GEO):
    """Overlapping sub-segment of two collinear segments, or None."""
    d1x, d1y = a1[0] - a0[0], a1[1] - a0[1]
    len1 = math.hypot(d1x, d1y)
    if len1 <= tol:
        return None
    ux, uy = d1x / len1, d1y / len1
    # both endpoints of b must sit on the line of a
    for q in (b0, b1):
        if abs(_cross(ux, uy, q[0] - a0[0], q[1] - a0[1])) > 10 * tol:
            return None
    s0 = ((b0[0] - a0[0]) * ux + (b0[1] - a0[1]) * uy)
    s1 = ((b1[0] - a0[0]) * ux + (b1[1] - a0[1]) * uy)
    lo, hi = max(0.0, min(s0, s1)), min(len1, max(s0, s1))
    if hi - lo <= tol:
        return None
    p = np.array([a0[0] + lo * ux, a0[1] + lo * uy])
    q = np.array([a0[0] + hi * ux, a0[1] + hi * uy])
    return p, q


@dataclass(frozen=True)
class OrientedLine:
    """A line through ``anchor`` with a unit normal marking its positive side."""

    anchor: Vec
    normal: Vec

    def __post_init__(self):
        object.__setattr__(self, "anchor", as_point(self.anchor))
        n = as_point(self.normal)
        if abs(float(np.hypot(n[0], n[1])) - 1.0) > 1e-12:
            raise ValueError("normal must be a unit vector")
        object.__setattr__(self, "normal", n)


def signed_distance(line: OrientedLine, p) -> float:
    """Signed distance to the line: positive on the normal side."""
    q = as_point(p)
    return float((q[0] - line.anchor[0]) * line.normal[0]
                 + (q[1] - line.anchor[1]) * line.normal[1])


class Polygon:
    """A simple polygon stored counterclockwise.

    Edges are the pairs (vertices[i], vertices[i+1]); each edge carries an
    inward unit normal. Construction rejects degenerate or self-intersecting
    input and normalizes clockwise input to CCW.
    """

    __slots__ = ("vertices", "_edges", "_bbox")

    def __init__(self, vertices: Sequence):
        vs = np.asarray(vertices, dtype=float)
        if vs.ndim != 2 or vs.shape[1] != 2 or vs.shape[0] < 3:
            raise ValueError("polygon needs at least 3 planar vertices")
        if not np.all(np.isfinite(vs)):
            raise ValueError("polygon vertices must be finite")
        area2 = 0.0
        n = vs.shape[0]
        for i in range(n):
            x1, y1 = vs[i]
            x2, y2 = vs[(i + 1) % n]
            area2 += x1 * y2 - y1 * x2
        if abs(area2) < 1e-14:
            raise ValueError("polygon has zero area")
        if area2 < 0.0:
            vs = vs[::-1].copy()
        self.vertices = vs
        edges = []
        for i in range(n):
            ax, ay = vs[i]
            bx, by = vs[(i + 1) % n]
            ex, ey = bx - ax, by - ay
            length = math.hypot(ex, ey)
            if length < 1e-14:
                raise ValueError("polygon has a zero-length edge")
            # CCW orientation puts the interior on the left of each edge.
            nx, ny = -ey / length, ex / length
            edges.append((ax, ay, bx, by, nx, ny, length))
        self._edges = tuple(edges)
        self._bbox = (float(vs[:, 0].min()), float(vs[:, 0].max()),
                      float(vs[:, 1].min()), float(vs[:, 1].max()))
        self._check_simple()

    def _check_simple(self):
        es = self._edges
        n = len(es)
        for i in range(n):
            ax, ay, bx, by = es[i][:4]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                cx, cy, dx_, dy_ = es[j][:4]
                d1x, d1y = bx - ax, by - ay
                d2x, d2y = dx_ - cx, dy_ - cy
                den = _cross(d1x, d1y, d2x, d2y)
                if abs(den) < 1e-14:
                    continue
                s = _cross(cx - ax, cy - ay, d2x, d2y) / den
                u = _cross(cx - ax, cy - ay, d1x, d1y) / den
                if 1e-12 < s < 1 - 1e-12 and 1e-12 < u < 1 - 1e-12:
                    raise ValueError("polygon is self-intersecting")

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    @property
    def area(self) -> float:
        vs = self.vertices
        nxt = np.roll(vs, -1, axis=0)
        return 0.5 * float(np.sum(vs[:, 0] * nxt[:, 1] - vs[:, 1] * nxt[:, 0]))

    def edge(self, i: int):
        """Edge i as (a, b, inward unit normal)."""
        ax, ay, bx, by, nx, ny, _ = self._edges[i]
        return (np.array([ax, ay]), np.array([bx, by]), np.array([nx, ny]))

    def edge_line(self, i: int, inward: bool = True) -> OrientedLine:
        ax, ay, _, _, nx, ny, _ = self._edges[i]
        sign = 1.0 if inward else -1.0
        return OrientedLine(np.array([ax, ay]), np.array([sign * nx, sign * ny]))

    def contains_strict(self, x: float, y: float) -> bool:
        """Even-odd ray test; points on the boundary are unreliable here and
        must be resolved by the caller through boundary_distance."""
        x0, x1, y0, y1 = self._bbox
        if x < x0 or x > x1 or y < y0 or y > y1:
            return False
        inside = False
        for ax, ay, bx, by, _, _, _ in self._edges:
            if (ay > y) != (by > y):
                xi = ax + (y - ay) * (bx - ax) / (by - ay)
                if x < xi:
                    inside = not inside
        return inside

    def boundary_distance(self, x: float, y: float) -> float:
        best = math.inf
        for ax, ay, bx, by, _, _, length in self._edges:
            dx, dy = bx - ax, by - ay
            s = ((x - ax) * dx + (y - ay) * dy) / (length * length)
            s = 0.0 if s < 0.0 else (1.0 if s > 1.0 else s)
            d = math.hypot(x - ax - s * dx, y - ay - s * dy)
            if d < best:
                best = d
        return best

    def contains(self, p, tol: float = TOL_GEO) -> bool:
        """Closed membership with a snap band of width tol."""
        x, y = float(p[0]), float(p[1])
        x0, x1, y0, y1 = self._bbox
        if x < x0 - tol or x > x1 + tol or y < y0 - tol or y > y1 + tol:
            return False
        if self.contains_strict(x, y):
            return True
        return self.boundary_distance(x, y) <= tol

    def contains_many(self, pts: np.ndarray, tol: float = TOL_GEO) -> np.ndarray:
        """Vectorized closed membership for an (n, 2) array of points."""
        pts = np.asarray(pts, dtype=float)
        x, y = pts[:, 0], pts[:, 1]
        vs = self.vertices
        n = len(vs)
        inside = np.zeros(len(pts), dtype=bool)
        mind = np.full(len(pts), np.inf)
        for i in range(n):
            ax, ay = vs[i]
            bx, by = vs[(i + 1) % n]
            cond = (ay > y) != (by > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = ax + (y - ay) * (bx - ax) / (by - ay)
            inside ^= cond & (x < xi)
            dx, dy = bx - ax, by - ay
            dd = dx * dx + dy * dy
            s = np.clip(((x - ax) * dx + (y - ay) * dy) / dd, 0.0, 1.0)
            d = np.hypot(x - ax - s * dx, y - ay - s * dy)
            np.minimum(mind, d, out=mind)
        return inside | (mind <= tol)

    def on_boundary(self, p, tol: float = TOL_GEO) -> bool:
        return self.boundary_distance(float(p[0]), float(p[1])) <= tol

    def nearest_edges(self, p, tol: float = TOL_GEO):
        """Indices of edges within tol of p."""
        x, y = float(p[0]), float(p[1])
        out = []
        for i, (ax, ay, bx, by, _, _, length) in enumerate(self._edges):
            dx, dy = bx - ax, by - ay
            s = ((x - ax) * dx + (y - ay) * dy) / (length * length)
            s = 0.0 if s < 0.0 else (1.0 if s > 1.0 else s)
            if math.hypot(x - ax - s * dx, y - ay - s * dy) <= tol:
                out.append(i)
        return out

    def __repr__(self):
        return f"Polygon({self.vertices.tolist()})"


def tangent_cone_interior_contains(poly: Polygon, p, v, tol: float = TOL_GEO) -> bool:
    """Whether v lies in the open tangent cone of the polygon at boundary
    point p.

    At a regular edge point the test is a strict inward inner product; at a
    vertex the direction must fall strictly inside the open angular sector
    of the interior, which handles convex and reflex corners uniformly.
    """
    q = as_point(p)
    w = as_point(v)
    if math.hypot(w[0], w[1]) == 0.0:
        raise ValueError("direction must be nonzero")
    vs = poly.vertices
    n = len(vs)
    for i in range(n):
        if math.hypot(q[0] - vs[i][0], q[1] - vs[i][1]) <= tol:
            prev_v = vs[(i - 1) % n]
            next_v = vs[(i + 1) % n]
            d_out = next_v - vs[i]
            d_in = vs[i] - prev_v
            a = math.atan2(d_out[1], d_out[0])
            b = math.atan2(-d_in[1], -d_in[0])
            width = (b - a) % (2.0 * math.pi)
            theta = (math.atan2(w[1], w[0]) - a) % (2.0 * math.pi)
            return 0.0 < theta < width
    edges = poly.nearest_edges(q, tol)
    if not edges:
        raise InvalidBoundaryPoint(f"point {q.tolist()} is not on the polygon boundary")
    for i in edges:
        _, _, nrm = poly.edge(i)
        if w[0] * nrm[0] + w[1] * nrm[1] <= 0.0:
            return False
    return True


class ClipMode(Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"


def clip_segment(seg, poly: Polygon, mode: ClipMode, tol: float = TOL_GEO):
    """Split a segment against a polygon and keep the inside or outside part.

    Returns a list of (a, b) sub-segments, each of length > tol. The inside
    part uses closed membership, so the two modes partition the segment up
    to the tolerance.
    """
    p0 = as_point(seg[0])
    p1 = as_point(seg[1])
    d1 = p1 - p0
    seg_len = math.hypot(d1[0], d1[1])
    if seg_len <= tol:
        return []
    cuts = [0.0, 1.0]
    for i in range(poly.num_edges):
        a, b, _ = poly.edge(i)
        d2 = b - a
        den = _cross(d1[0], d1[1], d2[0], d2[1])
        if abs(den) < 1e-14 * seg_len:
            continue
        s = _cross(a[0] - p0[0], a[1] - p0[1], d2[0], d2[1]) / den
        u = _cross(a[0] - p0[0], a[1] - p0[1], d1[0], d1[1]) / den
        eps = tol / seg_len
        if -eps <= s <= 1.0 + eps and -eps <= u <= 1.0 + eps:
            cuts.append(min(1.0, max(0.0, s)))
    cuts = sorted(set(cuts))
    want_inside = mode is ClipMode.INSIDE
    pieces = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if (hi - lo) * seg_len <= tol:
            continue
        mid = p0 + 0.5 * (lo + hi) * d1
        if poly.contains(mid, tol) == want_inside:
            a = p0 + lo * d1
            b = p0 + hi * d1
            if pieces and np.allclose(pieces[-1][1], a, atol=tol):
                pieces[-1] = (pieces[-1][0], b)
            else:
                pieces.append((a, b))
    return [(a.copy(), b.copy()) for a, b in pieces
            if math.hypot(b[0] - a[0], b[1] - a[1]) > tol]


class PointClass(Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    EXTERIOR = "exterior"


@dataclass(frozen=True)
class Classification:
    kind: PointClass
    edge_ids: tuple = ()

    @property
    def is_interior(self) -> bool:
        return self.kind is PointClass.INTERIOR

    @property
    def is_boundary(self) -> bool:
        return self.kind is PointClass.BOUNDARY

    @property
    def is_exterior(self) -> bool:
        return self.kind is PointClass.EXTERIOR

    @property
    def in_closure(self) -> bool:
        return self.kind is not PointClass.EXTERIOR


@dataclass(frozen=True)
class BoundaryEdge:
    """One oriented piece of a region boundary.

    ``source_patch`` is the patch index whose polygon contributed the piece;
    ``normal`` points into the region.
    """

    a: Vec
    b: Vec
    normal: Vec
    source_patch: int
    edge_id: int

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])

    @property
    def midpoint(self) -> Vec:
        return 0.5 * (self.a + self.b)

    def line(self) -> OrientedLine:
        return OrientedLine(self.a, self.normal)

    def point_at(self, s: float) -> Vec:
        return self.a + s * (self.b - self.a)


class PolygonalRegion:
    """A polygon minus a family of subtracted polygons.

    ``outer`` is the carrier polygon; ``holes`` are the subtracted ones (they
    may overlap the outer boundary, in which case they cut rather than
    puncture). ``boundary_edges`` is the tagged partition of the topological
    boundary. Membership is the set difference: inside the carrier and not
    strictly inside any subtracted polygon.
    """

    __slots__ = ("outer", "holes", "boundary_edges", "_vertices")

    def __init__(self, outer: Polygon, holes: Sequence[Polygon],
                 boundary_edges: Sequence[BoundaryEdge]):
        self.outer = outer
        self.holes = tuple(holes)
        self.boundary_edges = tuple(boundary_edges)
        self._vertices = None

    def classify(self, p, tol: float = TOL_GEO) -> Classification:
        q = as_point(p)
        ids = tuple(i for i, e in enumerate(self.boundary_edges)
                    if segment_point_distance(e.a, e.b, q) <= tol)
        if ids:
            return Classification(PointClass.BOUNDARY, ids)
        x, y = float(q[0]), float(q[1])
        if not self.outer.contains_strict(x, y):
            return Classification(PointClass.EXTERIOR)
        for h in self.holes:
            if h.contains_strict(x, y):
                return Classification(PointClass.EXTERIOR)
        return Classification(PointClass.INTERIOR)

    def contains(self, p, tol: float = TOL_GEO) -> bool:
        return self.classify(p, tol).in_closure

    def boundary_distance(self, p) -> float:
        q = as_point(p)
        return min(segment_point_distance(e.a, e.b, q) for e in self.boundary_edges)

    @property
    def vertices(self) -> np.ndarray:
        """Corner points of the region boundary (collinear joins excluded)."""
        if self._vertices is None:
            pts = []
            for e in self.boundary_edges:
                pts.append(e.a)
                pts.append(e.b)
            corners = []
            for p in pts:
                incident = []
                for e in self.boundary_edges:
                    if (math.hypot(e.a[0] - p[0], e.a[1] - p[1]) <= 10 * TOL_GEO
                            or math.hypot(e.b[0] - p[0], e.b[1] - p[1]) <= 10 * TOL_GEO):
                        incident.append(e)
                if len(incident) < 2:
                    corners.append(p)
                    continue
                dirs = []
                for e in incident:
                    d = e.b - e.a
                    d = d / math.hypot(d[0], d[1])
                    dirs.append(d)
                bent = any(abs(_cross(d1[0], d1[1], d2[0], d2[1])) > 1e-9
                           for i, d1 in enumerate(dirs) for d2 in dirs[i + 1:])
                if bent:
                    corners.append(p)
            dedup: list[np.ndarray] = []
            for p in corners:
                if not any(math.hypot(p[0] - q[0], p[1] - q[1]) <= 10 * TOL_GEO
                           for q in dedup):
                    dedup.append(np.asarray(p, dtype=float))
            self._vertices = (np.array(dedup) if dedup else np.zeros((0, 2)))
        return self._vertices


def classify_point(region: PolygonalRegion, p, tol: float = TOL_GEO) -> Classification:
    """Classify p against a region: Boundary within tol of a boundary edge,
    otherwise Interior or Exterior by membership."""
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    return region.classify(p, tol)
