import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patchyflow.errors import InvalidBoundaryPoint
from patchyflow.geometry import (ClipMode, OrientedLine, PointClass, Polygon,
                                 classify_point, clip_segment,
                                 segment_segment_distance, signed_distance,
                                 tangent_cone_interior_contains)

UNIT_SQUARE = Polygon([(0, 0), (1, 0), (1, 1), (0, 1)])


def region_of(poly):
    from patchyflow.field import Patch, PatchyField, SmoothFieldSpec
    f = PatchyField([Patch(1, poly, SmoothFieldSpec([1.0, 0.0]),
                           frozenset(range(poly.num_edges)))])
    return f.effective_region(1)


# -- classify_point -------------------------------------------------------

def test_classify_interior():
    r = region_of(UNIT_SQUARE)
    assert classify_point(r, (0.5, 0.5), 1e-9).kind is PointClass.INTERIOR


def test_classify_boundary_names_edge():
    r = region_of(UNIT_SQUARE)
    c = classify_point(r, (0.5, 0.0), 1e-9)
    assert c.kind is PointClass.BOUNDARY
    assert any(np.allclose(r.boundary_edges[i].a, (0, 0))
               or np.allclose(r.boundary_edges[i].b, (0, 0))
               for i in c.edge_ids)


def test_classify_exterior():
    r = region_of(UNIT_SQUARE)
    assert classify_point(r, (2.0, 2.0), 1e-9).kind is PointClass.EXTERIOR


def test_classify_rejects_bad_tol():
    r = region_of(UNIT_SQUARE)
    with pytest.raises(ValueError):
        classify_point(r, (0.5, 0.5), 0.0)


def test_montecarlo_area_agreement():
    rng = np.random.default_rng(42)
    for _ in range(3):
        pts = rng.uniform(0, 4, size=(10, 2))
        hull = _convex_hull(pts)
        poly = Polygon(hull)
        x0, x1 = hull[:, 0].min(), hull[:, 0].max()
        y0, y1 = hull[:, 1].min(), hull[:, 1].max()
        samples = rng.uniform([x0, y0], [x1, y1], size=(1_000_000, 2))
        frac = poly.contains_many(samples).mean()
        mc_area = frac * (x1 - x0) * (y1 - y0)
        assert abs(mc_area - poly.area) <= 0.01 * poly.area


def _convex_hull(pts):
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(points):
        out = []
        for p in points:
            while len(out) >= 2 and np.cross(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out
    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


# -- signed_distance ------------------------------------------------------

def test_signed_distance_trivial():
    line = OrientedLine((0, 0), (0, 1))
    assert signed_distance(line, (3, 0.7)) == pytest.approx(0.7, abs=1e-15)
    assert signed_distance(line, (3, -0.7)) == pytest.approx(-0.7, abs=1e-15)


def test_signed_distance_diagonal_line():
    # oracle first: minimum distance over dense samples of the line through
    # (0, 1) with direction (1, -1)/sqrt(2), sign taken from the normal side
    n = np.array([1.0, 1.0]) / math.sqrt(2.0)
    anchor = np.array([0.0, 1.0])
    direction = np.array([1.0, -1.0]) / math.sqrt(2.0)
    p = np.array([1.0, 1.0])
    ss = np.linspace(-10, 10, 2_000_001)
    pts = anchor[None, :] + ss[:, None] * direction[None, :]
    d_min = float(np.hypot(pts[:, 0] - p[0], pts[:, 1] - p[1]).min())
    side = math.copysign(1.0, float(np.dot(p - anchor, n)))
    expected = side * d_min
    assert expected == pytest.approx(math.sqrt(2) / 2, abs=1e-9)
    line = OrientedLine(anchor, n)
    assert signed_distance(line, p) == pytest.approx(expected, abs=1e-9)
    assert signed_distance(line, p) == pytest.approx(0.7071067811865476, abs=1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=100, deadline=None)
def test_signed_distance_is_1_lipschitz(ax, ay, bx, by):
    line = OrientedLine((0.3, -0.2), np.array([0.6, 0.8]))
    da = signed_distance(line, (ax, ay))
    db = signed_distance(line, (bx, by))
    assert abs(da - db) <= math.hypot(ax - bx, ay - by) + 1e-12


# -- tangent cone ---------------------------------------------------------

def test_cone_regular_point_inward():
    assert tangent_cone_interior_contains(UNIT_SQUARE, (0.5, 0), (0, 1))


def test_cone_regular_point_tangent_excluded():
    assert not tangent_cone_interior_contains(UNIT_SQUARE, (0.5, 0), (1, 0))


def test_cone_vertex_open_quadrant():
    assert tangent_cone_interior_contains(UNIT_SQUARE, (0, 0), (1, 1))
    assert not tangent_cone_interior_contains(UNIT_SQUARE, (0, 0), (1, 0))


def test_cone_rejects_off_boundary_point():
    with pytest.raises(InvalidBoundaryPoint):
        tangent_cone_interior_contains(UNIT_SQUARE, (0.5, 0.5), (1, 0))


def test_cone_reflex_vertex_of_nonconvex_polygon():
    # L-shape: vertex (1, 1) is reflex; directions into either arm belong
    # to the open cone, the outward diagonal does not
    ell = Polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])
    assert tangent_cone_interior_contains(ell, (1, 1), (-1, -1))
    assert tangent_cone_interior_contains(ell, (1, 1), (1, -0.5))
    assert tangent_cone_interior_contains(ell, (1, 1), (-0.5, 1))
    assert not tangent_cone_interior_contains(ell, (1, 1), (1, 1))


@pytest.mark.parametrize("poly", [
    UNIT_SQUARE,
    Polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]),
])
def test_cone_membership_implies_interior_probes(poly):
    rng = np.random.default_rng(3)
    n = len(poly.vertices)
    probe_pts = list(poly.vertices)
    for i in range(poly.num_edges):
        a, b, _ = poly.edge(i)
        probe_pts.append(a + 0.37 * (b - a))
    for p in probe_pts:
        for _ in range(12):
            v = rng.normal(size=2)
            v /= np.hypot(*v)
            try:
                inside_cone = tangent_cone_interior_contains(poly, p, v)
            except InvalidBoundaryPoint:
                continue
            if inside_cone:
                for eps in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]:
                    q = p + eps * v
                    assert poly.contains_strict(q[0], q[1]), \
                        f"probe {q} left the polygon from {p} along {v}"


# -- clip_segment ---------------------------------------------------------

def test_clip_inside_trivial():
    got = clip_segment(((-1, 0.5), (2, 0.5)), UNIT_SQUARE, ClipMode.INSIDE)
    assert len(got) == 1
    np.testing.assert_allclose(got[0][0], (0, 0.5), atol=1e-9)
    np.testing.assert_allclose(got[0][1], (1, 0.5), atol=1e-9)


def test_clip_outside_trivial():
    got = clip_segment(((-1, 0.5), (2, 0.5)), UNIT_SQUARE, ClipMode.OUTSIDE)
    assert len(got) == 2
    np.testing.assert_allclose(got[0][0], (-1, 0.5), atol=1e-9)
    np.testing.assert_allclose(got[0][1], (0, 0.5), atol=1e-9)
    np.testing.assert_allclose(got[1][0], (1, 0.5), atol=1e-9)
    np.testing.assert_allclose(got[1][1], (2, 0.5), atol=1e-9)


def test_clip_fully_inside_has_no_outside_part():
    assert clip_segment(((0.2, 0.5), (0.8, 0.5)), UNIT_SQUARE,
                        ClipMode.OUTSIDE) == []


@given(st.floats(-2, 3), st.floats(-2, 3), st.floats(-2, 3), st.floats(-2, 3))
@settings(max_examples=150, deadline=None)
def test_clip_partition_preserves_length(x0, y0, x1, y1):
    seg = ((x0, y0), (x1, y1))
    total = math.hypot(x1 - x0, y1 - y0)
    inside = clip_segment(seg, UNIT_SQUARE, ClipMode.INSIDE)
    outside = clip_segment(seg, UNIT_SQUARE, ClipMode.OUTSIDE)
    got = sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in inside + outside)
    assert got == pytest.approx(total, abs=1e-8)


def test_segment_segment_distance():
    assert segment_segment_distance((0, 0), (1, 0), (0, 1), (1, 1)) == pytest.approx(1.0)
    assert segment_segment_distance((0, 0), (1, 1), (1, 0), (0, 1)) == 0.0
