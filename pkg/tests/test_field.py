import numpy as np
import pytest

from patchyflow.errors import OutsideDomain
from patchyflow.field import (Patch, PatchyField, SmoothFieldSpec,
                              validate_inward, validate_nonzero,
                              validate_transversal)
from patchyflow.geometry import PointClass, Polygon


# -- evaluation -----------------------------------------------------------

def test_alpha_star_examples(axis_field):
    assert axis_field.alpha_star((0.5, 0.5)) == 1
    assert axis_field.alpha_star((1.5, 0.5)) == 2
    with pytest.raises(OutsideDomain):
        axis_field.alpha_star((5, 5))


def test_eval_examples(axis_field):
    np.testing.assert_allclose(axis_field.eval((0.5, 0.5)), (1, 0))
    np.testing.assert_allclose(axis_field.eval((1.5, 0.5)), (0, 1))


def test_eval_affine_single_patch():
    patch = Patch(1, Polygon([(-1, -1), (1, -1), (1, 1), (-1, 1)]),
                  SmoothFieldSpec([1.0, 0.0], [[1, 0], [0, 1]]),
                  frozenset({0, 1, 2, 3}))
    f = PatchyField([patch])
    np.testing.assert_allclose(f.eval((0.25, 0.25)), (1.25, 0.25))


def test_eval_matches_active_patch_everywhere(demo_field):
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = rng.uniform([0, -0.4], [2.9, 2.4])
        try:
            a = demo_field.alpha_star(p)
        except OutsideDomain:
            continue
        np.testing.assert_allclose(demo_field.eval(p),
                                   demo_field.patch(a).g(p))


def test_quadratic_field_evaluation():
    q = np.zeros((2, 2, 2))
    q[0, 0, 0] = 1.0   # g_x += x^2
    q[1, 0, 1] = 0.25  # with the symmetric mirror: g_y += 0.5 * x * y
    q[1, 1, 0] = 0.25
    spec = SmoothFieldSpec([0.0, 0.0], quadratic=q)
    np.testing.assert_allclose(spec((2.0, 3.0)), (4.0, 3.0))
    np.testing.assert_allclose(spec.jacobian((2.0, 3.0)),
                               [[4.0, 0.0], [1.5, 1.0]])


# -- effective regions ----------------------------------------------------

def test_effective_region_top_patch_is_whole_domain(axis_field):
    r2 = axis_field.effective_region(2)
    assert not r2.holes or all(
        h.area <= 4.0 + 1e-9 for h in r2.holes)  # no higher patches cut it
    assert r2.classify((2.0, 1.0)).kind is PointClass.INTERIOR


def test_effective_region_set_difference_grid(axis_field):
    # brute-force membership oracle on a 200 x 200 grid over the plane
    r1 = axis_field.effective_region(1)
    o1 = axis_field.patch(1).domain
    o2 = axis_field.patch(2).domain
    xs = np.linspace(-0.2, 3.2, 200)
    ys = np.linspace(-0.2, 2.2, 200)
    for x in xs[::7]:
        for y in ys[::7]:
            c = r1.classify((x, y), 1e-9)
            in1 = o1.contains_strict(x, y) and o1.boundary_distance(x, y) > 1e-7
            in2 = o2.contains_strict(x, y) and o2.boundary_distance(x, y) > 1e-7
            expected_interior = in1 and not in2
            if c.kind is PointClass.BOUNDARY:
                continue
            assert (c.kind is PointClass.INTERIOR) == expected_interior, (x, y)


def test_single_patch_region_is_domain():
    poly = Polygon([(0, 0), (1, 0), (1, 1), (0, 1)])
    f = PatchyField([Patch(1, poly, SmoothFieldSpec([1.0, 0.0]),
                           frozenset({0, 1, 2, 3}))])
    r = f.effective_region(1)
    assert len(r.boundary_edges) == 4
    assert r.classify((0.5, 0.5)).kind is PointClass.INTERIOR


def test_region_membership_random_points(demo_field):
    rng = np.random.default_rng(1)
    o1 = demo_field.patch(1).domain
    o2 = demo_field.patch(2).domain
    pts = rng.uniform([-0.5, -1.0], [3.5, 3.0], size=(10_000, 2))
    got = np.array([demo_field.region_contains(1, p) for p in pts])
    in1 = o1.contains_many(pts, 1e-9)
    in2_strict = np.array([o2.contains_strict(x, y)
                           and o2.boundary_distance(x, y) > 1e-9
                           for x, y in pts])
    expected = in1 & ~in2_strict
    assert (got == expected).mean() > 0.999


def test_distinct_indices_required():
    poly = Polygon([(0, 0), (1, 0), (1, 1), (0, 1)])
    with pytest.raises(ValueError):
        PatchyField([Patch(1, poly, SmoothFieldSpec([1, 0])),
                     Patch(1, poly, SmoothFieldSpec([0, 1]))])


# -- validators -----------------------------------------------------------

def square_patch(field, exempt=()):
    return Patch(1, Polygon([(0, 0), (1, 0), (1, 1), (0, 1)]), field,
                 frozenset(exempt))


def test_inward_fails_on_outflow_edge():
    f = PatchyField([square_patch(SmoothFieldSpec([0.0, 1.0]))])
    rep = validate_inward(f)
    assert not rep.passed
    # the top edge (edge 2) is outward, the bottom edge points in
    tops = [v for v in rep.violations if abs(v.location[1] - 1.0) < 1e-9]
    bottoms = [v for v in rep.violations
               if abs(v.location[1]) < 1e-9 and 0 < v.location[0] < 1]
    assert tops and not bottoms


def test_inward_accepts_contraction():
    # <g, n_out> = -0.5 on every edge of the unit square, verified by hand:
    # g = c - x and each edge midlines at distance 1/2 from the center
    f = PatchyField([square_patch(SmoothFieldSpec(
        [0.5, 0.5], [[-1, 0], [0, -1]]))])
    rep = validate_inward(f)
    assert rep.passed


def test_inward_tangent_edge_fails_with_zero_margin():
    f = PatchyField([square_patch(SmoothFieldSpec([1.0, 0.0]), exempt={1})])
    rep = validate_inward(f)
    assert not rep.passed
    assert min(abs(v.margin) for v in rep.violations) == pytest.approx(0.0, abs=1e-12)


def test_inward_respects_exempt_edges(demo_field):
    assert validate_inward(demo_field).passed


def test_transversal_demo_passes(demo_field):
    rep = validate_transversal(demo_field)
    assert rep.passed
    assert rep.details["min_margin"] >= 0.25 - 1e-9


def test_transversal_parallel_field_fails():
    p1 = Patch(1, Polygon([(0, 0), (2, 0), (2, 2), (0, 2)]),
               SmoothFieldSpec([0.0, 1.0]), frozenset({1, 2, 3}))
    p2 = Patch(2, Polygon([(1, -0.5), (3, -0.5), (3, 2.5), (1, 2.5)]),
               SmoothFieldSpec([0.25, 1.0]), frozenset({1, 2}))
    rep = validate_transversal(PatchyField([p1, p2]))
    assert not rep.passed
    assert min(abs(v.margin) for v in rep.violations) == pytest.approx(0.0, abs=1e-9)


def test_transversal_vacuous_when_no_intersection():
    p1 = Patch(1, Polygon([(0, 0), (1, 0), (1, 1), (0, 1)]),
               SmoothFieldSpec([0.0, 1.0]), frozenset({0, 1, 2, 3}))
    p2 = Patch(2, Polygon([(5, 10), (6, 10), (6, 11), (5, 11)]),
               SmoothFieldSpec([0.25, 1.0]), frozenset({0, 1, 2, 3}))
    assert validate_transversal(PatchyField([p1, p2])).passed


def test_nonzero_constant_passes():
    f = PatchyField([square_patch(SmoothFieldSpec([1.0, 0.0]),
                                  exempt={0, 1, 2, 3})])
    rep = validate_nonzero(f, 0.5)
    assert rep.passed
    assert rep.details["min_norm"] == pytest.approx(1.0)


def test_nonzero_interior_zero_fails():
    f = PatchyField([square_patch(SmoothFieldSpec(
        [0.5, 0.5], [[-1, 0], [0, -1]]))])
    rep = validate_nonzero(f, 0.01)
    assert not rep.passed
    np.testing.assert_allclose(rep.violations[0].location, (0.5, 0.5), atol=1e-6)


def test_nonzero_rejects_nonpositive_bound():
    f = PatchyField([square_patch(SmoothFieldSpec([1.0, 0.0]),
                                  exempt={0, 1, 2, 3})])
    with pytest.raises(ValueError):
        validate_nonzero(f, 0.0)
