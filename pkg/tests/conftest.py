import numpy as np
import pytest

from patchyflow.field import Patch, PatchyField, SmoothFieldSpec
from patchyflow.geometry import Polygon

SCENARIO_DIR = "scenarios"


def make_demo_field() -> PatchyField:
    """Two overlapping rectangles with tilted constant fields; the generic
    demo used throughout: transversal crossings, definite edge signs."""
    p1 = Patch(1, Polygon([(0, 0), (2, 0), (2, 2), (0, 2)]),
               SmoothFieldSpec([1.0, 0.25]), frozenset({1, 2}))
    p2 = Patch(2, Polygon([(1, -0.5), (3, -0.5), (3, 2.5), (1, 2.5)]),
               SmoothFieldSpec([0.25, 1.0]), frozenset({1, 2}))
    return PatchyField([p1, p2])


def make_axis_field() -> PatchyField:
    """Axis-aligned two-patch family for membership/evaluation examples
    (tangential along the shared edge, so not used for integration)."""
    p1 = Patch(1, Polygon([(0, 0), (2, 0), (2, 2), (0, 2)]),
               SmoothFieldSpec([1.0, 0.0]), frozenset({0, 1, 2}))
    p2 = Patch(2, Polygon([(1, 0), (3, 0), (3, 2), (1, 2)]),
               SmoothFieldSpec([0.0, 1.0]), frozenset({0, 1, 2, 3}))
    return PatchyField([p1, p2])


def make_hole_field() -> PatchyField:
    """A large patch with a small higher patch inside: the lower effective
    region has a hole and grazing vertex chords."""
    big = Patch(1, Polygon([(0, 0), (4, 0), (4, 4), (0, 4)]),
                SmoothFieldSpec([1.0, 0.3]), frozenset({1, 2}))
    hole = Patch(2, Polygon([(1.5, 1.5), (2.5, 1.5), (2.5, 2.5), (1.5, 2.5)]),
                 SmoothFieldSpec([0.3, 1.0]), frozenset({1, 2}))
    return PatchyField([big, hole])


def make_gate_field() -> PatchyField:
    """Two abutting rectangles whose interface corner lies on a vertex
    trajectory of the higher region; exercises gate rerouting."""
    q1 = Patch(1, Polygon([(0, 0), (4, 0), (4, 4), (0, 4)]),
               SmoothFieldSpec([1.0, 0.3]), frozenset({1, 2}))
    q2 = Patch(2, Polygon([(2.8, 0), (7, 0), (7, 4), (2.8, 4)]),
               SmoothFieldSpec([1.0, -0.3]), frozenset({0, 1}))
    return PatchyField([q1, q2])


@pytest.fixture(scope="session")
def demo_field():
    return make_demo_field()


@pytest.fixture(scope="session")
def axis_field():
    return make_axis_field()


@pytest.fixture(scope="session")
def hole_field():
    return make_hole_field()


@pytest.fixture(scope="session")
def gate_field():
    return make_gate_field()


def demo_oracle_path(x0, tv=0.0, t_jump=None):
    """Closed-form path of the tilted demo: velocity (1, 0.25) until x = 1,
    then (0.25, 1), with an optional vertical jump of size tv at t_jump."""
    x0 = np.asarray(x0, dtype=float)

    def path(t):
        p = x0.copy()
        if t_jump is not None and t >= t_jump:
            p = p + np.array([0.0, tv])
        t_switch = 1.0 - x0[0]
        if t <= t_switch:
            return p + t * np.array([1.0, 0.25])
        q = p + t_switch * np.array([1.0, 0.25])
        return q + (t - t_switch) * np.array([0.25, 1.0])
    return path
