import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patchyflow.perturbation import (BVPath, InnerOuterPerturbation, Jump,
                                     from_inner_outer, total_variation)


def test_tv_single_jump():
    assert total_variation(BVPath([Jump(0.5, (0.0, 0.2))])) == pytest.approx(0.2)


def test_tv_zero_path():
    assert total_variation(BVPath()) == 0.0


def test_tv_jumps_plus_drift():
    w = BVPath([Jump(0.2, (0.1, 0.0)), Jump(0.9, (0.0, 0.1))],
               [0.0, 2.0], [[0.05, 0.0]])
    assert total_variation(w) == pytest.approx(0.1 + 0.1 + 0.05 * 2.0)


def test_left_continuity_convention():
    w = BVPath([Jump(1.0, (0.5, 0.0))])
    np.testing.assert_allclose(w.value(1.0), (0.0, 0.0))
    np.testing.assert_allclose(w.value_right(1.0), (0.5, 0.0))
    np.testing.assert_allclose(w.value(1.0 + 1e-12), (0.5, 0.0))


def test_jump_times_strictly_increasing():
    with pytest.raises(ValueError):
        BVPath([Jump(0.5, (1, 0)), Jump(0.5, (0, 1))])


def test_from_inner_outer_step():
    p = InnerOuterPerturbation(e1_jumps=[Jump(1.0, (0.1, 0.0))])
    w = from_inner_outer(p)
    assert len(w.jumps) == 1
    assert total_variation(w) == pytest.approx(0.1)


def test_from_inner_outer_pure_drift():
    p = InnerOuterPerturbation(e2_rate_times=[0.0, 1.0], e2_rates=[[0.2, 0.0]])
    w = from_inner_outer(p)
    assert not w.jumps
    assert total_variation(w) == pytest.approx(0.2)
    np.testing.assert_allclose(w.value(1.0), (0.2, 0.0))


def test_from_inner_outer_ramp_cancellation():
    # oracle: quadrature of |e1_rate + e2| over the union grid
    times = [0.0, 1.0]
    e1r = np.array([[0.1, 0.0]])
    e2r = np.array([[-0.1, 0.0]])
    mids = 0.5 * (np.array(times[:-1]) + np.array(times[1:]))
    quad = sum(np.hypot(*(e1r[k] + e2r[k])) * (times[k + 1] - times[k])
               for k in range(len(mids)))
    assert quad == pytest.approx(0.0, abs=1e-10)
    p = InnerOuterPerturbation(e1_rate_times=times, e1_rates=e1r,
                               e2_rate_times=times, e2_rates=e2r)
    w = from_inner_outer(p)
    assert total_variation(w) == pytest.approx(quad, abs=1e-10)


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=6, unique=True))
@settings(max_examples=60, deadline=None)
def test_tv_invariant_under_drift_refinement(extra):
    w = BVPath([Jump(0.3, (0.02, -0.01))], [0.0, 0.4, 1.0],
               [[0.1, 0.05], [-0.02, 0.08]])
    times = sorted({0.0, 0.4, 1.0} | set(extra))
    rates = [w.drift_rate_at(0.5 * (a + b)) for a, b in zip(times, times[1:])]
    refined = BVPath(list(w.jumps), times, rates)
    assert total_variation(refined) == pytest.approx(total_variation(w),
                                                     abs=1e-10)


@given(st.floats(-5, 5))
@settings(max_examples=50, deadline=None)
def test_tv_invariant_under_time_shift(dt):
    w = BVPath([Jump(0.2, (0.1, 0.0)), Jump(0.8, (0.0, -0.3))],
               [0.0, 1.0], [[0.03, 0.04]])
    assert total_variation(w.shifted(dt)) == pytest.approx(total_variation(w))


def test_tv_subadditive_under_concatenation():
    a = BVPath([Jump(0.2, (0.1, 0.0))], [0.0, 1.0], [[0.05, 0.0]])
    b = BVPath([Jump(0.3, (0.0, 0.2))], [0.0, 0.5], [[0.0, 0.1]])
    b2 = b.shifted(1.0)
    merged = BVPath(list(a.jumps) + list(b2.jumps),
                    [0.0, 1.0, 1.5], [[0.05, 0.0], [0.0, 0.1]])
    assert total_variation(merged) <= (total_variation(a)
                                       + total_variation(b) + 1e-12)


def test_scaled_path_scales_tv():
    w = BVPath([Jump(0.2, (0.1, 0.0))], [0.0, 1.0], [[0.0, 0.3]])
    assert total_variation(w.scaled(0.25)) == pytest.approx(
        0.25 * total_variation(w))
