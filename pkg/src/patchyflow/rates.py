"""Empirical stability-rate measurement.

TV sweeps with log-log exponent fits, the exponential baseline for smooth
Lipschitz fields, and the curved-boundary tangential scenario whose rate
degenerates to 1/(alpha*beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BudgetExceeded, ScenarioOutOfRange
from .field import Patch, PatchyField, SmoothFieldSpec
from .geometry import Polygon, segment_point_distance
from .integrate import (DEFAULT_OPTS, SolverOptions, solve_forward,
                        solve_perturbed, sup_distance)
from .perturbation import BVPath
from .shadow import OracleGrid, nearest_solution_oracle, shadow


@dataclass
class RateRow:
    tv: float
    distance: Optional[float]
    method: str
    error: str = ""


@dataclass
class RateTable:
    rows: list
    fitted_exponent: float
    fitted_constant: float
    r_squared: float

    def good_rows(self):
        return [r for r in self.rows if r.distance is not None and r.distance > 0]


def fit_loglog(tvs: Sequence[float], ds: Sequence[float]):
    """Ordinary least squares on log-log data: returns (exponent, constant,
    r_squared)."""
    lx = np.log(np.asarray(tvs, dtype=float))
    ly = np.log(np.asarray(ds, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(math.exp(intercept)), r2


def rate_sweep(f: PatchyField, perturbation_family: Callable[[float], BVPath],
               tv_list: Sequence[float], method: str, x0, t0: float, t1: float,
               opts: SolverOptions = DEFAULT_OPTS,
               oracle_grid: Optional[Callable[[float], OracleGrid]] = None
               ) -> RateTable:
    """Measure distance-to-nearest-solution across a TV sweep and fit the
    log-log exponent.

    ``perturbation_family`` maps a target total variation to a forcing
    path; ``method`` chooses the constructive pipeline or the brute-force
    search. Rows that fail are recorded with their error; the fit needs at
    least three successes.
    """
    tvs = sorted(set(float(t) for t in tv_list), reverse=True)
    if len(tvs) < 4:
        raise ValueError("need at least 4 distinct TV values")
    if tvs[0] / tvs[-1] < 99.0:
        raise ValueError("TV values must span at least two decades")
    if any(t <= 0 for t in tvs):
        raise ValueError("TV values must be positive")
    if method not in ("shadow", "oracle"):
        raise ValueError(f"unknown method {method!r}")
    rows = []
    for tv in tvs:
        w = perturbation_family(tv)
        got = w.total_variation()
        if abs(got - tv) > 1e-9 * max(tv, 1.0):
            rows.append(RateRow(tv, None, method,
                                f"family produced TV {got:.3g}"))
            continue
        try:
            y = solve_perturbed(f, w, x0, t0, t1, opts)
            if method == "shadow":
                d = shadow(f, y, w, opts).sup_distance
            else:
                g = oracle_grid(tv) if oracle_grid is not None else OracleGrid(
                    radius=2 * tv, n=13, coarse_h=max(opts.h, 5e-3))
                d = nearest_solution_oracle(f, y, g, opts).distance
            rows.append(RateRow(tv, float(d), method))
        except Exception as err:  # recorded per row, fit continues
            rows.append(RateRow(tv, None, method, f"{type(err).__name__}: {err}"))
    ok = [(r.tv, r.distance) for r in rows if r.distance is not None and r.distance > 0]
    if len(ok) < 3:
        raise BudgetExceeded(
            f"rate fit needs >= 3 successful rows, got {len(ok)}",
            stage="rate_sweep")
    e, c, r2 = fit_loglog([t for t, _ in ok], [d for _, d in ok])
    return RateTable(rows, e, c, r2)


# -- Lipschitz baseline ---------------------------------------------------------

def lipschitz_bound_check(L: float, field: SmoothFieldSpec, w: BVPath,
                          T: float, x0=(0.0, 0.0),
                          domain: Optional[Polygon] = None,
                          opts: SolverOptions = DEFAULT_OPTS,
                          fit_tolerance: float = 1e-6):
    """Compare the forced/unforced gap of a single smooth field against the
    exponential bound exp(L*T) times the total variation.

    Returns (measured, bound) and raises if the bound fails beyond the fit
    tolerance.
    """
    tv = w.total_variation()
    if domain is None:
        r = (float(np.hypot(*np.asarray(x0, float))) + tv + 1.0) \
            * math.exp(L * T) + 1.0
        domain = Polygon([(-r, -r), (r, -r), (r, r), (-r, r)])
    f = PatchyField([Patch(1, domain, field,
                           frozenset(range(domain.num_edges)))])
    x = solve_forward(f, x0, 0.0, T, opts)
    y = solve_perturbed(f, w, x0, 0.0, T, opts)
    measured = sup_distance(x, y)
    bound = math.exp(L * T) * tv
    if measured > bound * (1.0 + fit_tolerance) + 1e-15:
        raise BudgetExceeded(
            f"measured gap {measured:.6g} above exponential bound {bound:.6g}",
            stage="lipschitz", measured=measured, bound=bound)
    return measured, bound


# -- tangential curved-boundary scenario ----------------------------------------

@dataclass(frozen=True)
class Example14Scenario:
    """Two power-law curves meeting the flow tangentially.

    The field is east below the first curve and right of the second, north
    above the first curve. The reference solution threads both tangency
    points; the forced one jumps across the first curve at offset eps and
    pays a gap of order eps**(1/beta) after the second curve.
    """

    alpha: float
    beta: float
    x_start: float = -0.5
    eps_max: float = 0.1

    def __post_init__(self):
        if not (self.alpha > 1 and self.beta > 1):
            raise ValueError("curve exponents must exceed 1")

    def curve1(self, x1: float) -> float:
        return abs(x1) ** self.alpha

    def curve2_x(self, x2: float) -> float:
        return abs(x2 - 1.0) ** self.beta

    @property
    def point_a(self):
        return np.array([0.0, 0.0])

    @property
    def point_b(self):
        return np.array([0.0, 1.0])

    def jump_points(self, eps: float):
        p = np.array([eps, -eps ** self.alpha])
        return p, np.array([eps, eps ** self.alpha])


def _march(p, v, stop, h, t: float):
    """March a constant-speed ray until stop flips, bisecting the flip time.
    Returns (points, times)."""
    x, y = float(p[0]), float(p[1])
    vx, vy = float(v[0]), float(v[1])
    pts = [(x, y)]
    ts = [t]
    guard = 0
    while not stop(x, y):
        guard += 1
        if guard > 2_000_000:
            raise ScenarioOutOfRange("curve crossing not found")
        qx, qy = x + h * vx, y + h * vy
        if stop(qx, qy):
            lo, hi = 0.0, h
            while hi - lo > 1e-13:
                mid = 0.5 * (lo + hi)
                if stop(x + mid * vx, y + mid * vy):
                    hi = mid
                else:
                    lo = mid
            pts.append((x + hi * vx, y + hi * vy))
            ts.append(ts[-1] + hi)
            return pts, ts
        x, y = qx, qy
        pts.append((x, y))
        ts.append(ts[-1] + h)
    return pts, ts


def _trace_reference(s: Example14Scenario, y0: float, x_jump: Optional[float],
                     jump_to: Optional[np.ndarray], T: float, h: float):
    """Piecewise path: east (optionally jumping at x_jump), north across the
    first curve region, east after the second curve. Returns (polyline pts,
    times, time when the second curve is passed)."""
    pts_all, ts_all = [], []
    t = 0.0
    if x_jump is not None:
        pts, ts = _march((s.x_start, y0), (1.0, 0.0),
                         lambda x, y: x >= x_jump, h, t)
        pts_all += pts
        ts_all += ts
        t = ts[-1]
        p = (float(jump_to[0]), float(jump_to[1]))
        pts_all.append(p)
        ts_all.append(t)
    else:
        # tangency of the first curve: the turn happens where it meets y = 0
        pts, ts = _march((s.x_start, y0), (1.0, 0.0),
                         lambda x, y: x >= 0.0, h, t)
        pts_all += pts
        ts_all += ts
        t = ts[-1]
        p = pts[-1]

    beta = s.beta

    def past_curve2(x, y):
        if x > 0.0:
            return y > 0.5 and x >= abs(y - 1.0) ** beta
        return y >= 1.0

    pts, ts = _march(p, (0.0, 1.0), past_curve2, h, t)
    pts_all += pts[1:]
    ts_all += ts[1:]
    t = ts[-1]
    px, py = pts[-1]
    t_cross2 = t
    if t < T:
        n = max(2, int((T - t) / h) + 1)
        for k in range(1, n + 1):
            dt = (T - t) * k / n
            pts_all.append((px + dt, py))
            ts_all.append(t + dt)
    return np.asarray(pts_all), np.asarray(ts_all), t_cross2


def _polyline_distance(p, pts: np.ndarray) -> float:
    a = pts[:-1]
    d = pts[1:] - a
    dd = np.einsum("ij,ij->i", d, d)
    dd[dd == 0.0] = 1.0
    s = np.clip(((p[0] - a[:, 0]) * d[:, 0] + (p[1] - a[:, 1]) * d[:, 1]) / dd,
                0.0, 1.0)
    return float(np.hypot(p[0] - a[:, 0] - s * d[:, 0],
                          p[1] - a[:, 1] - s * d[:, 1]).min())


def example_1_4_distance(s: Example14Scenario, eps: float,
                         h: float = 1e-3):
    """Total variation and post-crossing separation for one jump offset.

    The separation is the symmetric sup of point-to-path distances over the
    window after both paths have passed the second curve, which measures
    the geometric gap of the outgoing rays.
    """
    if eps == 0.0:
        return 0.0, 0.0
    if not 0.0 < eps <= s.eps_max:
        raise ScenarioOutOfRange(
            f"eps={eps:.3g} outside (0, {s.eps_max}]: the tangency window "
            "does not survive")
    tv = 2.0 * eps ** s.alpha
    _, p_prime = s.jump_points(eps)
    _, _, t2_ref = _trace_reference(s, 0.0, None, None, 0.0, h)
    _, _, t2_pert = _trace_reference(
        s, -eps ** s.alpha, eps, p_prime, 0.0, h)
    t_w = max(t2_ref, t2_pert)
    # trace far enough past the window that neither path runs out of the
    # other's coverage, then compare window samples against full polylines
    T_long = t_w + 1.5
    ref_pts, ref_ts, _ = _trace_reference(s, 0.0, None, None, T_long, h)
    pert_pts, pert_ts, _ = _trace_reference(s, -eps ** s.alpha, eps, p_prime,
                                            T_long, h)
    win = 0.5
    ref_win = ref_pts[(ref_ts >= t_w) & (ref_ts <= t_w + win)]
    pert_win = pert_pts[(pert_ts >= t_w) & (pert_ts <= t_w + win)]
    d1 = max(_polyline_distance(p, pert_pts)
             for p in ref_win[:: max(1, len(ref_win) // 200)])
    d2 = max(_polyline_distance(p, ref_pts)
             for p in pert_win[:: max(1, len(pert_win) // 200)])
    return tv, max(d1, d2)


def example_1_4_sweep(s: Example14Scenario, eps_list: Sequence[float],
                      h: float = 1e-3) -> RateTable:
    rows = []
    for eps in sorted(eps_list, reverse=True):
        try:
            tv, d = example_1_4_distance(s, float(eps), h)
            rows.append(RateRow(tv, d, "tangential"))
        except ScenarioOutOfRange as err:
            rows.append(RateRow(float(eps), None, "tangential", str(err)))
    ok = [(r.tv, r.distance) for r in rows if r.distance]
    if len(ok) < 3:
        raise BudgetExceeded("tangential sweep needs >= 3 rows", stage="example14")
    e, c, r2 = fit_loglog([t for t, _ in ok], [d for _, d in ok])
    return RateTable(rows, e, c, r2)
