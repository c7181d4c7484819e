"""Trajectory generation for patchy fields.

Forward Caratheodory solutions with edge-event detection, unique backward
solutions, impulsively forced solutions, region exit times, vertex
trajectories and the boundary-proximity time measure. Fixed-step classical
4th order integration; every region switch is located by bisection on the
membership indicator.

Solvers are pure functions of immutable inputs; a Trajectory is immutable
once returned.
"""

from __future__ import annotations

import bisect as _bisect
import math
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (HorizonExceeded, JumpExitsDomain, MixedSignEdge,
                     NoBackwardSolution, OutsideDomain, StallDetected)
from .field import PatchyField, SmoothFieldSpec
from .geometry import TOL_GEO
from .perturbation import BVPath


class Direction(Enum):
    FORWARD = 1
    BACKWARD = -1


@dataclass(frozen=True)
class SolverOptions:
    h: float = 1e-3
    tol_t: float = 1e-10
    tol_geo: float = TOL_GEO
    exit_cap: float = 100.0
    max_steps: int = 2_000_000

    @property
    def solver_tol(self) -> float:
        """Conservative accuracy scale of dense output and event location."""
        return self.h * self.h


DEFAULT_OPTS = SolverOptions()


# -- trajectories -------------------------------------------------------------

@dataclass(frozen=True)
class JumpMark:
    time: float
    left: np.ndarray
    right: np.ndarray

    @property
    def size(self) -> float:
        d = self.right - self.left
        return float(math.hypot(d[0], d[1]))


class TrajectorySegment:
    __slots__ = ("alpha", "times", "points")

    def __init__(self, alpha: int, times, points):
        self.alpha = int(alpha)
        self.times = np.asarray(times, dtype=float)
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(self.times) != len(self.points) or len(self.times) < 1:
            raise ValueError("segment needs matching times and points")

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def eval(self, t: float) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            return self.points[0].copy()
        if t >= ts[-1]:
            return self.points[-1].copy()
        k = int(np.searchsorted(ts, t, side="right")) - 1
        dt = ts[k + 1] - ts[k]
        if dt <= 0:
            return self.points[k].copy()
        s = (t - ts[k]) / dt
        return (1 - s) * self.points[k] + s * self.points[k + 1]


class Trajectory:
    """A left-continuous piecewise path: contiguous segments with constant
    patch index, plus marked jump discontinuities."""

    def __init__(self, segments: Sequence[TrajectorySegment],
                 jump_marks: Sequence[JumpMark] = (), meta: Optional[dict] = None):
        if not segments:
            raise ValueError("a trajectory needs at least one segment")
        self.segments = tuple(segments)
        for a, b in zip(self.segments, self.segments[1:]):
            if abs(a.t_end - b.t_start) > 1e-9:
                raise ValueError("segments must be contiguous in time")
        self.jump_marks = tuple(sorted(jump_marks, key=lambda m: m.time))
        self.meta = dict(meta or {})
        self._ends = [s.t_end for s in self.segments]

    @property
    def t0(self) -> float:
        return self.segments[0].t_start

    @property
    def t1(self) -> float:
        return self.segments[-1].t_end

    @property
    def start(self) -> np.ndarray:
        return self.segments[0].start.copy()

    @property
    def end(self) -> np.ndarray:
        return self.segments[-1].end.copy()

    def _segment_at(self, t: float, right: bool = False) -> TrajectorySegment:
        if right:
            for seg in self.segments:
                if seg.t_start <= t < seg.t_end or seg is self.segments[-1]:
                    return seg
            return self.segments[-1]
        k = _bisect.bisect_left(self._ends, t)
        k = min(k, len(self.segments) - 1)
        seg = self.segments[k]
        if t <= seg.t_start and k > 0 and t <= self.segments[k - 1].t_end:
            return self.segments[k - 1]
        return seg

    def eval(self, t: float) -> np.ndarray:
        """Left-continuous evaluation."""
        return self._segment_at(t).eval(t)

    def eval_right(self, t: float) -> np.ndarray:
        return self._segment_at(t, right=True).eval(t)

    def sample_at(self, ts: np.ndarray) -> np.ndarray:
        """Vectorized left-continuous evaluation at sorted times."""
        ts = np.asarray(ts, dtype=float)
        out = np.empty((len(ts), 2))
        out[:] = np.nan
        for k, seg in enumerate(self.segments):
            lo = seg.t_start if k > 0 else -np.inf
            mask = (ts > lo) & (ts <= seg.t_end) if k > 0 else (ts <= seg.t_end)
            if not mask.any():
                continue
            out[mask, 0] = np.interp(ts[mask], seg.times, seg.points[:, 0])
            out[mask, 1] = np.interp(ts[mask], seg.times, seg.points[:, 1])
        tail = ts > self.segments[-1].t_end
        if tail.any():
            out[tail] = self.segments[-1].points[-1]
        miss = np.isnan(out[:, 0])
        if miss.any():
            for i in np.flatnonzero(miss):
                out[i] = self.eval(float(ts[i]))
        return out

    def alpha_at(self, t: float, right: bool = False) -> int:
        return self._segment_at(t, right).alpha

    def sample_times(self) -> np.ndarray:
        return np.unique(np.concatenate([s.times for s in self.segments]))

    def alphas(self):
        return [s.alpha for s in self.segments]

    def total_jump_size(self) -> float:
        return sum(m.size for m in self.jump_marks)

    def restrict(self, t_lo: float, t_hi: float) -> "Trajectory":
        """Sub-trajectory on [t_lo, t_hi] with interpolated endpoints."""
        if not (self.t0 - 1e-9 <= t_lo < t_hi <= self.t1 + 1e-9):
            raise ValueError("restriction window outside trajectory span")
        segs = []
        for seg in self.segments:
            lo, hi = max(seg.t_start, t_lo), min(seg.t_end, t_hi)
            if hi - lo <= 1e-15 and not (seg.t_start >= t_lo and seg.t_end <= t_hi):
                continue
            mask = (seg.times > lo + 1e-15) & (seg.times < hi - 1e-15)
            ts = np.concatenate([[lo], seg.times[mask], [hi]])
            ps = np.vstack([[seg.eval(lo)], seg.points[mask], [seg.eval(hi)]])
            segs.append(TrajectorySegment(seg.alpha, ts, ps))
        marks = [m for m in self.jump_marks if t_lo < m.time < t_hi]
        return Trajectory(segs, marks, dict(self.meta))

    def time_shifted(self, dt: float) -> "Trajectory":
        segs = [TrajectorySegment(s.alpha, s.times + dt, s.points)
                for s in self.segments]
        marks = [JumpMark(m.time + dt, m.left, m.right) for m in self.jump_marks]
        return Trajectory(segs, marks, dict(self.meta))

    @staticmethod
    def concatenate(parts: Sequence["Trajectory"], marks_extra=()) -> "Trajectory":
        segs = []
        marks = list(marks_extra)
        for p in parts:
            segs.extend(p.segments)
            marks.extend(p.jump_marks)
        meta = {}
        for p in parts:
            meta.update(p.meta)
        return Trajectory(segs, marks, meta)

    def __repr__(self):
        return (f"Trajectory([{self.t0:.6g}, {self.t1:.6g}], "
                f"{len(self.segments)} segments, "
                f"{len(self.jump_marks)} jumps)")


def sup_distance(a: Trajectory, b: Trajectory,
                 t_lo: Optional[float] = None, t_hi: Optional[float] = None) -> float:
    """Sampled sup-norm distance on the common horizon."""
    lo = max(a.t0, b.t0) if t_lo is None else t_lo
    hi = min(a.t1, b.t1) if t_hi is None else t_hi
    if hi <= lo:
        raise ValueError("trajectories share no time window")
    ts = np.unique(np.concatenate([a.sample_times(), b.sample_times()]))
    ts = ts[(ts >= lo) & (ts <= hi)]
    if len(ts) == 0 or ts[0] > lo:
        ts = np.concatenate([[lo], ts])
    if ts[-1] < hi:
        ts = np.concatenate([ts, [hi]])
    pa = a.sample_at(ts)
    pb = b.sample_at(ts)
    return float(np.hypot(pa[:, 0] - pb[:, 0], pa[:, 1] - pb[:, 1]).max())


@dataclass
class VertexTrajectory:
    """A maximal single-field trajectory through a region vertex, with the
    times where it meets the region boundary."""

    alpha: int
    gamma: Trajectory
    crossing_times: list
    vertex_hits: list

    def point_at_crossing(self, h: int) -> np.ndarray:
        return self.gamma.eval(self.crossing_times[h])

    @property
    def duration(self) -> float:
        return self.gamma.t1 - self.gamma.t0


# -- fast field closures ------------------------------------------------------

def _fast_field(fieldlike, drift=(0.0, 0.0)) -> Callable:
    rx, ry = float(drift[0]), float(drift[1])
    if isinstance(fieldlike, SmoothFieldSpec):
        cx, cy = float(fieldlike.constant[0]) + rx, float(fieldlike.constant[1]) + ry
        if fieldlike.linear is None and fieldlike.quadratic is None:
            def g_const(x, y):
                return cx, cy
            return g_const
        a = fieldlike.linear if fieldlike.linear is not None else np.zeros((2, 2))
        a00, a01, a10, a11 = float(a[0, 0]), float(a[0, 1]), float(a[1, 0]), float(a[1, 1])
        if fieldlike.quadratic is None:
            def g_affine(x, y):
                return cx + a00 * x + a01 * y, cy + a10 * x + a11 * y
            return g_affine
        q = fieldlike.quadratic

        def g_quad(x, y):
            return (cx + a00 * x + a01 * y
                    + q[0, 0, 0] * x * x + 2 * q[0, 0, 1] * x * y + q[0, 1, 1] * y * y,
                    cy + a10 * x + a11 * y
                    + q[1, 0, 0] * x * x + 2 * q[1, 0, 1] * x * y + q[1, 1, 1] * y * y)
        return g_quad

    def g_call(x, y):
        v = fieldlike((x, y))
        return float(v[0]) + rx, float(v[1]) + ry
    return g_call


def _rk4_step(g, x, y, h):
    k1x, k1y = g(x, y)
    k2x, k2y = g(x + 0.5 * h * k1x, y + 0.5 * h * k1y)
    k3x, k3y = g(x + 0.5 * h * k2x, y + 0.5 * h * k2y)
    k4x, k4y = g(x + h * k3x, y + h * k3y)
    return (x + h * (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0,
            y + h * (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0)


def _bisect_event(pred_at, lo: float, hi: float, tol_t: float) -> float:
    """Earliest s in (lo, hi] where pred flips to True; pred(lo) is False."""
    while hi - lo > tol_t:
        mid = 0.5 * (lo + hi)
        if pred_at(mid):
            hi = mid
        else:
            lo = mid
    return hi


# -- forward solver -----------------------------------------------------------

def _advance_segment(f: PatchyField, alpha: int, g, t: float, x: float, y: float,
                     t_stop: float, opts: SolverOptions, sign: float = 1.0,
                     backward_mode: bool = False):
    """Integrate one constant-index segment until a region event or t_stop.

    Returns (status, t, x, y, times, xs, ys) where status is one of
    'horizon', 'higher', 'exit'. In backward mode 'higher' means a strict
    entry into a higher patch interior, which has no admissible history.
    """
    tol = opts.tol_geo
    h = opts.h
    patch = f.patch(alpha)
    dom = patch.domain
    higher = [p for p in f.patches if p.index > alpha]

    def trig_higher(px, py):
        if backward_mode:
            for hp in higher:
                if (hp.domain.contains_strict(px, py)
                        and hp.domain.boundary_distance(px, py) > tol):
                    return True
            return False
        for hp in higher:
            if hp.domain.contains((px, py), tol):
                return True
        return False

    def trig_exit(px, py):
        return not dom.contains((px, py), tol)

    times = [t]
    xs = [x]
    ys = [y]
    steps = 0
    while t < t_stop - 1e-15:
        if steps > opts.max_steps:
            raise HorizonExceeded("step budget exhausted")
        steps += 1
        dt = min(h, t_stop - t)
        nx, ny = _rk4_step(g, x, y, sign * dt)
        ev_h = trig_higher(nx, ny)
        ev_x = trig_exit(nx, ny)
        if ev_h or ev_x:
            def pred(s):
                px, py = _rk4_step(g, x, y, sign * s)
                return trig_higher(px, py) or trig_exit(px, py)
            s_star = _bisect_event(pred, 0.0, dt, opts.tol_t)
            ex, ey = _rk4_step(g, x, y, sign * s_star)
            t = t + s_star
            times.append(t)
            xs.append(ex)
            ys.append(ey)
            status = "higher" if trig_higher(ex, ey) else "exit"
            return status, t, ex, ey, times, xs, ys
        t, x, y = t + dt, nx, ny
        times.append(t)
        xs.append(x)
        ys.append(y)
    return "horizon", t, x, y, times, xs, ys


def solve_forward(f: PatchyField, x0, t0: float, t1: float,
                  opts: SolverOptions = DEFAULT_OPTS) -> Trajectory:
    """Forward Caratheodory solution of the patchy field from x0.

    Within each segment the path follows one patch field; switches happen
    exactly where the path crosses into a higher-index patch, located by
    bisection. The active index never decreases along the result (a decrease
    would mean the path slipped out of its patch by numerical drift and is
    recorded as a warning).
    """
    x, y = float(x0[0]), float(x0[1])
    alpha = f.alpha_star((x, y))
    t = float(t0)
    segments = []
    warnings: list[str] = []
    stall_guard = 0
    while True:
        g = _fast_field(f.patch(alpha).field)
        status, t, x, y, times, xs, ys = _advance_segment(
            f, alpha, g, t, x, y, t1, opts)
        segments.append(TrajectorySegment(alpha, times, np.column_stack([xs, ys])))
        if status == "horizon":
            break
        if len(times) <= 2 and times[-1] - times[0] < opts.tol_t * 10:
            stall_guard += 1
            if stall_guard > 3 * len(f.patches):
                raise StallDetected(
                    f"no progress at t={t:.12g}, point=({x:.12g},{y:.12g})")
        else:
            stall_guard = 0
        if status == "higher":
            new_alpha = f.alpha_star((x, y))
            if new_alpha <= alpha:
                new_alpha = max(p.index for p in f.patches
                                if p.index > alpha and p.domain.contains((x, y), opts.tol_geo))
            alpha = new_alpha
        else:  # left own patch without entering a higher one
            cand = f.alpha_star_or_none(x, y, opts.tol_geo)
            if cand is None:
                traj = Trajectory(segments, meta={"warnings": warnings})
                raise OutsideDomain(
                    f"path left every patch at t={t:.9g}", trajectory=traj,
                    point=np.array([x, y]))
            warnings.append(
                f"own-boundary hit at t={t:.9g}: index fell {alpha}->{cand} "
                "(numerical drift or clipped patch edge)")
            alpha = cand
    return Trajectory(segments, meta={"warnings": warnings, "kind": "forward"})


def solve_backward(f: PatchyField, x1, t1: float, t0: float,
                   opts: SolverOptions = DEFAULT_OPTS) -> Trajectory:
    """The unique backward Caratheodory solution ending at x1 at time t1.

    Walking backward the active index may only step down, and only through
    a transversal crossing of the current patch boundary into a lower
    patch. A strict backward entry into a higher patch, or an exit that no
    lower patch picks up, means no admissible history exists.
    """
    if not t0 < t1:
        raise ValueError("need t0 < t1")
    x, y = float(x1[0]), float(x1[1])
    alpha = f.alpha_star((x, y))
    # reversed clock: tau = t1 - t runs forward from 0
    tau = 0.0
    tau_end = t1 - t0
    rev_segments = []
    while True:
        patch = f.patch(alpha)
        g = _fast_field(patch.field)
        status, tau, x, y, times, xs, ys = _advance_segment(
            f, alpha, g, tau, x, y, tau_end, opts, sign=-1.0, backward_mode=True)
        rev_segments.append((alpha, times, xs, ys))
        if status == "horizon":
            break
        if status == "higher":
            raise NoBackwardSolution(
                f"backward path enters a higher patch interior at "
                f"t={t1 - tau:.9g}; no admissible history")
        # left the current patch: a lower patch continues the history iff
        # its own backward flow immediately accepts the point
        new_alpha = None
        for patch_c in reversed(f.patches):
            beta = patch_c.index
            if beta >= alpha or not patch_c.domain.contains((x, y), opts.tol_geo):
                continue
            gbx, gby = _fast_field(patch_c.field)(x, y)
            nrm = math.hypot(gbx, gby)
            eps = max(10 * opts.tol_geo, 1e-9) / max(nrm, 1e-12)
            if f.alpha_star_or_none(x - eps * gbx, y - eps * gby,
                                    opts.tol_geo) == beta:
                new_alpha = beta
                break
        if new_alpha is None:
            raise NoBackwardSolution(
                f"backward flow of patch {alpha} exits every admissible patch "
                f"at t={t1 - tau:.9g}, point=({x:.9g},{y:.9g})")
        alpha = new_alpha
    segments = []
    for alpha_k, times, xs, ys in reversed(rev_segments):
        ts = t1 - np.asarray(times[::-1], dtype=float)
        ps = np.column_stack([xs[::-1], ys[::-1]])
        segments.append(TrajectorySegment(alpha_k, ts, ps))
    return Trajectory(segments, meta={"kind": "backward"})


def solve_perturbed(f: PatchyField, w: BVPath, y0, t0: float, t1: float,
                    opts: SolverOptions = DEFAULT_OPTS) -> Trajectory:
    """Left-continuous solution of the impulsively forced system: between
    forcing events the state follows the active patch field plus the drift
    rate; at each jump time the displacement is applied instantaneously and
    the active patch re-resolved."""
    x, y = float(y0[0]), float(y0[1])
    if not f.contains((x, y), opts.tol_geo):
        raise OutsideDomain(f"initial point {y0} outside every patch")
    alpha = f.alpha_star((x, y))
    t = float(t0)
    cuts = sorted({float(t0), float(t1)}
                  | {float(b) for b in w.breakpoints() if t0 < b < t1}
                  | {j.time for j in w.jumps if t0 <= j.time < t1})
    segments = []
    marks = []
    warnings: list[str] = []
    jump_at = {j.time: j for j in w.jumps}
    pending: list[tuple] = []  # (times, xs, ys) buffers for the open segment
    open_alpha = alpha

    def flush(times, xs, ys):
        nonlocal pending
        pending.append((times, xs, ys))

    def close_segment():
        nonlocal pending
        if not pending:
            return
        ts = np.concatenate([np.asarray(p[0]) for p in pending])
        px = np.concatenate([np.asarray(p[1]) for p in pending])
        py = np.concatenate([np.asarray(p[2]) for p in pending])
        keep = np.concatenate([[True], np.diff(ts) > 0])
        segments.append(TrajectorySegment(
            open_alpha, ts[keep], np.column_stack([px[keep], py[keep]])))
        pending = []

    # apply a jump scheduled exactly at the start
    if t in jump_at:
        j = jump_at[t]
        left = np.array([x, y])
        x, y = x + j.displacement[0], y + j.displacement[1]
        if not f.contains((x, y), opts.tol_geo):
            raise JumpExitsDomain(f"jump at t={t:.9g} leaves the domain", time=t)
        marks.append(JumpMark(t, left, np.array([x, y])))
        alpha = f.alpha_star((x, y))
        open_alpha = alpha

    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= t:
            continue
        rate = w.drift_rate_at(0.5 * (max(lo, t) + hi))
        while t < hi - 1e-15:
            g = _fast_field(f.patch(alpha).field, drift=rate)
            status, t, x, y, times, xs, ys = _advance_segment(
                f, alpha, g, t, x, y, hi, opts)
            flush(times, xs, ys)
            if status == "horizon":
                break
            close_segment()
            if status == "higher":
                alpha = f.alpha_star((x, y))
            else:
                cand = f.alpha_star_or_none(x, y, opts.tol_geo)
                if cand is None:
                    close_segment()
                    traj = Trajectory(segments, marks, {"warnings": warnings})
                    raise OutsideDomain(
                        f"forced path left every patch at t={t:.9g}",
                        trajectory=traj, point=np.array([x, y]))
                warnings.append(f"own-boundary hit at t={t:.9g} under forcing")
                alpha = cand
            open_alpha = alpha
        if hi in jump_at and hi < t1:
            j = jump_at[hi]
            left = np.array([x, y])
            nx, ny = x + j.displacement[0], y + j.displacement[1]
            if not f.contains((nx, ny), opts.tol_geo):
                close_segment()
                raise JumpExitsDomain(f"jump at t={hi:.9g} leaves the domain",
                                      time=hi)
            close_segment()
            marks.append(JumpMark(hi, left, np.array([nx, ny])))
            x, y = nx, ny
            alpha = f.alpha_star((x, y))
            open_alpha = alpha
            flush([hi], [x], [y])
    close_segment()
    return Trajectory(segments, marks, {"warnings": warnings, "kind": "perturbed"})


# -- exit times ---------------------------------------------------------------

def exit_time(f: PatchyField, alpha: int, x0, direction: Direction,
              opts: SolverOptions = DEFAULT_OPTS) -> float:
    """Time for the single-patch flow from x0 to leave the closed effective
    region, either by strictly entering a higher patch or by crossing the
    patch's own boundary. Backward exits are returned as times <= 0."""
    x, y = float(x0[0]), float(x0[1])
    tol = opts.tol_geo
    if not f.region_contains_fast(alpha, x, y, tol):
        return 0.0
    g = _fast_field(f.patch(alpha).field)
    sign = 1.0 if direction is Direction.FORWARD else -1.0

    def outside(px, py):
        return not f.region_contains_fast(alpha, px, py, tol)

    t = 0.0
    h = opts.h
    while t < opts.exit_cap:
        dt = min(h, opts.exit_cap - t)
        nx, ny = _rk4_step(g, x, y, sign * dt)
        if outside(nx, ny):
            def pred(s):
                px, py = _rk4_step(g, x, y, sign * s)
                return outside(px, py)
            s_star = _bisect_event(pred, 0.0, dt, opts.tol_t)
            t_exit = t + s_star
            return t_exit if direction is Direction.FORWARD else -t_exit
        t, x, y = t + dt, nx, ny
    raise HorizonExceeded(
        f"no exit from region {alpha} within cap {opts.exit_cap}; "
        "field may vanish or circulate (validator breach)")


def flow_in_patch(f: PatchyField, alpha: int, x0, duration: float,
                  opts: SolverOptions = DEFAULT_OPTS, t_start: float = 0.0,
                  stop_on_exit: bool = False):
    """Single-field flow for a duration (negative runs backward). Returns a
    one-segment Trajectory; with stop_on_exit the path is truncated where it
    leaves the closed effective region."""
    x, y = float(x0[0]), float(x0[1])
    g = _fast_field(f.patch(alpha).field)
    sign = 1.0 if duration >= 0 else -1.0
    span = abs(duration)
    tol = opts.tol_geo

    def outside(px, py):
        return not f.region_contains_fast(alpha, px, py, tol)

    t = 0.0
    times = [0.0]
    xs = [x]
    ys = [y]
    while t < span - 1e-15:
        dt = min(opts.h, span - t)
        nx, ny = _rk4_step(g, x, y, sign * dt)
        if stop_on_exit and outside(nx, ny):
            def pred(s):
                px, py = _rk4_step(g, x, y, sign * s)
                return outside(px, py)
            s_star = _bisect_event(pred, 0.0, dt, opts.tol_t)
            nx, ny = _rk4_step(g, x, y, sign * s_star)
            t += s_star
            times.append(t)
            xs.append(nx)
            ys.append(ny)
            break
        t, x, y = t + dt, nx, ny
        times.append(t)
        xs.append(x)
        ys.append(y)
    ts = np.asarray(times)
    ps = np.column_stack([xs, ys])
    if sign < 0:
        ts = ts[::-1] * -1.0
        ps = ps[::-1]
    seg = TrajectorySegment(alpha, t_start + ts, ps)
    return Trajectory([seg])


# -- boundary structure -------------------------------------------------------

@dataclass
class BoundaryClassification:
    incoming: tuple
    outgoing: tuple
    min_margin: float


def boundary_classification(f: PatchyField, alpha: int, n: int = 32
                            ) -> BoundaryClassification:
    """Assign every boundary edge of the effective region to inflow or
    outflow by the sign of the field against the edge normal. A sign change
    on one edge marks a tangency the transversality validator missed."""
    region = f.effective_region(alpha)
    patch = f.patch(alpha)
    incoming, outgoing = [], []
    min_margin = math.inf
    for i, e in enumerate(region.boundary_edges):
        inset = min(0.02, 1e-6 / max(e.length, 1e-12))
        ss = np.linspace(inset, 1.0 - inset, n)
        inner = [float(np.dot(patch.g(e.point_at(s)), e.normal)) for s in ss]
        lo, hi = min(inner), max(inner)
        if lo > 0.0:
            incoming.append(i)
            min_margin = min(min_margin, lo)
        elif hi < 0.0:
            outgoing.append(i)
            min_margin = min(min_margin, -hi)
        else:
            raise MixedSignEdge(
                f"edge {i} of region {alpha} carries both inflow and outflow "
                f"(inner products span [{lo:.3g}, {hi:.3g}])")
    return BoundaryClassification(tuple(incoming), tuple(outgoing), min_margin)


def vertex_trajectories(f: PatchyField, alpha: int,
                        opts: SolverOptions = DEFAULT_OPTS,
                        cross_tol: float = 1e-7,
                        min_duration: float = 1e-6):
    """Maximal single-field trajectories through the region's vertices whose
    graph stays in the closed region, with their boundary-crossing times."""
    region = f.effective_region(alpha)
    out = []
    seen = []
    for v in region.vertices:
        try:
            tf = exit_time(f, alpha, v, Direction.FORWARD, opts)
            tb = exit_time(f, alpha, v, Direction.BACKWARD, opts)
        except HorizonExceeded:
            continue
        tf = max(tf, 0.0)
        tb = min(tb, 0.0)
        if tf < min_duration:
            tf = 0.0
        if -tb < min_duration:
            tb = 0.0
        if tf == 0.0 and tb == 0.0:
            continue  # both flows leave immediately: single-point trajectory
        back = flow_in_patch(f, alpha, v, tb, opts, stop_on_exit=True)
        fwd = flow_in_patch(f, alpha, v, tf, opts, stop_on_exit=True)
        start = back.start
        key = (round(start[0], 6), round(start[1], 6),
               round(fwd.end[0], 6), round(fwd.end[1], 6))
        if key in seen:
            continue
        seen.append(key)
        if tb == 0.0:
            gamma = fwd
        elif tf == 0.0:
            gamma = back.time_shifted(-back.t0)
        else:
            gamma = Trajectory.concatenate([
                back.time_shifted(-back.t0),
                fwd.time_shifted(back.t1 - back.t0),
            ])
        crossings = _boundary_touch_times(gamma, region, cross_tol)
        hits = [w for w in region.vertices
                if min(math.hypot(*(gamma.eval(t) - w)) for t in crossings) <= cross_tol * 10]
        out.append(VertexTrajectory(alpha, gamma, crossings, hits))
    return out


def _boundary_touch_times(gamma: Trajectory, region, tol: float,
                          merge_dt: float = 1e-6):
    ts = gamma.sample_times()
    ds = np.array([region.boundary_distance(gamma.eval(t)) for t in ts])
    near = ds <= max(tol, 1e-7)
    times = [float(ts[0]), float(ts[-1])]
    k = 0
    while k < len(ts):
        if near[k]:
            j = k
            while j + 1 < len(ts) and near[j + 1]:
                j += 1
            kk = k + int(np.argmin(ds[k:j + 1]))
            times.append(float(ts[kk]))
            k = j + 1
        else:
            k += 1
    times.sort()
    merged = [times[0]]
    for t in times[1:]:
        if t - merged[-1] > merge_dt:
            merged.append(t)
    if abs(merged[-1] - float(ts[-1])) > merge_dt:
        merged.append(float(ts[-1]))
    else:
        merged[-1] = float(ts[-1])
    return merged


def boundary_time_measure(f: PatchyField, traj: Trajectory, c: float) -> float:
    """Time the path spends within distance c of its current region
    boundary, accumulated over sample intervals with linear interpolation
    of the distance."""
    if c <= 0.0:
        raise ValueError("threshold c must be positive")
    total = 0.0
    for seg in traj.segments:
        region = f.effective_region(seg.alpha)
        ds = [region.boundary_distance(p) for p in seg.points]
        for k in range(len(ds) - 1):
            dt = seg.times[k + 1] - seg.times[k]
            if dt <= 0:
                continue
            a, b = ds[k], ds[k + 1]
            if a < c and b < c:
                total += dt
            elif a < c <= b:
                total += dt * (c - a) / (b - a)
            elif b < c <= a:
                total += dt * (c - b) / (a - b)
    return total


# -- certificates -------------------------------------------------------------

def classical_residual(traj: Trajectory, f: PatchyField) -> float:
    """Largest defect between a high-order finite-difference derivative of
    the dense samples and the segment field. Decays like the fourth power
    of the step for a genuine classical solution."""
    worst = 0.0
    for seg in traj.segments:
        g = _fast_field(f.patch(seg.alpha).field)
        ts, ps = seg.times, seg.points
        n = len(ts)
        if n < 5:
            continue
        for k in range(2, n - 2):
            hs = np.diff(ts[k - 2:k + 3])
            h0 = hs[0]
            if h0 <= 0 or np.any(np.abs(hs - h0) > 1e-9 * max(h0, 1e-12)):
                continue
            dx = (ps[k - 2][0] - 8 * ps[k - 1][0] + 8 * ps[k + 1][0] - ps[k + 2][0]) / (12 * h0)
            dy = (ps[k - 2][1] - 8 * ps[k - 1][1] + 8 * ps[k + 1][1] - ps[k + 2][1]) / (12 * h0)
            gx, gy = g(ps[k][0], ps[k][1])
            r = math.hypot(dx - gx, dy - gy)
            if r > worst:
                worst = r
    return worst


def is_alpha_monotone(traj: Trajectory) -> bool:
    alphas = traj.alphas()
    return all(a <= b for a, b in zip(alphas, alphas[1:]))


def alpha_decreases_only_at_jumps(traj: Trajectory, tol: float = 1e-9) -> bool:
    marks = [m.time for m in traj.jump_marks]
    for a, b in zip(traj.segments, traj.segments[1:]):
        if b.alpha < a.alpha:
            if not any(abs(a.t_end - tm) <= tol for tm in marks):
                return False
    return True


# -- export -------------------------------------------------------------------

def trajectory_csv_rows(traj: Trajectory):
    """Rows (t, x, y, alpha, is_jump); a jump emits its left and right
    states as consecutive rows at the same time."""
    marks = {m.time: m for m in traj.jump_marks}
    rows = []
    for seg in traj.segments:
        for t, p in zip(seg.times, seg.points):
            t = float(t)
            if rows and abs(rows[-1][0] - t) < 1e-15 and t in marks:
                rows.append((t, float(p[0]), float(p[1]), seg.alpha, 1))
                continue
            rows.append((t, float(p[0]), float(p[1]), seg.alpha, 0))
    return rows


def write_trajectory_csv(traj: Trajectory, path):
    with open(path, "w") as fh:
        fh.write("t,x,y,alpha,is_jump\n")
        for t, x, y, a, j in trajectory_csv_rows(traj):
            fh.write(f"{t:.17g},{x:.17g},{y:.17g},{a},{j}\n")
