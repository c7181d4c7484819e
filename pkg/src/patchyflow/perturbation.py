"""Impulsive BV forcing paths: finite jumps plus a piecewise-constant drift
rate, with exact total variation."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Jump:
    time: float
    displacement: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "time", float(self.time))
        d = np.asarray(self.displacement, dtype=float).reshape(2)
        object.__setattr__(self, "displacement", d)

    @property
    def size(self) -> float:
        return float(np.hypot(self.displacement[0], self.displacement[1]))


class BVPath:
    """w(t) = sum of jumps before t plus the integral of a drift rate.

    Left-continuous: ``value(t)`` includes only jumps at times < t;
    ``value_right(t)`` includes a jump at t. The drift rate is constant on
    each interval of the breakpoint grid ``drift_times`` and zero outside
    its span.
    """

    def __init__(self, jumps: Sequence[Jump] = (),
                 drift_times: Optional[Sequence[float]] = None,
                 drift_rates: Optional[Sequence] = None):
        js = sorted((Jump(j.time, j.displacement) if isinstance(j, Jump)
                     else Jump(j[0], j[1]) for j in jumps), key=lambda j: j.time)
        for a, b in zip(js, js[1:]):
            if not b.time > a.time:
                raise ValueError("jump times must be strictly increasing")
        self.jumps = tuple(js)
        if drift_times is None:
            drift_times = []
            drift_rates = []
        t = np.asarray(list(drift_times), dtype=float)
        r = np.asarray(list(drift_rates if drift_rates is not None else []),
                       dtype=float).reshape(-1, 2)
        if len(t) not in (0, len(r) + 1):
            raise ValueError("drift needs len(times) == len(rates) + 1")
        if len(t) and np.any(np.diff(t) <= 0):
            raise ValueError("drift breakpoints must be increasing")
        self.drift_times = t
        self.drift_rates = r
        self._jump_times = [j.time for j in js]

    # -- evaluation ---------------------------------------------------------

    def _drift_integral(self, t: float) -> np.ndarray:
        out = np.zeros(2)
        ts, rs = self.drift_times, self.drift_rates
        for k in range(len(rs)):
            lo, hi = ts[k], ts[k + 1]
            if t <= lo:
                break
            out += rs[k] * (min(t, hi) - lo)
        return out

    def drift_rate_at(self, t: float) -> np.ndarray:
        ts, rs = self.drift_times, self.drift_rates
        if len(rs) == 0 or t < ts[0] or t >= ts[-1]:
            return np.zeros(2)
        k = min(bisect.bisect_right(ts, t) - 1, len(rs) - 1)
        return rs[k].copy()

    def value(self, t: float) -> np.ndarray:
        out = self._drift_integral(t)
        for j in self.jumps:
            if j.time < t:
                out += j.displacement
            else:
                break
        return out

    def value_right(self, t: float) -> np.ndarray:
        out = self._drift_integral(t)
        for j in self.jumps:
            if j.time <= t:
                out += j.displacement
            else:
                break
        return out

    # -- structure ----------------------------------------------------------

    def total_variation(self) -> float:
        tv = sum(j.size for j in self.jumps)
        for k in range(len(self.drift_rates)):
            dt = self.drift_times[k + 1] - self.drift_times[k]
            tv += float(np.hypot(*self.drift_rates[k])) * dt
        return tv

    def breakpoints(self):
        """All times where the forcing changes character."""
        out = set(self._jump_times)
        out.update(float(t) for t in self.drift_times)
        return sorted(out)

    def shifted(self, dt: float) -> "BVPath":
        return BVPath([Jump(j.time + dt, j.displacement) for j in self.jumps],
                      self.drift_times + dt if len(self.drift_times) else None,
                      self.drift_rates if len(self.drift_rates) else None)

    def scaled(self, s: float) -> "BVPath":
        return BVPath([Jump(j.time, s * j.displacement) for j in self.jumps],
                      self.drift_times if len(self.drift_times) else None,
                      s * self.drift_rates if len(self.drift_rates) else None)

    @staticmethod
    def zero() -> "BVPath":
        return BVPath()

    def __repr__(self):
        return (f"BVPath(jumps={len(self.jumps)}, "
                f"tv={self.total_variation():.6g})")


def total_variation(w: BVPath) -> float:
    """Jump masses plus the integral of the drift rate norm."""
    return w.total_variation()


@dataclass(frozen=True)
class InnerOuterPerturbation:
    """A state perturbation e1 (piecewise smooth, finitely many jumps) and an
    integrable forcing rate e2, given on breakpoint grids."""

    e1_jumps: tuple = ()
    e1_rate_times: Optional[np.ndarray] = None
    e1_rates: Optional[np.ndarray] = None
    e2_rate_times: Optional[np.ndarray] = None
    e2_rates: Optional[np.ndarray] = None

    def __post_init__(self):
        js = tuple(j if isinstance(j, Jump) else Jump(j[0], j[1])
                   for j in self.e1_jumps)
        object.__setattr__(self, "e1_jumps", js)
        for name in ("e1_rate_times", "e1_rates", "e2_rate_times", "e2_rates"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))


def from_inner_outer(p: InnerOuterPerturbation, t0: float = 0.0) -> BVPath:
    """Collapse inner and outer perturbations into one forcing path: the
    jumps of e1 plus a drift equal to the smooth rate of e1 plus e2, merged
    on the union breakpoint grid."""
    grids = []
    for ts in (p.e1_rate_times, p.e2_rate_times):
        if ts is not None and len(ts):
            grids.extend(float(t) for t in ts)
    if not grids:
        return BVPath(p.e1_jumps)
    times = sorted(set(grids))
    rates = []
    for lo, hi in zip(times[:-1], times[1:]):
        mid = 0.5 * (lo + hi)
        r = np.zeros(2)
        r += _rate_on(p.e1_rate_times, p.e1_rates, mid)
        r += _rate_on(p.e2_rate_times, p.e2_rates, mid)
        rates.append(r)
    return BVPath(p.e1_jumps, times, rates)


def _rate_on(ts, rs, t: float) -> np.ndarray:
    if ts is None or rs is None or len(rs) == 0 or t < ts[0] or t >= ts[-1]:
        return np.zeros(2)
    k = min(bisect.bisect_right(list(ts), t) - 1, len(rs) - 1)
    return np.asarray(rs[k], dtype=float)
