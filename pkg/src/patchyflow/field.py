"""Patchy vector fields: ordered polygonal patches with smooth fields,
effective regions, and the three genericity validators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import OutsideDomain
from .geometry import (TOL_GEO, BoundaryEdge, Classification, ClipMode,
                       OrientedLine, PointClass, Polygon, PolygonalRegion,
                       as_point, clip_segment, tangent_cone_interior_contains)


@dataclass(frozen=True)
class SmoothFieldSpec:
    """Polynomial field of degree at most two:
    g(x) = constant + linear @ x + (x^T quadratic[i] x)_i.

    The quadratic part, when present, is a (2, 2, 2) array, symmetric in its
    last two axes per output component.
    """

    constant: np.ndarray = dc_field(default_factory=lambda: np.zeros(2))
    linear: Optional[np.ndarray] = None
    quadratic: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.constant, dtype=float).reshape(2)
        object.__setattr__(self, "constant", c)
        if self.linear is not None:
            a = np.asarray(self.linear, dtype=float).reshape(2, 2)
            object.__setattr__(self, "linear", a)
        if self.quadratic is not None:
            q = np.asarray(self.quadratic, dtype=float).reshape(2, 2, 2)
            q = 0.5 * (q + np.transpose(q, (0, 2, 1)))
            object.__setattr__(self, "quadratic", q)
        for arr in (self.constant, self.linear, self.quadratic):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError("field coefficients must be finite")

    def __call__(self, p) -> np.ndarray:
        x, y = float(p[0]), float(p[1])
        gx, gy = self.constant[0], self.constant[1]
        if self.linear is not None:
            a = self.linear
            gx += a[0, 0] * x + a[0, 1] * y
            gy += a[1, 0] * x + a[1, 1] * y
        if self.quadratic is not None:
            q = self.quadratic
            gx += q[0, 0, 0] * x * x + 2 * q[0, 0, 1] * x * y + q[0, 1, 1] * y * y
            gy += q[1, 0, 0] * x * x + 2 * q[1, 0, 1] * x * y + q[1, 1, 1] * y * y
        return np.array([gx, gy])

    def jacobian(self, p) -> np.ndarray:
        x, y = float(p[0]), float(p[1])
        j = np.zeros((2, 2))
        if self.linear is not None:
            j += self.linear
        if self.quadratic is not None:
            q = self.quadratic
            j[0, 0] += 2 * (q[0, 0, 0] * x + q[0, 0, 1] * y)
            j[0, 1] += 2 * (q[0, 0, 1] * x + q[0, 1, 1] * y)
            j[1, 0] += 2 * (q[1, 0, 0] * x + q[1, 0, 1] * y)
            j[1, 1] += 2 * (q[1, 0, 1] * x + q[1, 1, 1] * y)
        return j

    def as_callable(self) -> Callable:
        return self.__call__


FieldLike = Callable  # accepts a point, returns a length-2 vector


def _field_eval(f: FieldLike, p) -> np.ndarray:
    return np.asarray(f(p), dtype=float).reshape(2)


@dataclass(frozen=True)
class Patch:
    """One patch: a bounded polygonal domain and a smooth field.

    ``inward_exempt_edges`` marks edges introduced when an unbounded patch
    was pre-clipped to a bounded polygon; the inward validator skips them
    because they are not part of the conceptual patch boundary.
    """

    index: int
    domain: Polygon
    field: FieldLike
    inward_exempt_edges: frozenset = dc_field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "inward_exempt_edges",
                           frozenset(int(i) for i in self.inward_exempt_edges))
        bad = [i for i in self.inward_exempt_edges
               if not 0 <= i < self.domain.num_edges]
        if bad:
            raise ValueError(f"exempt edge ids out of range: {bad}")

    def g(self, p) -> np.ndarray:
        return _field_eval(self.field, p)


@dataclass
class Violation:
    patch_index: int
    location: np.ndarray
    description: str
    margin: float


@dataclass
class ValidationReport:
    passed: bool
    violations: list
    details: dict = dc_field(default_factory=dict)

    def __bool__(self):
        return self.passed


class PatchyField:
    """An ordered family of patches with precomputed effective regions.

    The active patch at a point is the highest-index patch whose closed
    domain contains it (with the snap tolerance); the field value is that
    patch's field. Immutable after construction.
    """

    def __init__(self, patches: Sequence[Patch], tol: float = TOL_GEO):
        ps = sorted(patches, key=lambda p: p.index)
        idx = [p.index for p in ps]
        if len(set(idx)) != len(idx):
            raise ValueError("patch indices must be distinct (total order)")
        if not ps:
            raise ValueError("a patchy field needs at least one patch")
        self.patches = tuple(ps)
        self.tol = float(tol)
        self._by_index = {p.index: p for p in ps}
        self.regions = {p.index: self._build_region(p.index) for p in ps}

    # -- membership -------------------------------------------------------

    def patch(self, alpha: int) -> Patch:
        return self._by_index[alpha]

    @property
    def indices(self):
        return [p.index for p in self.patches]

    def alpha_star(self, p, tol: Optional[float] = None) -> int:
        """Highest patch index whose closed domain contains p."""
        t = self.tol if tol is None else tol
        q = as_point(p)
        for patch in reversed(self.patches):
            if patch.domain.contains(q, t):
                return patch.index
        raise OutsideDomain(f"point {q.tolist()} is outside every patch", point=q)

    def alpha_star_or_none(self, x: float, y: float, tol: Optional[float] = None):
        t = self.tol if tol is None else tol
        for patch in reversed(self.patches):
            if patch.domain.contains((x, y), t):
                return patch.index
        return None

    def eval(self, p) -> np.ndarray:
        """Field value of the active patch at p."""
        return self.patch(self.alpha_star(p)).g(p)

    __call__ = eval

    def contains(self, p, tol: Optional[float] = None) -> bool:
        t = self.tol if tol is None else tol
        q = as_point(p)
        return any(patch.domain.contains(q, t) for patch in self.patches)

    # -- effective regions -------------------------------------------------

    def higher_patches(self, alpha: int):
        return [p for p in self.patches if p.index > alpha]

    def _build_region(self, alpha: int) -> PolygonalRegion:
        patch = self._by_index[alpha]
        higher = self.higher_patches(alpha)
        pieces: list[BoundaryEdge] = []
        for i in range(patch.domain.num_edges):
            a, b, nrm = patch.domain.edge(i)
            segs = [(a, b)]
            for hp in higher:
                segs = [piece for s in segs
                        for piece in clip_segment(s, hp.domain, ClipMode.OUTSIDE, self.tol)]
            for s in segs:
                pieces.append(BoundaryEdge(s[0], s[1], nrm, alpha, len(pieces)))
        for hp in higher:
            for i in range(hp.domain.num_edges):
                a, b, nrm = hp.domain.edge(i)
                segs = clip_segment((a, b), patch.domain, ClipMode.INSIDE, self.tol)
                for other in higher:
                    if other.index == hp.index:
                        continue
                    segs = [piece for s in segs
                            for piece in clip_segment(s, other.domain, ClipMode.OUTSIDE, self.tol)]
                for s in segs:
                    pieces.append(BoundaryEdge(s[0], s[1], -nrm, hp.index, len(pieces)))
        return PolygonalRegion(patch.domain, [hp.domain for hp in higher], pieces)

    def effective_region(self, alpha: int) -> PolygonalRegion:
        """The patch domain minus every higher patch."""
        return self.regions[alpha]

    def region_contains(self, alpha: int, p, tol: Optional[float] = None) -> bool:
        """Membership in the effective region as a set: inside the patch and
        not strictly inside any higher patch."""
        t = self.tol if tol is None else tol
        q = as_point(p)
        return self.region_contains_fast(alpha, float(q[0]), float(q[1]), t)

    def region_contains_fast(self, alpha: int, x: float, y: float, tol: float) -> bool:
        patch = self._by_index[alpha]
        if not patch.domain.contains((x, y), tol):
            return False
        for hp in self.higher_patches(alpha):
            if hp.domain.contains_strict(x, y) and hp.domain.boundary_distance(x, y) > tol:
                return False
        return True


# -- validators -------------------------------------------------------------

N_BOUNDARY_SAMPLES = 64
TRANSVERSAL_MARGIN = 1e-6


def _edge_samples(a, b, n, rng=None):
    ss = np.linspace(0.0, 1.0, n)
    if rng is not None and n > 2:
        jitter = rng.uniform(-0.2, 0.2, size=n - 2) / (n - 1)
        ss = np.concatenate([[0.0], ss[1:-1] + jitter, [1.0]])
    return [a + s * (b - a) for s in ss]


def validate_inward(f: PatchyField, n_bnd: int = N_BOUNDARY_SAMPLES,
                    rng=None) -> ValidationReport:
    """Check that every patch field points strictly into its own domain on
    every non-exempt boundary edge point and vertex."""
    violations = []
    for patch in f.patches:
        poly = patch.domain
        nv = len(poly.vertices)
        for i in range(poly.num_edges):
            if i in patch.inward_exempt_edges:
                continue
            a, b, nrm = poly.edge(i)
            prev_exempt = (i - 1) % nv in patch.inward_exempt_edges
            next_exempt = (i + 1) % nv in patch.inward_exempt_edges
            samples = _edge_samples(a, b, n_bnd, rng)
            inner = [float(np.dot(patch.g(p), nrm)) for p in samples]
            for k, (p, ip) in enumerate(zip(samples, inner)):
                at_start = k == 0
                at_end = k == len(samples) - 1
                if at_start or at_end:
                    v = a if at_start else b
                    adj_exempt = prev_exempt if at_start else next_exempt
                    if adj_exempt:
                        # Vertex bordering a clip edge: only this edge's
                        # half-plane condition applies.
                        ok = ip > 0.0
                    else:
                        try:
                            ok = tangent_cone_interior_contains(poly, v, patch.g(v))
                        except ValueError:
                            ok = False
                    if not ok:
                        violations.append(Violation(
                            patch.index, np.asarray(v, dtype=float),
                            f"field leaves the tangent cone at vertex of edge {i}",
                            abs(ip) if ip == 0.0 else -ip))
                elif ip <= 0.0:
                    violations.append(Violation(
                        patch.index, np.asarray(p, dtype=float),
                        f"field not strictly inward on edge {i}",
                        abs(ip) if ip == 0.0 else -ip))
            if all(v > 0.0 for v in inner):
                # For degree <= 2 fields the inner product is quadratic in
                # the edge parameter, so a ternary search locates any dip
                # the samples straddled.
                s_min, ip_min = _ternary_min(
                    lambda s: float(np.dot(patch.g(a + s * (b - a)), nrm)), 0.0, 1.0)
                if ip_min <= 0.0:
                    violations.append(Violation(
                        patch.index, a + s_min * (b - a),
                        f"field tangency between samples on edge {i}", -ip_min))
    return ValidationReport(not violations, violations)


def _ternary_min(fn, lo: float, hi: float, iters: int = 60):
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if fn(m1) <= fn(m2):
            hi = m2
        else:
            lo = m1
    mid = 0.5 * (lo + hi)
    return mid, fn(mid)


def validate_transversal(f: PatchyField, n_samples: int = N_BOUNDARY_SAMPLES,
                         margin_min: float = TRANSVERSAL_MARGIN,
                         rng=None) -> ValidationReport:
    """Check that each field crosses every higher patch's edge lines
    non-tangentially on the closure of its effective region."""
    violations = []
    min_margin = math.inf
    all_vs = np.vstack([p.domain.vertices for p in f.patches])
    span = float(np.max(np.ptp(all_vs, axis=0))) * 2.0 + 1.0
    for patch in f.patches:
        region = f.effective_region(patch.index)
        for hp in f.higher_patches(patch.index):
            for i in range(hp.domain.num_edges):
                a, b, nrm = hp.domain.edge(i)
                d = (b - a) / np.hypot(b[0] - a[0], b[1] - a[1])
                long_seg = (a - span * d, a + span * d)
                inside = clip_segment(long_seg, patch.domain, ClipMode.INSIDE, f.tol)
                kept = []
                for s in inside:
                    parts = [s]
                    for other in f.higher_patches(patch.index):
                        if other.index == hp.index:
                            continue
                        parts = [q for piece in parts
                                 for q in clip_segment(piece, other.domain,
                                                       ClipMode.OUTSIDE, f.tol)]
                    kept.extend(parts)
                for sub in kept:
                    pts = _edge_samples(sub[0], sub[1], n_samples, rng)
                    inner = [float(np.dot(patch.g(p), nrm)) for p in pts]
                    worst = min(abs(v) for v in inner)
                    sign_change = any(u * v <= 0.0 for u, v in zip(inner, inner[1:]))
                    if sign_change:
                        worst = 0.0
                    min_margin = min(min_margin, worst)
                    if worst < margin_min:
                        k = int(np.argmin(np.abs(inner)))
                        violations.append(Violation(
                            patch.index, np.asarray(pts[k], dtype=float),
                            f"field tangent to edge line {i} of patch {hp.index} "
                            f"on the effective region closure", worst))
    details = {"min_margin": None if math.isinf(min_margin) else min_margin}
    return ValidationReport(not violations, violations, details)


def _refine_zero(patch: Patch, p0, tol_geo: float):
    """Newton iteration toward a field zero from p0; returns the refined
    point and norm if it stays inside the patch, else the start values."""
    p = np.asarray(p0, dtype=float).copy()
    best_p, best = p.copy(), float(np.hypot(*patch.g(p)))
    for _ in range(25):
        g = patch.g(p)
        if hasattr(patch.field, "jacobian"):
            j = patch.field.jacobian(p)
        else:
            eps = 1e-7
            j = np.column_stack([
                (np.asarray(patch.field((p[0] + eps, p[1])), float) - g) / eps,
                (np.asarray(patch.field((p[0], p[1] + eps)), float) - g) / eps])
        try:
            step = np.linalg.solve(j, -g)
        except np.linalg.LinAlgError:
            break
        q = p + np.clip(step, -0.5, 0.5)
        if not patch.domain.contains(q, tol_geo):
            break
        p = q
        nrm = float(np.hypot(*patch.g(p)))
        if nrm < best:
            best_p, best = p.copy(), nrm
        if nrm < 1e-14:
            break
    return best_p, best


def validate_nonzero(f: PatchyField, m: float, grid: int = 48) -> ValidationReport:
    """Check ||g_alpha|| >= m on a grid over each patch domain, with a
    Newton refinement from the worst grid point to catch interior zeros
    between grid nodes."""
    if m <= 0.0:
        raise ValueError("the lower bound m must be positive")
    violations = []
    min_norm = math.inf
    for patch in f.patches:
        vs = patch.domain.vertices
        x0, x1 = vs[:, 0].min(), vs[:, 0].max()
        y0, y1 = vs[:, 1].min(), vs[:, 1].max()
        xs, ys = np.meshgrid(np.linspace(x0, x1, grid), np.linspace(y0, y1, grid))
        pts = np.column_stack([xs.ravel(), ys.ravel()])
        mask = patch.domain.contains_many(pts, f.tol)
        worst_p, worst = None, math.inf
        for p in pts[mask]:
            nrm = float(np.hypot(*patch.g(p)))
            if nrm < worst:
                worst, worst_p = nrm, p
        if worst_p is not None and worst < 10 * m:
            worst_p, worst = _refine_zero(patch, worst_p, f.tol)
        min_norm = min(min_norm, worst)
        if worst < m:
            violations.append(Violation(
                patch.index, np.asarray(worst_p, dtype=float),
                f"field norm {worst:.3g} below bound {m:.3g}", worst))
    return ValidationReport(not violations, violations, {"min_norm": min_norm})


def validate_all(f: PatchyField, m: float = 1e-3, rng=None) -> dict:
    return {
        "inward": validate_inward(f, rng=rng),
        "transversal": validate_transversal(f, rng=rng),
        "nonzero": validate_nonzero(f, m),
    }
