"""Scenario files: a JSON-compatible schema (versioned, schema: 1) holding
the patch family, the forcing path, and the run parameters."""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ScenarioFormatError
from .field import Patch, PatchyField, SmoothFieldSpec
from .geometry import Polygon
from .integrate import SolverOptions
from .perturbation import BVPath, Jump
from .rates import Example14Scenario


@dataclass
class Scenario:
    name: str
    raw: dict
    path: Optional[str] = None

    # -- sections -----------------------------------------------------------

    @property
    def has_patches(self) -> bool:
        return bool(self.raw.get("patches"))

    @property
    def has_example14(self) -> bool:
        return "example14" in self.raw

    def field(self) -> PatchyField:
        if not self.has_patches:
            raise ScenarioFormatError(
                f"scenario {self.name!r} declares no patches")
        patches = []
        for spec in self.raw["patches"]:
            fs = spec["field"]
            field = SmoothFieldSpec(
                constant=fs.get("constant", [0.0, 0.0]),
                linear=fs.get("linear"),
                quadratic=fs.get("quadratic"))
            patches.append(Patch(
                index=int(spec["index"]),
                domain=Polygon(spec["polygon"]),
                field=field,
                inward_exempt_edges=frozenset(spec.get("inward_exempt_edges", []))))
        return PatchyField(patches)

    def perturbation(self) -> BVPath:
        spec = self.raw.get("perturbation")
        if not spec:
            return BVPath()
        jumps = [Jump(j["time"], j["displacement"]) for j in spec.get("jumps", [])]
        drift = spec.get("drift")
        if drift and drift.get("rates"):
            return BVPath(jumps, drift["times"], drift["rates"])
        return BVPath(jumps)

    def jump_family(self):
        """Single-jump family: tv -> forcing path with one jump of size tv in
        the configured direction at the configured time."""
        run = self.raw.get("run", {})
        t_jump = float(run.get("jump_time", 0.5 * (self.t0 + self.t1)))
        d = np.asarray(run.get("jump_direction", [0.0, 1.0]), dtype=float)
        n = float(np.hypot(d[0], d[1]))
        if n == 0:
            raise ScenarioFormatError("jump_direction must be nonzero")
        d = d / n

        def family(tv: float) -> BVPath:
            return BVPath([Jump(t_jump, tv * d)])
        return family

    def example14(self) -> Example14Scenario:
        if not self.has_example14:
            raise ScenarioFormatError(
                f"scenario {self.name!r} has no tangential-curves section")
        e = self.raw["example14"]
        return Example14Scenario(alpha=float(e["alpha"]), beta=float(e["beta"]))

    def eps_list(self):
        e = self.raw.get("example14", {})
        return [float(v) for v in e.get("eps_list",
                                        np.logspace(-2.0, -1.2, 6).tolist())]

    # -- run parameters -------------------------------------------------------

    @property
    def run(self) -> dict:
        return self.raw.get("run", {})

    @property
    def t0(self) -> float:
        return float(self.run.get("t0", 0.0))

    @property
    def t1(self) -> float:
        return float(self.run.get("t1", 1.0))

    @property
    def x0(self):
        return np.asarray(self.run.get("x0", [0.0, 0.0]), dtype=float)

    @property
    def seed(self) -> int:
        return int(self.run.get("seed", 0))

    @property
    def tv_list(self):
        return [float(v) for v in self.run.get(
            "tv_list", [1e-2, 3e-3, 1e-3, 3e-4, 1e-4])]

    def solver_options(self, h_override: Optional[float] = None) -> SolverOptions:
        h = float(self.run.get("h", 1e-3)) if h_override is None else h_override
        return SolverOptions(h=h)

    @property
    def nonzero_bound(self) -> float:
        return float(self.run.get("nonzero_bound", 1e-3))


_REQUIRED_PATCH_KEYS = {"index", "polygon", "field"}


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ScenarioFormatError(f"scenario file not found: {p}")
    except json.JSONDecodeError as err:
        raise ScenarioFormatError(f"scenario file {p} is not valid JSON: {err}")
    return parse_scenario(raw, name=p.stem, path=str(p))


def parse_scenario(raw: dict, name: str = "inline",
                   path: Optional[str] = None) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioFormatError("scenario must be a JSON object")
    if raw.get("schema") != 1:
        raise ScenarioFormatError("scenario must declare schema: 1")
    if not raw.get("patches") and "example14" not in raw:
        raise ScenarioFormatError(
            "scenario needs a patches list or an example14 section")
    for spec in raw.get("patches", []):
        missing = _REQUIRED_PATCH_KEYS - set(spec)
        if missing:
            raise ScenarioFormatError(f"patch entry missing keys: {sorted(missing)}")
        if len(spec["polygon"]) < 3:
            raise ScenarioFormatError("patch polygon needs at least 3 vertices")
    idxs = [p["index"] for p in raw.get("patches", [])]
    if len(set(idxs)) != len(idxs):
        raise ScenarioFormatError("patch indices must be distinct")
    sc = Scenario(raw.get("name", name), raw, path)
    # construction errors (bad polygons, bad coefficients) are schema errors
    if sc.has_patches:
        try:
            sc.field()
        except ScenarioFormatError:
            raise
        except Exception as err:
            raise ScenarioFormatError(f"invalid patch data: {err}")
    if sc.has_example14:
        try:
            sc.example14()
        except Exception as err:
            raise ScenarioFormatError(f"invalid tangential-curves data: {err}")
    return sc
