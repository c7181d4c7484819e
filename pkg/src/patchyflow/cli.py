"""Command-line front end.

Subcommands: validate, simulate, shadow, rate, example14, figure. Exit
codes: 0 success, 1 scenario/schema error, 2 validation failure, 3 runtime
stage error. All outputs are CSV with 17 significant digits, byte-stable
across runs for a fixed scenario and flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import PatchyFlowError, ScenarioFormatError
from .field import validate_inward, validate_nonzero, validate_transversal
from .integrate import solve_forward, solve_perturbed, write_trajectory_csv
from .perturbation import total_variation
from .rates import example_1_4_sweep, rate_sweep
from .scenario import Scenario, load_scenario
from .shadow import OracleGrid, nearest_solution_oracle, shadow


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _write_rows(path: Path, header: str, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(c) if isinstance(c, (str, int)) else _fmt(c)
                              for c in row) + "\n")


def _parse_tv(spec: str):
    try:
        start, end, count = spec.split(":")
        start, end, count = float(start), float(end), int(count)
    except ValueError:
        raise ScenarioFormatError(f"bad --tv spec {spec!r}, want start:end:count")
    if count < 2 or start <= 0 or end <= 0:
        raise ScenarioFormatError("--tv needs positive bounds and count >= 2")
    return np.geomspace(start, end, count).tolist()


def cmd_validate(sc: Scenario, args, out: Path) -> int:
    f = sc.field()
    rng = np.random.default_rng(sc.seed if args.seed is None else args.seed)
    reports = {
        "inward": validate_inward(f, rng=rng),
        "transversal": validate_transversal(f, rng=rng),
        "nonzero": validate_nonzero(f, sc.nonzero_bound),
    }
    ok = True
    for name, rep in reports.items():
        status = "pass" if rep.passed else "fail"
        print(f"{name}: {status} ({len(rep.violations)} violation(s))")
        for v in rep.violations[:8]:
            print(f"  patch {v.patch_index} at ({v.location[0]:.6g},"
                  f" {v.location[1]:.6g}): {v.description}"
                  f" [margin {v.margin:.3g}]")
        ok = ok and rep.passed
    return 0 if ok else 2


def cmd_simulate(sc: Scenario, args, out: Path) -> int:
    f = sc.field()
    opts = sc.solver_options(args.h)
    traj = solve_forward(f, sc.x0, sc.t0, sc.t1, opts)
    write_trajectory_csv(traj, out / "trajectory.csv")
    w = sc.perturbation()
    print(f"forward: {len(traj.segments)} segment(s), end="
          f"({traj.end[0]:.6g}, {traj.end[1]:.6g})")
    if total_variation(w) > 0:
        forced = solve_perturbed(f, w, sc.x0, sc.t0, sc.t1, opts)
        write_trajectory_csv(forced, out / "trajectory_forced.csv")
        print(f"forced: tv={total_variation(w):.6g}, "
              f"{len(forced.jump_marks)} jump(s)")
    return 0


def cmd_shadow(sc: Scenario, args, out: Path) -> int:
    f = sc.field()
    opts = sc.solver_options(args.h)
    w = sc.perturbation()
    y = solve_perturbed(f, w, sc.x0, sc.t0, sc.t1, opts)
    res = shadow(f, y, w, opts)
    ts = y.sample_times()
    ys = y.sample_at(ts)
    xs = res.x.sample_at(ts)
    gaps = np.hypot(ys[:, 0] - xs[:, 0], ys[:, 1] - xs[:, 1])
    _write_rows(out / "shadow_pair.csv", "t,y_x,y_y,x_x,x_y,gap",
                [(t, a, b, c, d, g) for t, (a, b), (c, d), g
                 in zip(ts, ys, xs, gaps)])
    _write_rows(out / "shadow_stages.csv",
                "stage,budget_in,budget_out,fitted_constant,bound,time_shift,detail",
                [(s.name, s.budget_in, s.budget_out, s.constant, s.bound,
                  s.time_shift, s.detail.replace(",", ";")) for s in res.stagelog])
    print(f"sup_distance={_fmt(res.sup_distance)} tv={_fmt(total_variation(w))}"
          f" ratio={_fmt(res.sup_distance / max(total_variation(w), 1e-300))}")
    return 0


def cmd_rate(sc: Scenario, args, out: Path) -> int:
    f = sc.field()
    opts = sc.solver_options(args.h)
    tvs = _parse_tv(args.tv) if args.tv else sc.tv_list
    method = args.method
    table = rate_sweep(f, sc.jump_family(), tvs, method, sc.x0, sc.t0, sc.t1,
                       opts)
    _write_rows(out / f"rate_{method}.csv", "tv,distance,method",
                [(r.tv, r.distance if r.distance is not None else "nan",
                  r.method) for r in table.rows])
    line = (f"exponent={_fmt(table.fitted_exponent)} "
            f"constant={_fmt(table.fitted_constant)} "
            f"r2={_fmt(table.r_squared)}")
    (out / f"rate_{method}_fit.txt").write_text(line + "\n")
    print(line)
    return 0


def cmd_example14(sc: Scenario, args, out: Path) -> int:
    s = sc.example14()
    table = example_1_4_sweep(s, sc.eps_list())
    _write_rows(out / "example14.csv", "tv,distance,method",
                [(r.tv, r.distance if r.distance is not None else "nan",
                  r.method) for r in table.rows])
    line = (f"exponent={_fmt(table.fitted_exponent)} "
            f"constant={_fmt(table.fitted_constant)} "
            f"r2={_fmt(table.r_squared)} "
            f"target={_fmt(1.0 / (s.alpha * s.beta))}")
    (out / "example14_fit.txt").write_text(line + "\n")
    print(line)
    return 0


def cmd_figure(sc: Scenario, args, out: Path) -> int:
    wrote = []
    if sc.has_example14:
        s = sc.example14()
        rows = []
        for x1 in np.linspace(-0.5, 0.5, 201):
            rows.append(("curve1", x1, s.curve1(x1)))
        for x2 in np.linspace(0.0, 2.0, 201):
            rows.append(("curve2", s.curve2_x(x2), x2))
        _write_rows(out / "figure_curves.csv", "series,x,y", rows)
        rows = []
        for shift in (0.0, 0.05):
            tag = "tangent" if shift == 0.0 else "displaced"
            for x1 in np.linspace(-0.5, 0.5, 201):
                rows.append((tag, x1, s.curve1(x1) + shift))
        _write_rows(out / "figure_displaced.csv", "series,x,y", rows)
        wrote += ["figure_curves.csv", "figure_displaced.csv"]
    if sc.has_patches:
        f = sc.field()
        rows = []
        for patch in f.patches:
            vs = patch.domain.vertices
            for k, v in enumerate(vs):
                rows.append((patch.index, k, v[0], v[1]))
            rows.append((patch.index, len(vs), vs[0][0], vs[0][1]))
        _write_rows(out / "figure_patches.csv", "patch,vertex,x,y", rows)
        traj = solve_forward(f, sc.x0, sc.t0, sc.t1, sc.solver_options(args.h))
        write_trajectory_csv(traj, out / "figure_trajectory.csv")
        wrote += ["figure_patches.csv", "figure_trajectory.csv"]
    print("wrote: " + ", ".join(wrote))
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "shadow": cmd_shadow,
    "rate": cmd_rate,
    "example14": cmd_example14,
    "figure": cmd_figure,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="patchyflow",
        description="Patchy vector field engine: validation, integration, "
                    "shadowing and stability-rate experiments.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("scenario", help="scenario file (JSON, schema 1)")
    ap.add_argument("--tv", help="log-spaced sweep start:end:count")
    ap.add_argument("--method", choices=["shadow", "oracle"], default="shadow")
    ap.add_argument("--h", type=float, default=None, help="integrator step")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=".", help="output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        sc = load_scenario(args.scenario)
    except ScenarioFormatError as err:
        print(f"scenario error: {err}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](sc, args, out)
    except ScenarioFormatError as err:
        print(f"scenario error: {err}", file=sys.stderr)
        return 1
    except PatchyFlowError as err:
        stage = getattr(err, "stage", None) or type(err).__name__
        print(f"stage error [{stage}]: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
