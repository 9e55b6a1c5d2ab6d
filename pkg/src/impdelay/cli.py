"""Command line: scenario files in, CSV/JSON artifacts and a manifest out.

Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 infeasible
problem or failed check.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .adjoint_pmp import ImpulseMultipliers, certify
from .equivalence import (
    InvalidImpulseControl,
    canonical_process,
    extended_to_impulse,
    gc_solution,
    roundtrip,
    simulate_impulse,
    strict_sense_approximation,
)
from .expr import DomainError
from .extsys import NumericalFailure, integrate_acs
from .graphcomp import ExtendedControl, canonicalize
from .optimize import InfeasibleProblem, solve_pext
from .scenario import SCHEMA, Scenario, ScenarioError, load_scenario

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_FAILED = 0, 2, 3, 4
OUT_ENV = "IMPDELAY_OUT"


class _Run:
    """Output directory plus the manifest being collected."""

    def __init__(self, command: str, out: Path, scenario_path: str | None):
        self.command = command
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self.info: dict = {}
        self.scenario_path = scenario_path
        self._t = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return p

    def write_json(self, name: str, data) -> None:
        self.path(name).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

    def lap(self, key: str) -> None:
        now = time.perf_counter()
        self.timings[key] = now - self._t
        self._t = now

    def manifest(self, scenario: Scenario | None, status: int) -> None:
        files = []
        for name in sorted(set(self.files)):
            data = (self.out / name).read_bytes()
            files.append({"name": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        doc = {
            "command": self.command,
            "exit_code": status,
            "scenario": None
            if scenario is None
            else {"path": self.scenario_path, "name": scenario.name, "sha256": scenario.digest, "seed": scenario.seed},
            "versions": {
                "impdelay": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "settings": self.info,
            "timings": self.timings,
            "files": files,
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _sample_times(T: float, samples: int, extra=()) -> np.ndarray:
    return np.unique(np.clip(np.concatenate([np.linspace(0.0, T, samples), np.asarray(extra, float)]), 0.0, T))


def _numerics(sc: Scenario, args):
    substeps = args.substeps if getattr(args, "substeps", None) else sc.numerics.substeps
    return substeps, sc.numerics.max_step


def _need(cond: bool, what: str):
    if not cond:
        raise ScenarioError(what, "required by this command")


def _process(sc: Scenario, args):
    """Canonical extended process of the scenario control."""
    substeps, max_step = _numerics(sc, args)
    if isinstance(sc.control, ExtendedControl):
        return canonical_process(integrate_acs(sc.control, sc.dyn, substeps, max_step))
    from .equivalence import impulse_to_extended

    return impulse_to_extended(sc.control, sc.dyn, substeps, max_step, sc.numerics.tol)


def _write_trajectory(run: _Run, traj, arcs, T: float, samples: int) -> dict:
    jt = traj.jump_table()
    times = _sample_times(T, samples, [r[0] for r in jt])
    traj.write_csv(run.path("trajectory.csv"), times)
    traj.write_jump_csv(run.path("jumps.csv"), arcs)
    arcdir = run.out / "arcs"
    arcdir.mkdir(exist_ok=True)
    for name in arcs.write_csv(arcdir):
        run.files.append(f"arcs/{name}")
    traj.ep.write_csv(run.path("extended.csv"))
    return {
        "x_T": traj.x(T)[0].tolist(),
        "v_T": float(traj.v(T)[0]),
        "jumps": [{"t": t, "pre": a.tolist(), "post": b.tolist(), "v_pre": c, "v_post": d} for t, a, b, c, d in jt],
    }


def cmd_simulate(sc: Scenario, run: _Run, args) -> int:
    _need(sc.control is not None, "control")
    substeps, max_step = _numerics(sc, args)
    run.info.update(substeps=substeps, max_step=max_step)
    if isinstance(sc.control, ExtendedControl):
        ep = _process(sc, args)
        traj = gc_solution(ep)
        from .equivalence import JumpArcSet

        arcs = JumpArcSet.from_process(traj.ep)
    else:
        traj, arcs = simulate_impulse(sc.control, sc.dyn, substeps, max_step)
    run.lap("simulate")
    summary = _write_trajectory(run, traj, arcs, sc.dyn.T, sc.numerics.samples)
    run.write_json("summary.json", summary)
    run.lap("write")
    print(f"x(T) = {summary['x_T']}, v(T) = {summary['v_T']:.12g}, {len(summary['jumps'])} jump(s)")
    return EXIT_OK


def cmd_roundtrip(sc: Scenario, run: _Run, args) -> int:
    _need(sc.control is not None, "control")
    substeps, max_step = _numerics(sc, args)
    tol = args.tol if args.tol is not None else sc.numerics.tol
    run.info.update(substeps=substeps, max_step=max_step, tol=tol)
    c = sc.control
    if isinstance(c, ExtendedControl):
        c = extended_to_impulse(canonicalize(c), sc.dyn)
    back, res = roundtrip(c, sc.dyn, substeps, max_step, tol)
    run.lap("roundtrip")
    worst = max(res["mu"], res["nu"], res["attached"], res["validation"])
    report = {"residuals": res, "worst": worst, "tol": tol, "passed": worst <= tol}
    run.write_json("roundtrip.json", report)
    run.write_json("control_out.json", back.to_json())
    print(f"round trip worst residual {worst:.3e} (tol {tol:g}): {'PASS' if worst <= tol else 'FAIL'}")
    return EXIT_OK if worst <= tol else EXIT_FAILED


def cmd_approximate(sc: Scenario, run: _Run, args) -> int:
    _need(sc.control is not None, "control")
    substeps, max_step = _numerics(sc, args)
    imax = args.imax
    run.info.update(substeps=substeps, max_step=max_step, imax=imax)
    ep = _process(sc, args)
    traj = gc_solution(ep)
    T = sc.dyn.T
    jump_times = [r[0] for r in traj.jump_table()]
    probes = list(sc.numerics.probes) or [(k + 0.37) * T / 10 for k in range(10)]
    # convergence holds off the atoms; probes on them are reported, not used
    excluded = [t for t in probes if any(abs(t - a) <= 1e-12 * max(1.0, T) for a in jump_times)]
    used = np.array([t for t in probes if t not in excluded])
    ref = traj.x(used) if used.size else np.zeros((0, sc.dyn.n))
    rows = []
    for i in range(1, imax + 1):
        ap = strict_sense_approximation(ep, sc.dyn, i, substeps, max_step)
        err = np.abs(ap.trajectory.x(used) - ref).max(axis=1) if used.size else np.zeros(0)
        rows.append((i, err))
    run.lap("approximate")
    with open(run.path("approximation.csv"), "w", newline="") as fh:
        fh.write(",".join(["i"] + [f"err_t={float(t)!r}" for t in used] + ["max"]) + "\n")
        for i, err in rows:
            fh.write(",".join([str(i)] + [repr(float(e)) for e in err] + [repr(float(err.max(initial=0.0)))]) + "\n")
    run.write_json(
        "approximation.json",
        {"probes": used.tolist(), "excluded": excluded, "max_error": [float(e.max(initial=0.0)) for _, e in rows]},
    )
    for t in excluded:
        print(f"probe t={t:g} lies on an atom and is excluded")
    print(f"max probe error at i={imax}: {rows[-1][1].max(initial=0.0):.3e}")
    return EXIT_OK


def cmd_optimize(sc: Scenario, run: _Run, args) -> int:
    _need(sc.problem is not None, "problem")
    cfg = sc.numerics.transcription
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.substeps:
        cfg = replace(cfg, substeps=args.substeps)
    restarts = args.restarts
    run.info.update(K=cfg.K, substeps=cfg.substeps, seed=cfg.seed, restarts=restarts)
    try:
        res = solve_pext(sc.dyn, sc.problem, sc.cone, cfg, restarts=restarts)
    except InfeasibleProblem as exc:
        run.lap("optimize")
        r = exc.result
        r.write_trace(run.path("trace.csv"))
        run.write_json("stall_report.json", {"status": r.status, "residuals": r.residuals, "objective": r.objective})
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_FAILED
    run.lap("optimize")
    proc = extended_to_impulse(res.ep)
    res.write_trace(run.path("trace.csv"))
    run.write_json("extended_control.json", res.ec.to_json())
    run.write_json("impulse_control.json", proc.control.to_json())
    summary = _write_trajectory(run, proc.trajectory, proc.arcs, sc.dyn.T, sc.numerics.samples)
    run.write_json(
        "result.json",
        {
            "objective": res.objective,
            "residuals": res.residuals,
            "status": res.status,
            "seed": res.seed,
            "multipliers": res.multipliers,
            "x_T": summary["x_T"],
            "v_T": summary["v_T"],
            "jumps": summary["jumps"],
        },
    )
    # the same scenario with the optimal control, ready for check-pmp
    cand = dict(sc.raw)
    cand["control"] = {"extended": res.ec.to_json()}
    num = dict(cand.get("numerics", {}))
    num.update(substeps=res.ep.substeps, max_step=res.ep.max_step)
    cand["numerics"] = num
    run.write_json("candidate_scenario.json", cand)
    run.lap("write")
    print(f"objective {res.objective:.10g} ({res.status}), residuals {res.residuals}")
    return EXIT_OK


def cmd_check_pmp(sc: Scenario, run: _Run, args) -> int:
    _need(sc.control is not None, "control")
    _need(sc.problem is not None, "problem")
    tol = args.tol if args.tol is not None else sc.numerics.tol_pmp
    run.info.update(tol=tol)
    ep = _process(sc, args)
    mult, ext, imp = certify(ep, sc.problem, sc.cone, tol)
    run.lap("certify")
    run.path("pmp_extended.json").write_text(ext.dumps() + "\n")
    run.path("pmp_impulse.json").write_text(imp.dumps() + "\n")
    mult.write_csv(run.path("multipliers_extended.csv"))
    im = ImpulseMultipliers(mult, ep)
    im.write_csv(run.path("multipliers_impulse.csv"), _sample_times(sc.dyn.T, sc.numerics.samples))
    run.write_json("multipliers.json", {"lambda": mult.lam, "d": mult.d, "c": mult.c, "normal": np.asarray(mult.normal).tolist()})
    run.lap("write")
    print(ext.summary())
    print(imp.summary())
    return EXIT_OK if (ext.ok and imp.ok) else EXIT_FAILED


COMMANDS = {
    "simulate": cmd_simulate,
    "roundtrip": cmd_roundtrip,
    "approximate": cmd_approximate,
    "optimize": cmd_optimize,
    "check-pmp": cmd_check_pmp,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impdelay", description="Impulsive control of delay systems.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("simulate", "impulse solution, jump table and jump arcs"),
        ("roundtrip", "impulse -> extended -> impulse residuals"),
        ("approximate", "strict-sense approximating sequence errors"),
        ("optimize", "solve the Mayer problem by direct transcription"),
        ("check-pmp", "fit multipliers and check the maximum principle"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./impdelay-out)")
        p.add_argument("--substeps", type=int, help="RK4 substeps per cell")
        if name in ("roundtrip", "check-pmp"):
            p.add_argument("--tol", type=float, help="pass/fail tolerance")
        if name == "approximate":
            p.add_argument("--imax", type=int, default=12, help="last refinement index")
        if name == "optimize":
            p.add_argument("--seed", type=int, help="seed of the first restart")
            p.add_argument("--restarts", type=int, default=1, help="independent restarts")
    sc = sub.add_parser("schema", help="print the scenario JSON schema")
    sc.add_argument("--out", help="write to this file instead of stdout")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        text = json.dumps(SCHEMA, indent=2) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    for key in ("substeps", "imax", "restarts"):
        v = getattr(args, key, None)
        if v is not None and v < 1:
            print(f"error: --{key} must be positive", file=sys.stderr)
            return EXIT_INPUT
    out = Path(args.out or os.environ.get(OUT_ENV) or "impdelay-out")
    sc = None
    run = _Run(args.command, out, args.scenario)
    try:
        sc = load_scenario(args.scenario)
        run.lap("load")
        status = COMMANDS[args.command](sc, run, args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_INPUT
    except InvalidImpulseControl as exc:
        print(f"error: control: {exc}", file=sys.stderr)
        status = EXIT_INPUT
    except (NumericalFailure, DomainError, ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        status = EXIT_NUMERIC
    run.manifest(sc, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
