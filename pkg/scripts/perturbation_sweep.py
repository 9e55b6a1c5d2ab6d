"""Maximum Principle residuals along a sweep of perturbed optimal controls.

The raw optimizer output of a smooth scenario is blended with the uniform
control, ``w' = (1 - d) w + d w_unif``, which keeps the clock and budget
constraints.  Multipliers are refitted at every point and the residuals of
(E) and (zero1) are printed; they should grow with ``d``.

    python scripts/perturbation_sweep.py [scenario.json]
"""

import sys
from pathlib import Path

import numpy as np

from impdelay import ExtendedControl, TranscriptionConfig, certify, integrate_acs, load_scenario, solve_pext

ROOT = Path(__file__).resolve().parent.parent


def blend(raw: ExtendedControl, delta: float, budget_share: float) -> ExtendedControl:
    S = raw.S
    w0 = (1 - delta) * raw.w0 + delta * raw.h / S
    w = (1 - delta) * raw.w + delta * budget_share / S
    return ExtendedControl(raw.h, raw.mesh, w0, w)


def sweep(path, deltas=(0.0, 1e-4, 1e-3, 1e-2, 1e-1), K: int = 200):
    sc = load_scenario(path)
    res = solve_pext(sc.dyn, sc.problem, sc.cone, TranscriptionConfig(K=K))
    N, m = sc.dyn.N, sc.dyn.m
    share = sc.problem.C / (N * m)
    rows = []
    for d in deltas:
        ep = integrate_acs(blend(res.raw, d, share), sc.dyn, 8, None)
        _, ext, _ = certify(ep, sc.problem, sc.cone, 1e-3)
        rows.append((d, ext["(E)"].residual, ext["(zero1)"].residual, sc.problem.cost(ep.y_end)))
    return rows


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else ROOT / "scenarios" / "decay.json"
    print(f"{'delta':>8} {'(E)':>12} {'(zero1)':>12} {'objective':>12}")
    for d, e, z, j in sweep(path):
        print(f"{d:8.0e} {e:12.4e} {z:12.4e} {j:12.6f}")


if __name__ == "__main__":
    main()
