"""Strict-sense controls converging to an impulse control.

For each refinement index ``i`` the time change of the canonical process
gets slope ``2**-i`` on its plateaus, which turns every atom into a steep
density.  The table lists the endpoint error and the L1 error of ``x`` on
``[0, T]`` (sampled, so it levels off at the sample spacing); the total
variation stays equal to ``nu([0, T])``.

    python scripts/density_sequence.py [scenario.json]
"""

import sys
from pathlib import Path

import numpy as np

from impdelay import gc_solution, impulse_to_extended, load_scenario, strict_sense_approximation

ROOT = Path(__file__).resolve().parent.parent


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else ROOT / "scenarios" / "two_atom.json"
    sc = load_scenario(path)
    ep = impulse_to_extended(sc.control, sc.dyn)
    T = sc.dyn.T
    t = np.linspace(0.0, T, 2001)
    ref = gc_solution(ep).x(t)
    print(f"{'i':>3} {'|x_i(T)-x(T)|':>15} {'L1 error':>12} {'v_i(T)':>10}")
    for i in range(1, 13):
        ap = strict_sense_approximation(ep, sc.dyn, i)
        x = ap.trajectory.x(t)
        end = float(np.abs(x[-1] - ref[-1]).max())
        l1 = float(np.abs(x - ref).max(axis=1).mean() * T)
        print(f"{i:3d} {end:15.3e} {l1:12.4e} {ap.ep.beta_end:10.6f}")
    print(f"nu([0, T]) = {sc.control.nu.total():.6f}")


if __name__ == "__main__":
    main()
