"""Optimal impulses under a variation budget.

Solves the budget scenario (drive ``x`` down with ``g = -1`` and a
nonnegative control) for several budgets ``C`` and prints the optimal
value, which should be ``x0 - C``, the mass of the recovered control and
the Maximum Principle verdict.  Any nonnegative control of mass ``C`` is
optimal here, so the solver may return a density instead of atoms.

    python scripts/optimize_budget.py
"""

from dataclasses import replace
from pathlib import Path

from impdelay import TranscriptionConfig, certify, extended_to_impulse, load_scenario, solve_pext

ROOT = Path(__file__).resolve().parent.parent


def main():
    sc = load_scenario(ROOT / "scenarios" / "budget.json")
    cfg = TranscriptionConfig(K=100)
    x0 = float(sc.dyn.x0[0])
    print(f"{'C':>5} {'objective':>11} {'x0 - C':>8} {'v(T)':>8} {'mu mass':>8} {'PMP':>5}  atoms")
    for C in (0.0, 0.25, 0.5, 1.0, 2.0):
        pb = replace(sc.problem, C=C, _cache={})
        res = solve_pext(sc.dyn, pb, sc.cone, cfg)
        proc = extended_to_impulse(res.ep)
        _, ext, imp = certify(res.ep, pb, sc.cone, 1e-3)
        atoms = ", ".join(f"{t:.3f}:{a[0]:.3f}" for t, a in zip(proc.control.mu.atom_times, proc.control.mu.atom_masses))
        verdict = "pass" if ext.ok and imp.ok else "fail"
        mass = float(proc.control.mu.total()[0])
        print(f"{C:5.2f} {res.objective:11.6f} {x0 - C:8.4f} {res.ep.beta_end:8.4f} {mass:8.4f} {verdict:>5}  {atoms or '-'}")


if __name__ == "__main__":
    main()
