"""Same measures, different attached controls, different endpoints.

For ``x'(t) = x(t - h) u'(t)`` with atoms of mass 1 at ``0.5`` and ``1.5``
both atoms share the parameter ``r = 0.5``.  During the jump the second
block reads the first block's jump arc through the delay, so the order in
which the two blocks move changes ``x(T)`` although ``mu`` and ``nu`` are
identical.  Without delay coupling the order would not matter.

    python scripts/delay_impulse_phenomenon.py
"""

import numpy as np

from impdelay import ImpulseControl, VectorMeasure, simulate_impulse, validate_impulse_control
from impdelay.measures import AttachedFamily, StepFunction, tv_measure
from impdelay.dynamics import DelayDynamics, HermiteHistory


def control(first_block: int) -> ImpulseControl:
    h, N = 1.0, 2
    mu = VectorMeasure.atoms(N * h, [0.5, 1.5], [[1.0], [1.0]])
    half = np.array([0.0, 0.5, 1.0])
    on, off = StepFunction(half, [[2.0], [0.0]]), StepFunction(half, [[0.0], [2.0]])
    fams = (on, off) if first_block == 1 else (off, on)
    return ImpulseControl(mu, tv_measure(mu), AttachedFamily(h, N, {0.5: fams}), N, 1, h)


def main():
    dyn = DelayDynamics(1, 1, 1, 2, 1.0, ["0"], [["x1"]], HermiteHistory.constant([1.0], -1.0), [1.0])
    for first in (1, 2):
        c = control(first)
        assert validate_impulse_control(c).ok
        traj, arcs = simulate_impulse(c, dyn)
        print(f"block {first} moves first: x(T) = {traj.x(dyn.T)[0][0]:.6f}")
        for t, pre, post, vp, vq in traj.jump_table():
            print(f"  jump at t={t:.2f}: x {pre[0]:.4f} -> {post[0]:.4f}, v {vp:.2f} -> {vq:.2f}")


if __name__ == "__main__":
    main()
