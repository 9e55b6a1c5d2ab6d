"""Write the bundled scenario files into ../scenarios.

Histories given as functions are sampled into Hermite breakpoint data, so
the files are self-contained.  Re-running reproduces them byte for byte.
"""

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "scenarios"


def hermite(fun, dfun, lo, npts=11):
    b = np.linspace(lo, 0.0, npts)
    return {
        "breaks": b.tolist(),
        "values": [list(np.atleast_1d(fun(t)).astype(float)) for t in b],
        "slopes": [list(np.atleast_1d(dfun(t)).astype(float)) for t in b],
    }


def grid(n, m, M, N, h):
    return {"n": n, "m": m, "M": M, "N": N, "h": h}


SCALAR_DELAY = {
    "grid": grid(1, 1, 1, 2, 1.0),
    "cone": {"signs": ["free"]},
    "dynamics": {"f": ["0"], "g": [["x1"]], "xi0": {"constant": [1.0]}, "x0": [1.0]},
}

SCENARIOS = {
    # the delayed state scales the jump: x jumps by 2 at t = 0.5
    "single_atom": {
        **SCALAR_DELAY,
        "control": {"impulse": {"mu": {"atoms": [[0.5, 2.0]]}, "from_measure": True}},
        "numerics": {"probes": [0.25, 0.5, 0.75, 1.1, 1.3, 1.5, 1.7, 1.9, 1.95, 2.0]},
    },
    # atoms at the same parameter in both blocks
    "two_atom": {
        **SCALAR_DELAY,
        "control": {"impulse": {"mu": {"atoms": [[0.5, 1.0], [1.5, -0.5]]}, "from_measure": True}},
    },
    "frozen": {
        "grid": grid(2, 1, 1, 3, 0.5),
        "cone": {"signs": ["+"]},
        "dynamics": {"f": ["0", "0"], "g": [["0", "0"]], "xi0": {"constant": [1.0, -2.0]}, "x0": [1.0, -2.0]},
        "control": {"impulse": {"mu": {"atoms": [[0.7, 1.0]]}, "from_measure": True}},
    },
    "strict_density": {
        "grid": grid(1, 1, 1, 2, 1.0),
        "cone": {"signs": ["free"]},
        "dynamics": {
            "f": ["-0.5*x0+0.3*x1"],
            "g": [["1+0.2*sin(x1)"]],
            "xi0": hermite(lambda t: np.cos(t), lambda t: -np.sin(t), -1.0),
            "x0": [1.0],
        },
        "control": {"strict": {"density": {"breaks": [0.0, 0.5, 1.2, 2.0], "values": [[0.4], [-0.8], [1.1]]}}},
    },
    # overlapping atoms with an explicit attached family that changes sign
    "attached_order": {
        **SCALAR_DELAY,
        "control": {
            "impulse": {
                "mu": {"atoms": [[0.5, 1.0], [1.5, 2.0]]},
                "nu": {"atoms": [[0.5, 2.0], [1.5, 2.0]]},
                "attached": [
                    {
                        "r": 0.5,
                        "omega": [
                            {"breaks": [0.0, 0.5, 1.0], "values": [[3.0], [-1.0]]},
                            {"breaks": [0.0, 0.5, 1.0], "values": [[1.0], [3.0]]},
                        ],
                    }
                ],
            }
        },
    },
    # any full-budget control is optimal, x(T) = 0
    "budget": {
        "grid": grid(1, 1, 1, 2, 1.0),
        "cone": {"signs": ["+"]},
        "dynamics": {"f": ["0"], "g": [["-1"]], "xi0": {"constant": [1.0]}, "x0": [1.0]},
        "problem": {"Phi": "x", "C": 1.0},
    },
    "budget_zero": {
        "grid": grid(1, 1, 1, 2, 1.0),
        "cone": {"signs": ["+"]},
        "dynamics": {
            "f": ["-0.5*x0+0.2*x1"],
            "g": [["-1"]],
            "xi0": hermite(lambda t: 1 + 0.3 * np.sin(2 * t), lambda t: 0.6 * np.cos(2 * t), -1.0),
            "x0": [1.0],
        },
        "problem": {"Phi": "x", "C": 0.0},
    },
    "decay": {
        "grid": grid(1, 1, 1, 2, 1.0),
        "cone": {"signs": ["+"]},
        "dynamics": {
            "f": ["-0.5*x0+0.2*x1"],
            "g": [["1+0.5*tanh(x0)"]],
            "xi0": hermite(lambda t: 1 + 0.3 * np.sin(2 * t), lambda t: 0.6 * np.cos(2 * t), -1.0),
            "x0": [1.0],
        },
        "problem": {"Phi": "-x", "C": 1.0},
    },
    "tracking_free_sign": {
        "grid": grid(1, 1, 1, 2, 1.0),
        "cone": {"signs": ["free"]},
        "dynamics": {
            "f": ["-x0+0.5*sin(x1)"],
            "g": [["1+0.3*x1"]],
            "xi0": hermite(np.cos, lambda t: -np.sin(t), -1.0),
            "x0": [0.0],
        },
        "problem": {"Phi": "(x-2)^2", "C": 0.8},
    },
    "two_state": {
        "grid": grid(2, 2, 2, 3, 0.5),
        "cone": {"signs": ["+", "+"]},
        "dynamics": {
            "f": ["-0.3*x0_0+0.2*x2_1", "0.1*x0_0-0.4*x0_1+0.1*x1_0"],
            "g": [["1", "0.2*x0_1"], ["0.1*sin(x0_0)", "1"]],
            "xi0": hermite(
                lambda t: np.array([1 + 0.2 * t, 0.5 * np.cos(t)]),
                lambda t: np.array([0.2, -0.5 * np.sin(t)]),
                -1.0,
            ),
            "x0": [1.0, 0.5],
        },
        "problem": {"Phi": "x0^2+(x1-1.5)^2", "C": 1.2},
    },
    "delay_coupled": {
        "grid": grid(1, 1, 1, 2, 1.0),
        "cone": {"signs": ["-"]},
        "dynamics": {"f": ["0"], "g": [["x1"]], "xi0": {"constant": [1.0]}, "x0": [1.0]},
        "problem": {"Phi": "x", "C": 1.0},
    },
    "capped": {
        "grid": grid(1, 1, 1, 2, 1.0),
        "cone": {"signs": ["free"]},
        "dynamics": {"f": ["0"], "g": [["x1"]], "xi0": {"constant": [1.0]}, "x0": [1.0]},
        "problem": {"Phi": "-x", "C": 1.0, "target": {"box": {"lo": [None], "hi": [1.5]}}},
    },
    "infeasible_target": {
        "grid": grid(1, 1, 1, 2, 1.0),
        "cone": {"signs": ["-"]},
        "dynamics": {"f": ["0"], "g": [["x1"]], "xi0": {"constant": [1.0]}, "x0": [1.0]},
        "problem": {"Phi": "x", "C": 1.0, "target": {"box": {"lo": [5.0], "hi": [6.0]}}},
        "numerics": {"transcription": {"time_limit": 20.0}},
    },
}


def main():
    OUT.mkdir(exist_ok=True)
    for name, body in SCENARIOS.items():
        doc = {"name": name, **body}
        (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")
        print(f"wrote scenarios/{name}.json")


if __name__ == "__main__":
    main()
