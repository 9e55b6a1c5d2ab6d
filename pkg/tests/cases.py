"""Shared builders for the tests: bundled scenarios and random controls."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from impdelay import DelayDynamics, HermiteHistory, ImpulseControl, VectorMeasure, load_scenario
from impdelay.measures import AttachedFamily, ScalarMeasure, StepFunction

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def scenario(name: str):
    return load_scenario(SCENARIOS / f"{name}.json")


def scalar_delay(f="0", g="x1", x0=1.0, N=2, h=1.0) -> DelayDynamics:
    return DelayDynamics(1, 1, 1, N, h, [f], [[g]], HermiteHistory.constant([x0], -h), [x0])


def smooth_dyn(n: int, m: int, M: int, N: int, h: float) -> DelayDynamics:
    """Mildly nonlinear coupled dynamics of any size, smooth history."""
    f, g = [], []
    for i in range(n):
        terms = [f"-0.4*x0_{i}"] + [f"0.2*x{k}_{(i + k) % n}" for k in range(1, M + 1)]
        f.append("+".join(terms) if n > 1 or M == 0 else terms[0] + "+0.2*x1")
    for j in range(m):
        g.append([f"1+0.3*sin(x{min(M, 1)}_{(i + j) % n})" if (i + j) % 2 == 0 else f"0.5*x0_{i}" for i in range(n)])
    if n == 1:
        f = [s.replace("_0", "") for s in f]
        g = [[s.replace("_0", "") for s in gj] for gj in g]
    xi = HermiteHistory.from_function(
        lambda t: np.array([1 + 0.2 * i + 0.3 * np.sin(t + i) for i in range(n)]),
        lambda t: np.array([0.3 * np.cos(t + i) for i in range(n)]),
        np.linspace(-max(M, 1) * h, 0.0, 9),
    )
    return DelayDynamics(n, m, M, N, h, f, g, xi, xi(0.0)[0])


def _sequential_family(r, blocks, masses, extras, N, m):
    """Attached controls at ``r`` run one block after another, constant speed."""
    norms = [float(np.abs(a).sum()) + e for a, e in zip(masses, extras)]
    V = sum(norms)
    pieces = []  # (block, length, value)
    for l, a, e in zip(blocks, masses, extras):
        na = float(np.abs(a).sum())
        pieces.append((l, na / V, a * V / na))
        if e > 0:
            bump = np.zeros(m)
            bump[0] = V
            pieces.append((l, e / (2 * V), bump))
            pieces.append((l, e / (2 * V), -bump))
    breaks = np.concatenate([[0.0], np.cumsum([p[1] for p in pieces])])
    breaks[-1] = 1.0
    fams = [None] * N
    for l in set(blocks):
        vals = np.array([p[2] if p[0] == l else np.zeros(m) for p in pieces])
        fams[l - 1] = StepFunction(breaks, vals)
    return r, tuple(fams)


def random_impulse_control(rng: np.random.Generator, N: int, M: int, m: int, h: float, max_atoms=4,
                           sequential=False, density=False) -> ImpulseControl:
    """Random valid impulse control in the whole space.

    Atoms may sit on grid times or share a parameter ``r`` across blocks.
    With ``sequential`` the attached controls at shared parameters run the
    blocks in a random order and carry extra variation (``nu > |mu|``).
    """
    T = N * h
    k = int(rng.integers(1, max_atoms + 1))
    rs = rng.uniform(0.05, 0.95, size=2) * h
    times = set()
    while len(times) < k:
        u = rng.random()
        if u < 0.2:
            times.add(float(rng.integers(0, N + 1) * h))
        else:
            r = rs[int(rng.integers(2))] if u < 0.7 else rng.uniform(0.02, 0.98) * h
            times.add(float(r + rng.integers(0, N) * h))
    times = np.array(sorted(times))
    masses = rng.uniform(-1.5, 1.5, size=(k, m))
    masses[np.abs(masses) < 0.05] = 0.3
    if density:
        breaks = np.unique(np.concatenate([[0.0, T], rng.uniform(0, T, 3)]))
        dens = rng.uniform(-1, 1, size=(breaks.size - 1, m))
    else:
        breaks, dens = np.array([0.0, T]), np.zeros((1, m))
    mu = VectorMeasure(T, times, masses, breaks, dens)
    if not sequential:
        return ImpulseControl.from_measure(mu, N, M, h)

    base = ImpulseControl.from_measure(mu, N, M, h)
    entries = dict(base.attached.entries)
    nu_mass = np.abs(masses).sum(axis=1)
    groups: dict[float, list] = {}
    for idx, t in enumerate(times):
        if base.grid_index(t) is None:
            l, r = base.block_of(t)
            key = next((q for q in groups if abs(q - r) <= 1e-12), r)
            groups.setdefault(key, []).append((l, idx))
    for r, items in groups.items():
        order = [items[i] for i in rng.permutation(len(items))]
        extras = rng.uniform(0, 0.5, size=len(order)) * (rng.random(len(order)) < 0.5)
        for (l, idx), e in zip(order, extras):
            nu_mass[idx] += e
        for key in list(entries):
            if abs(key - r) <= 1e-12:
                del entries[key]
        rr, fams = _sequential_family(r, [l for l, _ in order], [masses[i] for _, i in order], extras, N, m)
        entries[rr] = fams
    nu = ScalarMeasure(T, times, nu_mass[:, None], breaks, np.abs(dens).sum(axis=1, keepdims=True))
    return ImpulseControl(mu, nu, AttachedFamily(h, N, entries), N, M, h)
