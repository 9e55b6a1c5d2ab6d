"""Finitely atomic measures with piecewise-constant densities, and impulse controls.

A measure on ``[0, T]`` is a finite list of atoms plus a density that is
constant on the cells of a breakpoint mesh.  The l1 norm is used for vector
masses throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .cone import TOL_MEAS, ControlCone


def _time_tol(T: float) -> float:
    return 1e-12 * max(1.0, T)


@dataclass(frozen=True, eq=False)
class VectorMeasure:
    """Atoms ``(t_k, a_k)`` plus a density constant on ``breaks`` cells."""

    T: float
    atom_times: np.ndarray
    atom_masses: np.ndarray  # (k, m)
    breaks: np.ndarray  # (p+1,), from 0 to T
    density: np.ndarray  # (p, m)

    def __post_init__(self):
        t = np.asarray(self.atom_times, float).reshape(-1)
        a = np.asarray(self.atom_masses, float)
        b = np.asarray(self.breaks, float)
        d = np.asarray(self.density, float)
        if a.ndim == 1:
            a = a.reshape(t.size, -1) if t.size else a.reshape(0, max(d.shape[-1] if d.ndim == 2 else 1, 1))
        if d.ndim == 1:
            d = d[:, None]
        if a.shape[0] != t.size:
            raise ValueError("one mass row per atom time required")
        if a.shape[1] != d.shape[1]:
            raise ValueError("atom masses and density must share dimension m")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > self.T):
            raise ValueError("atom times must be strictly increasing inside [0, T]")
        if b.ndim != 1 or b.size < 2 or b[0] != 0.0 or abs(b[-1] - self.T) > _time_tol(self.T):
            raise ValueError("density breakpoints must run from 0 to T")
        if np.any(np.diff(b) <= 0) or d.shape[0] != b.size - 1:
            raise ValueError("density needs one value per mesh cell")
        b = b.copy()
        b[-1] = self.T
        object.__setattr__(self, "atom_times", t)
        object.__setattr__(self, "atom_masses", a)
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "density", d)
        cum = np.vstack([np.zeros((1, d.shape[1])), np.cumsum(d * np.diff(b)[:, None], axis=0)])
        object.__setattr__(self, "_cum", cum)

    # constructors ---------------------------------------------------------
    @classmethod
    def zero(cls, T: float, m: int) -> "VectorMeasure":
        return cls(T, np.zeros(0), np.zeros((0, m)), np.array([0.0, T]), np.zeros((1, m)))

    @classmethod
    def atoms(cls, T: float, times, masses, m: int | None = None) -> "VectorMeasure":
        masses = np.atleast_2d(np.asarray(masses, float)) if len(times) else np.zeros((0, m or 1))
        m = masses.shape[1]
        order = np.argsort(times)
        return cls(T, np.asarray(times, float)[order], masses[order], np.array([0.0, T]), np.zeros((1, m)))

    @classmethod
    def from_density(cls, T: float, breaks, density) -> "VectorMeasure":
        d = np.asarray(density, float)
        if d.ndim == 1:
            d = d[:, None]
        return cls(T, np.zeros(0), np.zeros((0, d.shape[1])), breaks, d)

    def with_atoms(self, times, masses) -> "VectorMeasure":
        """Add atoms (merging with existing ones at equal times)."""
        t = list(self.atom_times)
        a = [row.copy() for row in self.atom_masses]
        for ti, ai in zip(times, np.atleast_2d(np.asarray(masses, float))):
            hit = [k for k, tk in enumerate(t) if abs(tk - ti) <= _time_tol(self.T)]
            if hit:
                a[hit[0]] = a[hit[0]] + ai
            else:
                t.append(float(ti))
                a.append(ai)
        order = np.argsort(t)
        return VectorMeasure(
            self.T, np.asarray(t)[order], np.asarray(a).reshape(len(t), self.m)[order], self.breaks, self.density
        )

    # basic queries ---------------------------------------------------------
    @property
    def m(self) -> int:
        return self.density.shape[1]

    @property
    def has_atoms(self) -> bool:
        return bool(self.atom_times.size)

    def _density_integral(self, t):
        t = np.asarray(t, float)
        out = np.empty(t.shape + (self.m,))
        for j in range(self.m):
            out[..., j] = np.interp(t, self.breaks, self._cum[:, j])
        return out

    def _check_t(self, t):
        tol = _time_tol(self.T)
        if np.any(np.asarray(t) < -tol) or np.any(np.asarray(t) > self.T + tol):
            raise ValueError(f"time outside [0, {self.T}]")

    def distribution(self, t):
        """``u(t) = mu([0, t])`` (atoms at ``t`` included)."""
        self._check_t(t)
        t = np.asarray(t, float)
        tol = _time_tol(self.T)
        mask = self.atom_times[None, :] <= (t.reshape(-1, 1) + tol)
        atoms = (mask @ self.atom_masses).reshape(t.shape + (self.m,))
        return atoms + self._density_integral(t)

    def distribution_left(self, t):
        """``u^-(t) = mu([0, t))``; equals 0 at ``t = 0``."""
        self._check_t(t)
        t = np.asarray(t, float)
        tol = _time_tol(self.T)
        mask = self.atom_times[None, :] < (t.reshape(-1, 1) - tol)
        atoms = (mask @ self.atom_masses).reshape(t.shape + (self.m,))
        return atoms + self._density_integral(t)

    def total(self) -> np.ndarray:
        return self.atom_masses.sum(axis=0) + self._cum[-1]

    def atom_at(self, t: float) -> np.ndarray:
        hit = np.nonzero(np.abs(self.atom_times - t) <= _time_tol(self.T))[0]
        return self.atom_masses[hit[0]].copy() if hit.size else np.zeros(self.m)

    def density_at(self, t):
        """Right-continuous density value (last cell at ``T``)."""
        k = np.clip(np.searchsorted(self.breaks, np.asarray(t, float), side="right") - 1, 0, self.density.shape[0] - 1)
        return self.density[k]

    def in_cone(self, cone: ControlCone, tol: float = TOL_MEAS) -> bool:
        return all(cone.contains(a, tol) for a in self.atom_masses) and all(
            cone.contains(d, tol) for d in self.density
        )

    def refined(self, breaks) -> "VectorMeasure":
        """Same measure with the density mesh refined by ``breaks``."""
        b = np.union1d(self.breaks, np.clip(np.asarray(breaks, float), 0.0, self.T))
        mids = 0.5 * (b[:-1] + b[1:])
        return VectorMeasure(self.T, self.atom_times, self.atom_masses, b, self.density_at(mids))

    def to_json(self) -> dict:
        return {
            "atoms": [[float(t)] + [float(x) for x in a] for t, a in zip(self.atom_times, self.atom_masses)],
            "density": {"breaks": self.breaks.tolist(), "values": self.density.tolist()},
        }

    @classmethod
    def from_json(cls, data: dict, T: float, m: int) -> "VectorMeasure":
        atoms = data.get("atoms", [])
        dens = data.get("density")
        if dens is None:
            breaks, values = [0.0, T], [[0.0] * m]
        else:
            breaks, values = dens["breaks"], dens["values"]
        values = np.asarray(values, float).reshape(len(breaks) - 1, m)
        times = np.array([a[0] for a in atoms], float)
        masses = np.array([a[1:] for a in atoms], float).reshape(len(atoms), m)
        order = np.argsort(times)
        return cls(T, times[order], masses[order], breaks, values)


class ScalarMeasure(VectorMeasure):
    """Nonnegative scalar measure; the same layout with ``m = 1``."""

    def __post_init__(self):
        super().__post_init__()
        if self.m != 1:
            raise ValueError("scalar measure must have m = 1")
        if np.any(self.atom_masses < 0) or np.any(self.density < 0):
            raise ValueError("scalar measure must be nonnegative")

    @classmethod
    def zero(cls, T: float, m: int = 1) -> "ScalarMeasure":
        return cls(T, np.zeros(0), np.zeros((0, 1)), np.array([0.0, T]), np.zeros((1, 1)))

    def distribution(self, t):
        return super().distribution(t)[..., 0]

    def distribution_left(self, t):
        return super().distribution_left(t)[..., 0]

    def total(self) -> float:
        return float(super().total()[0])

    def atom_at(self, t: float) -> float:
        return float(super().atom_at(t)[0])

    @classmethod
    def from_json(cls, data: dict, T: float, m: int = 1) -> "ScalarMeasure":
        v = VectorMeasure.from_json(data, T, 1)
        return cls(T, v.atom_times, v.atom_masses, v.breaks, v.density)


def tv_measure(mu: VectorMeasure) -> ScalarMeasure:
    """Total variation measure ``|mu|`` (l1 norm of atoms and density)."""
    return ScalarMeasure(
        mu.T,
        mu.atom_times.copy(),
        np.abs(mu.atom_masses).sum(axis=1, keepdims=True),
        mu.breaks.copy(),
        np.abs(mu.density).sum(axis=1, keepdims=True),
    )


def distribution(mu: VectorMeasure, t):
    return mu.distribution(t)


# ---------------------------------------------------------------------------
# Attached controls


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Piecewise-constant map ``[0, 1] -> R^m``."""

    breaks: np.ndarray
    values: np.ndarray  # (q, m)

    def __post_init__(self):
        b = np.asarray(self.breaks, float)
        v = np.asarray(self.values, float)
        if v.ndim == 1:
            v = v[:, None]
        if b.ndim != 1 or b.size < 2 or b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise ValueError("step function breakpoints must increase from 0 to 1")
        if v.shape[0] != b.size - 1:
            raise ValueError("one value per piece required")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value) -> "StepFunction":
        return cls(np.array([0.0, 1.0]), np.atleast_2d(np.asarray(value, float)))

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def __call__(self, s):
        k = np.clip(np.searchsorted(self.breaks, np.asarray(s, float), side="right") - 1, 0, self.values.shape[0] - 1)
        return self.values[k]

    def integral(self) -> np.ndarray:
        return (self.values * np.diff(self.breaks)[:, None]).sum(axis=0)

    def norm_integral(self) -> float:
        return float((np.abs(self.values).sum(axis=1) * np.diff(self.breaks)).sum())

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def to_json(self) -> dict:
        return {"breaks": self.breaks.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "StepFunction":
        return cls(np.asarray(data["breaks"], float), np.asarray(data["values"], float))


@dataclass(frozen=True, eq=False)
class AttachedFamily:
    """Map ``r -> (omega^r_1, ..., omega^r_N)``; missing entries are zero."""

    h: float
    N: int
    entries: dict = field(default_factory=dict)  # r -> tuple of N (StepFunction | None)

    def __post_init__(self):
        clean = {}
        for r, fams in self.entries.items():
            r = float(r)
            if r < -1e-12 * self.h or r > self.h * (1 + 1e-12):
                raise ValueError(f"attached parameter r={r} outside [0, h]")
            fams = tuple(fams)
            if len(fams) != self.N:
                raise ValueError("each attached control needs one function per block")
            r = min(max(r, 0.0), self.h)
            # parameters equal up to rounding (r + (l-1)h recomputed per block) share one entry
            key = next((q for q in clean if abs(q - r) <= 1e-12 * max(1.0, self.h)), None)
            if key is not None:
                old = clean[key]
                if any(a is not None and b is not None for a, b in zip(old, fams)):
                    raise ValueError(f"two attached controls for one block at r={r}")
                fams = tuple(a if a is not None else b for a, b in zip(old, fams))
                r = key
            clean[r] = fams
        object.__setattr__(self, "entries", dict(sorted(clean.items())))

    def keys(self) -> list[float]:
        return list(self.entries)

    def _find(self, r: float):
        for key in self.entries:
            if abs(key - r) <= 1e-12 * max(1.0, self.h):
                return key
        return None

    def get(self, r: float, l: int) -> StepFunction | None:
        """``omega^r_l`` with ``l`` 1-based; None means identically zero."""
        if l < 1 or l > self.N:
            return None
        key = self._find(r)
        if key is None:
            return None
        return self.entries[key][l - 1]

    def norm_integral(self, r: float, l: int) -> float:
        w = self.get(r, l)
        return 0.0 if w is None else w.norm_integral()

    def integral(self, r: float, l: int, m: int) -> np.ndarray:
        w = self.get(r, l)
        return np.zeros(m) if w is None else w.integral()

    def active(self, tol: float = 0.0) -> list[float]:
        """Parameters ``r`` with a nonzero attached control."""
        return [r for r, fams in self.entries.items() if sum(w.norm_integral() for w in fams if w is not None) > tol]

    def to_json(self) -> list:
        out = []
        for r, fams in self.entries.items():
            out.append({"r": r, "omega": [None if w is None else w.to_json() for w in fams]})
        return out

    @classmethod
    def from_json(cls, data: list, h: float, N: int) -> "AttachedFamily":
        entries = {}
        for item in data:
            entries[float(item["r"])] = tuple(None if w is None else StepFunction.from_json(w) for w in item["omega"])
        return cls(h, N, entries)


# ---------------------------------------------------------------------------
# Impulse controls


@dataclass
class CheckRecord:
    name: str
    residual: float
    passed: bool
    where: str = ""

    def __post_init__(self):
        self.residual = float(self.residual)
        self.passed = bool(self.passed)


@dataclass
class ValidationReport:
    records: list[CheckRecord]
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.records)

    def __getitem__(self, name: str) -> CheckRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def worst(self) -> float:
        return max((r.residual for r in self.records), default=0.0)

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [r.__dict__ for r in self.records],
            "notes": self.notes,
        }


@dataclass(frozen=True, eq=False)
class ImpulseControl:
    """Impulse control ``(mu, nu, {omega^r})`` on ``[0, T]``, ``T = N h``."""

    mu: VectorMeasure
    nu: ScalarMeasure
    attached: AttachedFamily
    N: int
    M: int
    h: float

    def __post_init__(self):
        T = self.N * self.h
        if abs(self.mu.T - T) > _time_tol(T) or abs(self.nu.T - T) > _time_tol(T):
            raise ValueError("measures must live on [0, N h]")
        if self.attached.N != self.N or abs(self.attached.h - self.h) > 1e-15:
            raise ValueError("attached family grid does not match")

    @property
    def T(self) -> float:
        return self.N * self.h

    @property
    def m(self) -> int:
        return self.mu.m

    def grid_index(self, t: float) -> int | None:
        """``l`` if ``t = l h`` (within tolerance) else None."""
        l = round(t / self.h)
        return l if abs(t - l * self.h) <= _time_tol(self.T) else None

    def block_of(self, t: float) -> tuple[int, float]:
        """Block ``l`` and parameter ``r in (0, h)`` for a non-grid time."""
        l = int(np.floor(t / self.h)) + 1
        return l, t - (l - 1) * self.h

    @property
    def is_strict(self) -> bool:
        return not np.any(self.nu.atom_masses > 0)

    @classmethod
    def strict(cls, mu: VectorMeasure, N: int, M: int, h: float) -> "ImpulseControl":
        if mu.has_atoms and np.any(mu.atom_masses):
            raise ValueError("strict-sense controls have no atoms")
        return cls(mu, tv_measure(mu), AttachedFamily(h, N), N, M, h)

    @classmethod
    def from_measure(cls, mu: VectorMeasure, N: int, M: int, h: float, grid_to_later: bool = True) -> "ImpulseControl":
        """``nu = |mu|`` with constant attached controls equal to the atoms.

        Atoms at ``r + (l-1)h`` with ``r`` in ``(0, h)`` get
        ``omega^r_l = mu({t})``.  An atom at a grid time ``l h`` goes into
        ``omega^0_{l+1}`` (later block) by default, or ``omega^h_l`` with
        ``grid_to_later=False``; the atom at ``T`` always goes to
        ``omega^h_N`` and the atom at 0 to ``omega^0_1``.
        """
        entries: dict[float, list] = {}
        for t, a in zip(mu.atom_times, mu.atom_masses):
            if not np.any(a):
                continue
            tmp = cls(mu, tv_measure(mu), AttachedFamily(h, N), N, M, h)
            l = tmp.grid_index(t)
            if l is not None:
                if l == 0 or (grid_to_later and l < N):
                    r, blk = 0.0, l + 1
                else:
                    r, blk = h, l
            else:
                blk, r = tmp.block_of(t)
            slot = entries.setdefault(r, [None] * N)
            slot[blk - 1] = StepFunction.constant(a)
        return cls(mu, tv_measure(mu), AttachedFamily(h, N, {r: tuple(v) for r, v in entries.items()}), N, M, h)

    def to_json(self) -> dict:
        return {"mu": self.mu.to_json(), "nu": self.nu.to_json(), "attached": self.attached.to_json()}

    @classmethod
    def from_json(cls, data: dict, N: int, M: int, h: float, m: int) -> "ImpulseControl":
        T = N * h
        mu = VectorMeasure.from_json(data["mu"], T, m)
        nu = ScalarMeasure.from_json(data["nu"], T) if "nu" in data else tv_measure(mu)
        att = AttachedFamily.from_json(data.get("attached", []), h, N)
        return cls(mu, nu, att, N, M, h)


def _candidate_params(c: ImpulseControl) -> tuple[list[float], list[int]]:
    """Interior parameters r to check and grid indices with atoms."""
    rs: set[float] = set()
    grid: set[int] = set(range(c.N + 1))
    for t in list(c.mu.atom_times) + list(c.nu.atom_times):
        if c.grid_index(t) is None:
            rs.add(c.block_of(t)[1])
    for r in c.attached.keys():
        if 1e-12 * c.h < r < c.h * (1 - 1e-12):
            rs.add(r)
    # merge near-duplicates
    out: list[float] = []
    for r in sorted(rs):
        if not out or abs(r - out[-1]) > 1e-12 * max(1.0, c.h):
            out.append(r)
    return out, sorted(grid)


def validate_impulse_control(c: ImpulseControl, tol: float = TOL_MEAS, cone: ControlCone | None = None) -> ValidationReport:
    """Check the conditions defining an impulse control.

    Records: (i) constant attached speed, (ii.1)/(ii.2) variation atoms,
    (iii.1)/(iii.2) vector atoms, ``nu^c = |mu^c|``, ``nu >= |mu|``, and the
    cone range when ``cone`` is given.
    """
    m, N, h = c.m, c.N, c.h
    recs: list[CheckRecord] = []

    # (i)
    worst, where = 0.0, ""
    for r, fams in c.attached.entries.items():
        funcs = [w for w in fams if w is not None]
        if not funcs:
            continue
        b = np.unique(np.concatenate([w.breaks for w in funcs]))
        mids = 0.5 * (b[:-1] + b[1:])
        speed = sum(np.abs(w(mids)).sum(axis=1) for w in funcs)
        total = sum(w.norm_integral() for w in funcs)
        res = float(np.max(np.abs(speed - total)))
        if res > worst:
            worst, where = res, f"r={r}"
    recs.append(CheckRecord("(i)", worst, worst <= tol, where))

    rs, grid = _candidate_params(c)
    w21 = w31 = 0.0
    loc21 = loc31 = ""
    for r in rs:
        for l in range(1, N + 1):
            t = r + (l - 1) * h
            res = abs(c.attached.norm_integral(r, l) - c.nu.atom_at(t))
            if res > w21:
                w21, loc21 = res, f"t={t}"
            res = float(np.abs(c.attached.integral(r, l, m) - c.mu.atom_at(t)).max())
            if res > w31:
                w31, loc31 = res, f"t={t}"
    recs.append(CheckRecord("(ii.1)", w21, w21 <= tol, loc21))

    w22 = w32 = 0.0
    loc22 = loc32 = ""
    for l in grid:
        t = l * h
        nv = c.attached.norm_integral(h, l) + c.attached.norm_integral(0.0, l + 1)
        res = abs(nv - c.nu.atom_at(t))
        if res > w22:
            w22, loc22 = res, f"t={t}"
        vv = c.attached.integral(h, l, m) + c.attached.integral(0.0, l + 1, m)
        res = float(np.abs(vv - c.mu.atom_at(t)).max())
        if res > w32:
            w32, loc32 = res, f"t={t}"
    recs.append(CheckRecord("(ii.2)", w22, w22 <= tol, loc22))
    recs.append(CheckRecord("(iii.1)", w31, w31 <= tol, loc31))
    recs.append(CheckRecord("(iii.2)", w32, w32 <= tol, loc32))

    # nu^c = |mu^c|
    b = np.union1d(c.mu.breaks, c.nu.breaks)
    mids = 0.5 * (b[:-1] + b[1:])
    dmu = np.abs(c.mu.density_at(mids)).sum(axis=1)
    dnu = c.nu.density_at(mids)[:, 0]
    res = float(np.max(np.abs(dmu - dnu))) if mids.size else 0.0
    recs.append(CheckRecord("nu^c=|mu^c|", res, res <= tol))

    # nu >= |mu| on atoms (densities are covered by the equality above)
    worst = 0.0
    for t, a in zip(c.mu.atom_times, c.mu.atom_masses):
        worst = max(worst, float(np.abs(a).sum()) - c.nu.atom_at(t))
    recs.append(CheckRecord("nu>=|mu|", max(worst, 0.0), worst <= tol))

    if cone is not None:
        bad = 0.0
        for a in list(c.mu.atom_masses) + list(c.mu.density):
            bad = max(bad, float(np.linalg.norm(cone.project(a) - a)))
        for fams in c.attached.entries.values():
            for w in fams:
                if w is not None:
                    for v in w.values:
                        bad = max(bad, float(np.linalg.norm(cone.project(v) - v)))
        recs.append(CheckRecord("range in K", bad, bad <= tol))
    return ValidationReport(recs)
