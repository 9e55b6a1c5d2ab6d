"""Extended controls (Lipschitz time-space parameterizations) and graph completions.

An extended control on ``[0, S]`` is stored by its cellwise-constant
derivatives: ``w0[k] = dphi0/ds`` and ``w[k, l] = dphi_l/ds`` on cell ``k``.
The curves themselves follow by integration with ``phi0(0) = 0``,
``phi_1(0) = 0`` and ``phi_l(0) = phi_{l-1}(S)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cone import ControlCone
from .measures import (
    CheckRecord,
    ImpulseControl,
    ValidationReport,
    VectorMeasure,
)
from .monotone import MonotoneCurve

CANON_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ExtendedControl:
    h: float
    mesh: np.ndarray  # (K+1,)
    w0: np.ndarray  # (K,)
    w: np.ndarray  # (K, N, m)
    phi0_knots: np.ndarray | None = None

    def __post_init__(self):
        mesh = np.asarray(self.mesh, float)
        w0 = np.asarray(self.w0, float)
        w = np.asarray(self.w, float)
        if mesh.ndim != 1 or mesh.size < 2 or mesh[0] != 0.0 or np.any(np.diff(mesh) <= 0):
            raise ValueError("mesh must start at 0 and increase strictly")
        K = mesh.size - 1
        if w0.shape != (K,) or w.ndim != 3 or w.shape[0] != K:
            raise ValueError("w0 needs shape (K,) and w needs shape (K, N, m)")
        if self.phi0_knots is None:
            knots = np.concatenate([[0.0], np.cumsum(w0 * np.diff(mesh))])
        else:
            knots = np.asarray(self.phi0_knots, float)
            if knots.shape != (K + 1,):
                raise ValueError("phi0 knots need shape (K+1,)")
        object.__setattr__(self, "mesh", mesh)
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "phi0_knots", knots)

    @classmethod
    def from_rates(cls, mesh, w0, w, h: float) -> "ExtendedControl":
        return cls(h, mesh, w0, w)

    @classmethod
    def strict_uniform(cls, h: float, N: int, m: int, K: int = 1) -> "ExtendedControl":
        """``phi0(s) = s`` on ``[0, h]`` with ``phi = 0``."""
        mesh = np.linspace(0.0, h, K + 1)
        return cls(h, mesh, np.ones(K), np.zeros((K, N, m)))

    # shapes and derived quantities ----------------------------------------
    @property
    def K(self) -> int:
        return self.w0.size

    @property
    def N(self) -> int:
        return self.w.shape[1]

    @property
    def m(self) -> int:
        return self.w.shape[2]

    @property
    def S(self) -> float:
        return float(self.mesh[-1])

    @property
    def ds(self) -> np.ndarray:
        return np.diff(self.mesh)

    @property
    def rate(self) -> np.ndarray:
        """``w0 + sum_l ||w_l||_1`` per cell."""
        return self.w0 + np.abs(self.w).sum(axis=(1, 2))

    def canonical_residual(self) -> float:
        return float(np.max(np.abs(self.rate - 1.0)))

    def is_canonical(self, tol: float = CANON_TOL) -> bool:
        return self.canonical_residual() <= tol

    @property
    def phi_knots(self) -> np.ndarray:
        """Knot values ``(K+1, N, m)`` of the chained ``phi_l``."""
        inc = self.w * self.ds[:, None, None]
        out = np.zeros((self.K + 1, self.N, self.m))
        base = np.zeros(self.m)
        for l in range(self.N):
            out[:, l] = base + np.concatenate([np.zeros((1, self.m)), np.cumsum(inc[:, l], axis=0)])
            base = out[-1, l]
        return out

    def block_variation(self) -> np.ndarray:
        """``int ||dphi_l/ds||_1 ds`` per block."""
        return (np.abs(self.w).sum(axis=2) * self.ds[:, None]).sum(axis=0)

    def total_variation(self) -> float:
        return float(self.block_variation().sum())

    def phi0_curve(self) -> MonotoneCurve:
        return MonotoneCurve(self.mesh, self.phi0_knots)

    def sigma(self) -> MonotoneCurve:
        """Right inverse of ``phi0`` (a curve on ``[0, h]``)."""
        return self.phi0_curve().right_inverse()

    def cell_of(self, s) -> np.ndarray:
        return np.clip(np.searchsorted(self.mesh, np.asarray(s, float), side="right") - 1, 0, self.K - 1)

    def phi0_at(self, s):
        return np.interp(s, self.mesh, self.phi0_knots)

    def phi_at(self, s) -> np.ndarray:
        """``(..., N, m)`` values of ``phi`` at ``s``."""
        s = np.asarray(s, float)
        kn = self.phi_knots
        out = np.empty(s.shape + (self.N, self.m))
        for l in range(self.N):
            for j in range(self.m):
                out[..., l, j] = np.interp(s, self.mesh, kn[:, l, j])
        return out

    def tau_tilde(self) -> MonotoneCurve:
        """Concatenated time ``tau~`` on ``[0, N S]``."""
        xs = np.concatenate([self.mesh + l * self.S for l in range(self.N)])
        ys = np.concatenate([self.phi0_knots + l * self.h for l in range(self.N)])
        return MonotoneCurve(xs, ys)

    def sigma_tilde(self) -> MonotoneCurve:
        return self.tau_tilde().right_inverse()

    def plateaus(self) -> list[tuple[int, int]]:
        """Maximal runs ``[k0, k1)`` of cells with ``w0 == 0``."""
        out = []
        k = 0
        while k < self.K:
            if self.w0[k] <= 0.0:
                k1 = k
                while k1 < self.K and self.w0[k1] <= 0.0:
                    k1 += 1
                out.append((k, k1))
                k = k1
            else:
                k += 1
        return out

    def to_json(self) -> dict:
        return {
            "h": self.h,
            "mesh": self.mesh.tolist(),
            "w0": self.w0.tolist(),
            "w": self.w.tolist(),
            "phi0_knots": self.phi0_knots.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ExtendedControl":
        return cls(
            float(data["h"]),
            np.asarray(data["mesh"], float),
            np.asarray(data["w0"], float),
            np.asarray(data["w"], float),
            None if data.get("phi0_knots") is None else np.asarray(data["phi0_knots"], float),
        )


@dataclass(frozen=True, eq=False)
class GraphCompletionMeta:
    """``psi(r) = r + V(r)`` and its jump intervals ``[psi^-(r), psi^+(r)]``."""

    psi: MonotoneCurve
    jumps: list  # (r, s_lo, s_hi)

    @property
    def S(self) -> float:
        return self.psi.range[1]

    def V(self, r):
        return self.psi(r) - np.asarray(r, float)


# ---------------------------------------------------------------------------
# Construction from impulse data


def _block_density(mu: VectorMeasure, l: int, h: float, r):
    return mu.density_at(np.asarray(r) + (l - 1) * h)


def build_extended(c: ImpulseControl, extra_breaks: Sequence[float] = ()) -> tuple[ExtendedControl, GraphCompletionMeta]:
    """Canonical extended control attached to an impulse control.

    ``phi(r) = r + sum_l nu_l([0, r])`` is inverted to obtain ``phi0``.  Off
    jump intervals the rates are the cell mass ratios of ``mu_l`` and ``nu_l``
    against ``dphi``; on the jump interval of ``r`` the attached controls are
    run at speed ``1 / len``.  Extra r-breakpoints (for instance history
    breakpoints) are inserted into the mesh.
    """
    N, h, m = c.N, c.h, c.m
    tol = 1e-12 * max(1.0, h)

    plateau_r = {}
    for r in c.attached.keys():
        fams = c.attached.entries[r]
        total = sum(w.norm_integral() for w in fams if w is not None)
        if total > 0:
            plateau_r[r] = (fams, total)

    R = {0.0, h}
    for l in range(1, N + 1):
        for b in list(c.mu.breaks) + list(c.nu.breaks):
            r = b - (l - 1) * h
            if tol < r < h - tol:
                R.add(float(r))
    for r in list(plateau_r) + list(extra_breaks):
        if 0.0 <= r <= h:
            R.add(float(r))
    R = sorted(R)
    preferred = set(plateau_r) | {0.0, h}
    merged = [R[0]]
    for r in R[1:]:
        if r - merged[-1] > tol:
            merged.append(r)
        elif r in preferred:
            merged[-1] = r
    merged[0], merged[-1] = 0.0, h
    R = merged

    def plateau_at(r):
        for key, val in plateau_r.items():
            if abs(key - r) <= tol:
                return val
        return None

    mesh = [0.0]
    knots = [0.0]
    W0: list[float] = []
    W: list[np.ndarray] = []
    psi_x, psi_y = [0.0], [0.0]
    jumps = []

    def add_plateau(r):
        pl = plateau_at(r)
        if pl is None:
            return
        fams, length = pl
        funcs = [w for w in fams if w is not None]
        b = np.unique(np.concatenate([w.breaks for w in funcs]))
        s0 = mesh[-1]
        for a, bb in zip(b[:-1], b[1:]):
            mid = 0.5 * (a + bb)
            rates = np.zeros((N, m))
            for l, wl in enumerate(fams):
                if wl is not None:
                    rates[l] = wl(mid) / length
            mesh.append(s0 + length * bb)
            knots.append(r)
            W0.append(0.0)
            W.append(rates)
        mesh[-1] = s0 + length
        jumps.append((r, s0, mesh[-1]))
        psi_x.append(r)
        psi_y.append(mesh[-1])

    add_plateau(0.0)
    for r0, r1 in zip(R[:-1], R[1:]):
        rm = 0.5 * (r0 + r1)
        dens_mu = np.array([_block_density(c.mu, l, h, rm) for l in range(1, N + 1)])  # (N, m)
        dens_nu = np.array([c.nu.density_at(rm + (l - 1) * h)[0] for l in range(1, N + 1)])
        rate = 1.0 + dens_nu.sum()
        mesh.append(mesh[-1] + (r1 - r0) * rate)
        knots.append(r1)
        W0.append(1.0 / rate)
        W.append(dens_mu / rate)
        psi_x.append(r1)
        psi_y.append(mesh[-1])
        add_plateau(r1)

    ec = ExtendedControl(h, np.array(mesh), np.array(W0), np.array(W).reshape(len(W0), N, m), np.array(knots))
    meta = GraphCompletionMeta(MonotoneCurve(np.array(psi_x), np.array(psi_y)), jumps)
    return ec, meta


def rectilinear_gc(
    mu: VectorMeasure, N: int, h: float, cone: ControlCone | None = None, extra_breaks: Sequence[float] = ()
) -> tuple[ExtendedControl, GraphCompletionMeta]:
    """Rectilinear graph completion of ``u(t) = mu([0, t])``.

    Discontinuities are bridged by straight segments traversed at unit
    speed, all blocks with a jump at the same ``r`` simultaneously; ``S`` is
    ``h`` plus the total variation of ``mu``.
    """
    if cone is not None:
        for a in mu.atom_masses:
            if not cone.contains(a):
                raise ValueError(f"atom mass {a} outside the control cone")
    c = ImpulseControl.from_measure(mu, N, 0, h, grid_to_later=False)
    return build_extended(c, extra_breaks)


# ---------------------------------------------------------------------------
# Validation


def validate_extended_control(
    ec: ExtendedControl,
    cone: ControlCone | None = None,
    u: VectorMeasure | None = None,
    L: float | None = None,
    tol: float = 1e-9,
    samples: int = 1000,
) -> ValidationReport:
    recs = []
    k0 = abs(ec.phi0_knots[0])
    kS = abs(ec.phi0_knots[-1] - ec.h)
    mono = float(max(0.0, -ec.w0.min(initial=0.0), -np.diff(ec.phi0_knots).min(initial=0.0)))
    res = max(k0, kS, mono)
    recs.append(CheckRecord("Def3.1(i)", res, res <= tol, f"phi0(S)-h={ec.phi0_knots[-1] - ec.h:.3e}"))
    kn = ec.phi_knots
    chain = float(np.abs(kn[0, 0]).max(initial=0.0))
    for l in range(1, ec.N):
        chain = max(chain, float(np.abs(kn[0, l] - kn[-1, l - 1]).max()))
    recs.append(CheckRecord("Def3.1(ii)", chain, chain <= tol))
    if cone is not None:
        bad = 0.0
        for k in range(ec.K):
            for l in range(ec.N):
                v = ec.w[k, l]
                bad = max(bad, float(np.linalg.norm(cone.project(v) - v)))
        recs.append(CheckRecord("Def3.1(iii)", bad, bad <= tol))
    if L is not None:
        over = float(max(0.0, ec.rate.max() - L))
        recs.append(CheckRecord("Lipschitz", over, over <= tol))
    if u is not None:
        T = ec.N * ec.h
        end = float(np.abs(kn[-1, -1] - u.distribution(T)).max())
        recs.append(CheckRecord("Def3.3(i)", end, end <= tol))
        res, where = _graph_membership(ec, u, samples)
        recs.append(CheckRecord("Def3.3(ii)", res, res <= tol, where))
    return ValidationReport(recs)


def _seg_dist(p, a, b) -> float:
    d = b - a
    dd = float(d @ d)
    lam = 0.0 if dd == 0 else min(1.0, max(0.0, float((p - a) @ d) / dd))
    return float(np.abs(a + lam * d - p).max())


def _graph_membership(ec: ExtendedControl, u: VectorMeasure, samples: int) -> tuple[float, str]:
    T = ec.N * ec.h
    ts = np.union1d(np.linspace(0.0, T, samples), u.atom_times)
    sig = ec.sigma_tilde()
    kn = ec.phi_knots
    S = ec.S
    worst, where = 0.0, ""
    for t in ts:
        a = 0.0 if t == 0 else float(sig.lower(t))
        b = float(sig.upper(t))
        target = u.distribution(t) if t > 0 else np.zeros(ec.m)
        # polyline of phi~ on [a, b]
        pts_s = [a, b]
        for l in range(ec.N):
            inner = ec.mesh + l * S
            pts_s += [x for x in inner if a < x < b]
        pts_s = sorted(set(pts_s))
        vals = [_phi_tilde(ec, kn, s) for s in pts_s]
        if len(vals) == 1:
            d = float(np.abs(vals[0] - target).max())
        else:
            d = min(_seg_dist(target, vals[i], vals[i + 1]) for i in range(len(vals) - 1))
        if d > worst:
            worst, where = d, f"t={t}"
    return worst, where


def _phi_tilde(ec: ExtendedControl, kn: np.ndarray, s: float) -> np.ndarray:
    S = ec.S
    l = min(int(s // S), ec.N - 1)
    loc = min(max(s - l * S, 0.0), S)
    return np.array([np.interp(loc, ec.mesh, kn[:, l, j]) for j in range(ec.m)])


# ---------------------------------------------------------------------------
# Normalization and reparameterization


def _merge_cells(mesh, w0, w, knots, tol=CANON_TOL):
    keep = [0]
    for k in range(1, w0.size):
        j = keep[-1]
        same = abs(w0[k] - w0[j]) <= tol and np.all(np.abs(w[k] - w[j]) <= tol)
        if not same:
            keep.append(k)
    if len(keep) == w0.size:
        return mesh, w0, w, knots
    bounds = keep + [w0.size]
    ds = np.diff(mesh)
    new_w0, new_w = [], []
    for a, b in zip(bounds[:-1], bounds[1:]):
        L = ds[a:b].sum()
        new_w0.append((w0[a:b] * ds[a:b]).sum() / L)
        new_w.append((w[a:b] * ds[a:b, None, None]).sum(axis=0) / L)
    idx = np.array(bounds)
    return mesh[idx], np.array(new_w0), np.array(new_w), knots[idx]


def canonicalize(ec: ExtendedControl, merge: bool = True) -> ExtendedControl:
    """Arc-length reparameterization with ``w0 + sum ||w_l|| = 1`` per cell.

    Zero-speed cells are removed; with ``merge`` adjacent cells carrying the
    same rates (to 1e-12) are fused, so that equivalent parameterizations
    produce the same canonical mesh.
    """
    rho = ec.rate
    keep = rho > 0
    if not np.any(keep):
        raise ValueError("extended control has zero speed everywhere")
    ds = ec.ds[keep] * rho[keep]
    w0 = ec.w0[keep] / rho[keep]
    w = ec.w[keep] / rho[keep][:, None, None]
    kn = np.concatenate([[ec.phi0_knots[0]], ec.phi0_knots[1:][keep]])
    mesh = np.concatenate([[0.0], np.cumsum(ds)])
    if merge:
        mesh, w0, w, kn = _merge_cells(mesh, w0, w, kn)
    return ExtendedControl(ec.h, mesh, w0, w, kn)


def reparameterize(ec: ExtendedControl, delta: MonotoneCurve) -> ExtendedControl:
    """Same curve traversed as ``old o delta^{-1}``.

    ``delta`` maps ``[0, S_old]`` onto ``[0, S_new]`` and must be strictly
    increasing (no jumps and no plateaus).
    """
    if abs(delta.domain[0]) > 1e-15 or abs(delta.domain[1] - ec.S) > 1e-12 * max(1.0, ec.S):
        raise ValueError("delta must be defined on [0, S]")
    if np.any(np.diff(delta.xs) <= 0) or np.any(np.diff(delta.ys) <= 0) or delta.ys[0] != 0.0:
        raise ValueError("delta must be a strictly increasing bijection starting at 0")
    pts = np.union1d(ec.mesh, np.clip(delta.xs, 0.0, ec.S))
    # drop points closer than rounding to an old mesh point
    keep = [pts[0]]
    for p in pts[1:]:
        if p - keep[-1] > 1e-14 * max(1.0, ec.S):
            keep.append(p)
        else:
            keep[-1] = p if p in ec.mesh else keep[-1]
    keep[-1] = ec.S
    pts = np.array(keep)
    mids = 0.5 * (pts[:-1] + pts[1:])
    cells = ec.cell_of(mids)
    new_mesh = delta(pts)
    new_mesh[0] = 0.0
    slope = np.diff(new_mesh) / np.diff(pts)
    w0 = ec.w0[cells] / slope
    w = ec.w[cells] / slope[:, None, None]
    kn = ec.phi0_at(pts)
    on_old = np.isin(pts, ec.mesh)
    old_idx = np.searchsorted(ec.mesh, pts)
    kn = np.where(on_old, ec.phi0_knots[np.clip(old_idx, 0, ec.K)], kn)
    return ExtendedControl(ec.h, new_mesh, w0, w, kn)


def tilde_concatenate(s: np.ndarray, blocks: Sequence[np.ndarray], chain_tol: float | None = None):
    """Concatenate ``z_1..z_N`` sampled on a common grid ``s`` over ``[0, S]``.

    Returns ``(s~, z~)`` on ``[0, N S]`` with ``z~`` equal to ``z_l`` on
    ``[(l-1)S, lS)`` and ``z~(N S) = z_N(S)``.  With ``chain_tol`` set, the
    block boundary values ``z_l(S)`` and ``z_{l+1}(0)`` must agree.
    """
    s = np.asarray(s, float)
    S = s[-1]
    N = len(blocks)
    if chain_tol is not None:
        for l in range(1, N):
            gap = np.max(np.abs(np.asarray(blocks[l][0]) - np.asarray(blocks[l - 1][-1])))
            if gap > chain_tol:
                raise ValueError(f"chain mismatch {gap:.3e} between blocks {l} and {l + 1}")
    st = np.concatenate([s[:-1] + l * S for l in range(N)] + [[N * S]])
    zt = np.concatenate([np.asarray(b)[:-1] for b in blocks] + [np.asarray(blocks[-1])[-1:]])
    return st, zt
