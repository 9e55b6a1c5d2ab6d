"""Passing between impulse controls and extended processes.

``gc_solution`` reads the impulse trajectory off an extended process through
the inverse time change, ``(x, v)(t) = (y~, beta~)(sigma~(t))``.
``impulse_to_extended`` and ``extended_to_impulse`` are mutually inverse on
canonical processes; ``strict_sense_approximation`` produces absolutely
continuous controls whose trajectories converge to the impulse one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DelayDynamics
from .extsys import DEFAULT_MAX_STEP, DEFAULT_SUBSTEPS, ExtendedProcess, integrate_acs
from .graphcomp import ExtendedControl, build_extended, canonicalize
from .measures import (
    AttachedFamily,
    ImpulseControl,
    ScalarMeasure,
    StepFunction,
    VectorMeasure,
    validate_impulse_control,
)
from .monotone import MonotoneCurve


class InvalidImpulseControl(ValueError):
    def __init__(self, report):
        self.report = report
        bad = [r.name for r in report.records if not r.passed]
        super().__init__(f"impulse control fails {', '.join(bad)}")


def _grid_snap(t, h: float, N: int):
    """Index ``l`` where ``t = l h`` (to rounding), else -1."""
    t = np.asarray(t, float)
    q = np.rint(t / h)
    hit = np.abs(t - q * h) <= 1e-12 * max(1.0, N * h)
    return np.where(hit, q, -1).astype(int)


@dataclass(eq=False)
class ImpulseTrajectory:
    """Right-continuous ``(x, v)`` on ``[-Mh, T]`` backed by a canonical process."""

    ep: ExtendedProcess
    sigma: MonotoneCurve

    @property
    def dyn(self) -> DelayDynamics:
        return self.ep.dyn

    @property
    def T(self) -> float:
        return self.dyn.T

    def _blocks(self, t, left: bool):
        h, N = self.dyn.h, self.dyn.N
        t = np.asarray(t, float)
        g = _grid_snap(t, h, N)
        if left:
            l = np.ceil(t / h - 1e-12).astype(int)
            l = np.where(g >= 1, g, l)
        else:
            l = np.floor(t / h + 1e-12).astype(int) + 1
            l = np.where(g >= 0, g + 1, l)
        l = np.clip(l, 1, N)
        r = np.clip(t - (l - 1) * h, 0.0, h)
        r = np.where(g >= 0, np.where(left, h, np.where(g + 1 > N, h, 0.0)), r)
        return l, r

    def _eval(self, t, left: bool, which: str):
        t = np.atleast_1d(np.asarray(t, float))
        n = self.dyn.n
        out = np.empty(t.shape + ((n,) if which == "x" else ()))
        neg = t < 0
        zero = t == 0
        pos = ~(neg | zero)
        if which == "x":
            if np.any(neg):
                out[neg] = self.dyn.xi0(t[neg])[0]
            out[zero] = self.dyn.x0
        else:
            out[neg | zero] = 0.0
        if np.any(pos):
            l, r = self._blocks(t[pos], left)
            s = self.sigma.lower(r) if left else self.sigma.upper(r)
            vals = np.empty((pos.sum(),) + ((n,) if which == "x" else ()))
            for b in np.unique(l):
                sel = l == b
                if which == "x":
                    vals[sel] = self.ep.y_at(int(b), s[sel])
                else:
                    vals[sel] = self.ep.beta_at(int(b), s[sel])
            out[pos] = vals
        return out

    def x(self, t):
        return self._eval(t, False, "x")

    def x_left(self, t):
        return self._eval(t, True, "x")

    def v(self, t):
        return self._eval(t, False, "v")

    def v_left(self, t):
        return self._eval(t, True, "v")

    def jump_table(self, tol: float = 1e-14) -> list[tuple[float, np.ndarray, np.ndarray, float, float]]:
        """``(t, x^-(t), x(t), v^-(t), v(t))`` at every atom of the variation."""
        h, N = self.dyn.h, self.dyn.N
        times = set()
        for r, _, _ in self.sigma.jumps():
            for l in range(1, N + 1):
                t = r + (l - 1) * h
                if 0.0 <= t <= N * h + 1e-12:
                    times.add(round(t, 13))
        rows = []
        for t in sorted(times):
            t = min(max(float(t), 0.0), N * h)
            g = _grid_snap(t, h, N)
            if g >= 0:
                t = g * h
            if t == 0.0:
                # the jump at 0 is read at 0+ of the first block
                s = float(self.sigma.upper(0.0))
                pre, post = self.dyn.x0.copy(), self.ep.y_at(1, s)
                vpre, vpost = 0.0, float(self.ep.beta_at(1, s))
            else:
                pre, post = self.x_left(t)[0], self.x(t)[0]
                vpre, vpost = float(self.v_left(t)[0]), float(self.v(t)[0])
            if vpost - vpre > tol:
                rows.append((t, pre, post, vpre, vpost))
        return rows

    def write_csv(self, path, times) -> None:
        times = np.asarray(times, float)
        xs, vs = self.x(times), self.v(times)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t"] + [f"x_{i}" for i in range(self.dyn.n)] + ["v"])
            for t, x, v in zip(times, xs, vs):
                wr.writerow([repr(float(t))] + [repr(float(a)) for a in x] + [repr(float(v))])

    def write_jump_csv(self, path, arcs: "JumpArcSet | None" = None) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            n = self.dyn.n
            wr.writerow(["t"] + [f"pre_{i}" for i in range(n)] + [f"post_{i}" for i in range(n)] + ["v_pre", "v_post", "arc_file"])
            for t, pre, post, vp, vq in self.jump_table():
                ref = ""
                if arcs is not None:
                    ref = arcs.file_name_for_time(t)
                wr.writerow([repr(t)] + [repr(float(a)) for a in pre] + [repr(float(a)) for a in post] + [repr(vp), repr(vq), ref])


@dataclass(eq=False)
class JumpArc:
    l: int
    r: float
    s_lo: float
    s_hi: float
    active: bool


@dataclass(eq=False)
class JumpArcSet:
    """Fast-time arcs ``zeta^r_l, theta^r_l`` on ``[0, 1]`` for each plateau."""

    ep: ExtendedProcess
    arcs: dict = field(default_factory=dict)  # (l, r) -> JumpArc

    @classmethod
    def from_process(cls, ep: ExtendedProcess) -> "JumpArcSet":
        ec = ep.ec
        arcs = {}
        for k0, k1 in ec.plateaus():
            r = float(ec.phi0_knots[k0])
            s_lo, s_hi = float(ec.mesh[k0]), float(ec.mesh[k1])
            var = (np.abs(ec.w[k0:k1]).sum(axis=2) * ec.ds[k0:k1, None]).sum(axis=0)
            if var.sum() <= 0:
                continue
            for l in range(1, ec.N + 1):
                arcs[(l, r)] = JumpArc(l, r, s_lo, s_hi, bool(var[l - 1] > 0))
        return cls(ep, arcs)

    def __len__(self) -> int:
        return len(self.arcs)

    def keys(self):
        return list(self.arcs)

    def params(self) -> list[float]:
        return sorted({r for (_, r) in self.arcs})

    def zeta(self, l: int, r: float, s):
        a = self.arcs[(l, r)]
        return self.ep.y_at(l, a.s_lo + np.asarray(s, float) * (a.s_hi - a.s_lo))

    def theta(self, l: int, r: float, s):
        a = self.arcs[(l, r)]
        return self.ep.beta_at(l, a.s_lo + np.asarray(s, float) * (a.s_hi - a.s_lo))

    def sample_points(self, l: int, r: float) -> np.ndarray:
        """Integrator grid points inside the plateau, mapped to ``[0, 1]``."""
        a = self.arcs[(l, r)]
        s = self.ep.s
        inner = s[(s >= a.s_lo) & (s <= a.s_hi)]
        return (inner - a.s_lo) / (a.s_hi - a.s_lo)

    def file_name_for_time(self, t: float) -> str:
        h = self.ep.dyn.h
        names = []
        for (l, r), a in self.arcs.items():
            if a.active and abs(r + (l - 1) * h - t) <= 1e-12 * max(1.0, h):
                names.append(self.file_name(l, r))
        return ";".join(names)

    @staticmethod
    def file_name(l: int, r: float) -> str:
        return f"arc_l{l}_r{r:.12g}.csv"

    def write_csv(self, directory) -> list[str]:
        import os

        out = []
        n = self.ep.dyn.n
        for (l, r), a in sorted(self.arcs.items()):
            name = self.file_name(l, r)
            pts = self.sample_points(l, r)
            z, th = self.zeta(l, r, pts), self.theta(l, r, pts)
            with open(os.path.join(directory, name), "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["s"] + [f"zeta_{i}" for i in range(n)] + ["theta"])
                for s, zz, tt in zip(pts, z, th):
                    wr.writerow([repr(float(s))] + [repr(float(v)) for v in zz] + [repr(float(tt))])
            out.append(name)
        return out


@dataclass(eq=False)
class ImpulseProcess:
    control: ImpulseControl
    trajectory: ImpulseTrajectory
    arcs: JumpArcSet
    canonicalized: bool = False


def _same_control(a: ExtendedControl, b: ExtendedControl) -> bool:
    return (
        a.K == b.K
        and np.array_equal(a.mesh, b.mesh)
        and np.array_equal(a.w0, b.w0)
        and np.array_equal(a.w, b.w)
        and np.array_equal(a.phi0_knots, b.phi0_knots)
    )


def canonical_process(ep: ExtendedProcess) -> ExtendedProcess:
    """The process of the canonical form of ``ep.ec`` (reused when identical)."""
    ec_c = canonicalize(ep.ec)
    if _same_control(ec_c, ep.ec):
        return ep
    return integrate_acs(ec_c, ep.dyn, ep.substeps, ep.max_step)


def gc_solution(ep: ExtendedProcess) -> ImpulseTrajectory:
    """Graph-completion solution ``(y~, beta~) o sigma~``.

    The process is first brought to canonical form, so equivalent
    parameterizations give the same trajectory.
    """
    epc = canonical_process(ep)
    return ImpulseTrajectory(epc, epc.ec.sigma())


def extended_to_impulse(ep: ExtendedProcess | ExtendedControl, dyn: DelayDynamics | None = None):
    """Impulse control (and process when a process is given) of an extended one.

    Atoms come from the increments of ``phi_l`` over the plateaus of
    ``phi0``, attached controls from the rescaled derivatives
    ``len * dphi_l/ds(s_lo + s len)``, densities from ``w_l / w0``.
    Non-canonical input is canonicalized first and flagged.
    """
    if isinstance(ep, ExtendedProcess):
        ec_in, dyn = ep.ec, ep.dyn
    else:
        ec_in = ep
    flagged = not ec_in.is_canonical()
    ec = canonicalize(ec_in)
    N, m, h = ec.N, ec.m, ec.h
    T = N * h

    atoms_mu: dict[float, np.ndarray] = {}
    atoms_nu: dict[float, float] = {}
    entries: dict[float, list] = {}
    for k0, k1 in ec.plateaus():
        r = float(ec.phi0_knots[k0])
        if abs(r) <= 1e-13 * h:
            r = 0.0
        if abs(r - h) <= 1e-13 * h:
            r = h
        s_lo, s_hi = ec.mesh[k0], ec.mesh[k1]
        length = s_hi - s_lo
        breaks = (ec.mesh[k0 : k1 + 1] - s_lo) / length
        breaks[0], breaks[-1] = 0.0, 1.0
        ds = ec.ds[k0:k1]
        fams = [None] * N
        for l in range(N):
            vals = ec.w[k0:k1, l] * length
            if not np.any(vals):
                continue
            fams[l] = StepFunction(breaks, vals)
            t = r + l * h
            if r == 0.0:
                t = l * h
            elif r == h:
                t = (l + 1) * h
            key = round(t, 13)
            atoms_mu[key] = atoms_mu.get(key, np.zeros(m)) + (ec.w[k0:k1, l] * ds[:, None]).sum(axis=0)
            atoms_nu[key] = atoms_nu.get(key, 0.0) + float((np.abs(ec.w[k0:k1, l]).sum(axis=1) * ds).sum())
        if any(f is not None for f in fams):
            entries[r] = fams

    # densities on t-intervals of the cells with w0 > 0
    pieces = []
    for k in np.nonzero(ec.w0 > 0)[0]:
        a, b = ec.phi0_knots[k], ec.phi0_knots[k + 1]
        if b <= a:
            continue
        for l in range(N):
            pieces.append((a + l * h, b + l * h, ec.w[k, l] / ec.w0[k]))
    pieces.sort(key=lambda p: p[0])
    breaks = [0.0]
    dens = []
    for a, b, d in pieces:
        if a > breaks[-1] + 1e-13 * T:
            dens.append(np.zeros(m))
            breaks.append(a)
        dens.append(d)
        breaks.append(b)
    if breaks[-1] < T - 1e-13 * T:
        dens.append(np.zeros(m))
        breaks.append(T)
    breaks[-1] = T
    breaks = np.array(breaks)
    dens = np.array(dens).reshape(-1, m)
    good = np.diff(breaks) > 0
    keep_b = np.concatenate([[True], good])
    breaks, dens = breaks[keep_b], dens[good]

    times = sorted(atoms_nu)
    mu_t = [t for t in times if np.any(atoms_mu[t] != 0)]
    mu = VectorMeasure(
        T,
        np.array([min(max(t, 0.0), T) for t in mu_t]),
        np.array([atoms_mu[t] for t in mu_t]).reshape(len(mu_t), m),
        breaks,
        dens,
    )
    nu_t = [t for t in times if atoms_nu[t] > 0]
    nu = ScalarMeasure(
        T,
        np.array([min(max(t, 0.0), T) for t in nu_t]),
        np.array([[atoms_nu[t]] for t in nu_t]).reshape(len(nu_t), 1),
        breaks.copy(),
        np.abs(dens).sum(axis=1, keepdims=True),
    )
    M = dyn.M if dyn is not None else 0
    control = ImpulseControl(mu, nu, AttachedFamily(h, N, {r: tuple(f) for r, f in entries.items()}), N, M, h)
    if not isinstance(ep, ExtendedProcess):
        return control
    epc = canonical_process(ep) if not flagged else integrate_acs(ec, dyn, ep.substeps, ep.max_step)
    traj = ImpulseTrajectory(epc, epc.ec.sigma())
    return ImpulseProcess(control, traj, JumpArcSet.from_process(epc), canonicalized=flagged)


def impulse_to_extended(
    c: ImpulseControl,
    dyn: DelayDynamics,
    substeps: int = DEFAULT_SUBSTEPS,
    max_step: float | None = DEFAULT_MAX_STEP,
    tol: float = 1e-9,
) -> ExtendedProcess:
    """Canonical extended process attached to a valid impulse control."""
    rep = validate_impulse_control(c, tol)
    if not rep.ok:
        raise InvalidImpulseControl(rep)
    ec, _ = build_extended(c)
    ec = canonicalize(ec)
    return integrate_acs(ec, dyn, substeps, max_step)


def simulate_impulse(
    c: ImpulseControl,
    dyn: DelayDynamics,
    substeps: int = DEFAULT_SUBSTEPS,
    max_step: float | None = DEFAULT_MAX_STEP,
) -> tuple[ImpulseTrajectory, JumpArcSet]:
    """Impulse solution of ``c`` with its jump arcs."""
    ep = impulse_to_extended(c, dyn, substeps, max_step)
    traj = gc_solution(ep)
    return traj, JumpArcSet.from_process(traj.ep)


@dataclass(eq=False)
class StrictApproximation:
    i: int
    control: ImpulseControl
    trajectory: ImpulseTrajectory
    ep: ExtendedProcess


def strict_sense_approximation(
    c: ImpulseControl | ExtendedProcess,
    dyn: DelayDynamics,
    i: int,
    substeps: int = DEFAULT_SUBSTEPS,
    max_step: float | None = DEFAULT_MAX_STEP,
) -> StrictApproximation:
    """Strict-sense process number ``i`` of a converging sequence.

    The time change ``phi0`` of the canonical process is replaced by the
    strictly increasing ``(phi0 + eps p(s)) / (1 + eps p(S) / h)`` with
    ``eps = 2**-i`` and ``p(s)`` the plateau length in ``[0, s]``; the
    spatial components are kept, so the variation is unchanged.
    """
    if i < 1:
        raise ValueError("refinement index must be >= 1")
    ep0 = c if isinstance(c, ExtendedProcess) else impulse_to_extended(c, dyn, substeps, max_step)
    ec = canonicalize(ep0.ec)
    eps = 2.0 ** (-i)
    flat = (ec.w0 <= 0).astype(float)
    plen = float((flat * ec.ds).sum())
    scale = 1.0 + eps * plen / ec.h
    w0 = (ec.w0 + eps * flat) / scale
    knots = (ec.phi0_knots + eps * np.concatenate([[0.0], np.cumsum(flat * ec.ds)])) / scale
    knots[-1] = ec.h
    eci = ExtendedControl(ec.h, ec.mesh, w0, ec.w, knots)
    epi = integrate_acs(eci, dyn, substeps, max_step)
    ctrl = extended_to_impulse(eci, dyn)
    return StrictApproximation(i, ctrl, ImpulseTrajectory(epi, eci.sigma()), epi)


def control_residuals(a: ImpulseControl, b: ImpulseControl, samples: int = 1001) -> dict:
    """Sup differences of two impulse controls.

    Distribution functions of ``mu`` and ``nu`` are compared at a uniform
    grid plus every atom and breakpoint of either control (right and left
    values); attached controls by their integrals and ``l1`` integrals over
    the union of active parameters.
    """
    T = a.T
    ts = [np.linspace(0.0, T, samples)]
    for c in (a, b):
        ts += [c.mu.atom_times, c.nu.atom_times, c.mu.breaks, c.nu.breaks]
    t = np.unique(np.clip(np.concatenate(ts), 0.0, T))
    mu = max(
        float(np.abs(a.mu.distribution(t) - b.mu.distribution(t)).max()),
        float(np.abs(a.mu.distribution_left(t) - b.mu.distribution_left(t)).max()),
    )
    nu = max(
        float(np.abs(a.nu.distribution(t) - b.nu.distribution(t)).max()),
        float(np.abs(a.nu.distribution_left(t) - b.nu.distribution_left(t)).max()),
    )
    rs = sorted(set(a.attached.keys()) | set(b.attached.keys()))
    att = 0.0
    for r in rs:
        for l in range(1, a.N + 1):
            d = np.abs(a.attached.integral(r, l, a.m) - b.attached.integral(r, l, b.m)).max(initial=0.0)
            dn = abs(a.attached.norm_integral(r, l) - b.attached.norm_integral(r, l))
            att = max(att, float(d), dn)
    return {"mu": mu, "nu": nu, "attached": att}


def roundtrip(
    c: ImpulseControl,
    dyn: DelayDynamics,
    substeps: int = DEFAULT_SUBSTEPS,
    max_step: float | None = DEFAULT_MAX_STEP,
    tol: float = 1e-9,
) -> tuple[ImpulseControl, dict]:
    """Impulse -> extended -> impulse; returns the image and its residuals.

    Besides the control residuals the report holds the validation worst
    case of the image and the endpoint difference of the two processes.
    """
    ep = impulse_to_extended(c, dyn, substeps, max_step, tol)
    proc = extended_to_impulse(ep)
    back = proc.control
    res = control_residuals(c, back)
    res["validation"] = validate_impulse_control(back, tol).worst()
    ep2 = impulse_to_extended(back, dyn, substeps, max_step, tol)
    res["endpoint"] = float(np.abs(ep2.y_end - ep.y_end).max())
    return back, res
