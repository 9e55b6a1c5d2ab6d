"""Integration of the auxiliary time-space system by the method of steps.

For an extended control ``(phi0, phi_1..phi_N)`` on ``[0, S]`` the blocks

    dy_l/ds = f(tau_l, y_l, y_{l-1}, ..., y_{l-M}) dphi0/ds
              + sum_j g_j(tau_l, ...) dphi_l^j/ds,      tau_l = (l-1) h + phi0,

are solved one after another with classical RK4.  Slots with ``l - k <= 0``
are filled from the history, ``xi0(tau_l - k h)``.  Block ``l`` reuses the
stored RK4 stage values of blocks ``l-1..l-M`` at the same step, so the
sequential sweep reproduces RK4 applied to the whole triangular system and
keeps fourth order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DelayDynamics
from .graphcomp import ExtendedControl

DEFAULT_SUBSTEPS = 8
DEFAULT_MAX_STEP = 0.01


class NumericalFailure(ArithmeticError):
    """Dynamics produced non-finite values."""


def step_grid(
    ec: ExtendedControl,
    substeps: int = DEFAULT_SUBSTEPS,
    max_step: float | None = DEFAULT_MAX_STEP,
    levels=(),
):
    """Refined grid: ``substeps`` per cell, more on cells with long arc length.

    The count depends on ``rate * ds`` only, which is invariant under
    reparameterization, so equivalent controls get equivalent grids.  The
    grid is further split where ``phi0`` crosses one of ``levels`` (points
    where the history loses smoothness), which keeps RK4 at fourth order.
    """
    arc = ec.rate * ec.ds
    nsub = np.full(ec.K, int(substeps))
    if max_step is not None:
        nsub = np.maximum(nsub, np.ceil(arc / max_step - 1e-9).astype(int))
    cell = np.repeat(np.arange(ec.K), nsub)
    frac = np.concatenate([np.arange(1, n + 1) / n for n in nsub])
    s = np.concatenate([[0.0], ec.mesh[cell] + frac * ec.ds[cell]])
    ends = np.cumsum(nsub)
    s[ends] = ec.mesh[1:]
    levels = np.asarray(levels, float)
    if levels.size:
        kn = ec.phi0_knots
        extra = []
        for k in np.nonzero(ec.w0 > 0)[0]:
            hit = levels[(levels > kn[k]) & (levels < kn[k + 1])]
            extra.extend(ec.mesh[k] + (hit - kn[k]) / ec.w0[k])
        if extra:
            extra = np.asarray(extra)
            near = np.abs(extra[:, None] - s[None, :]).min(axis=1) <= 1e-10 * max(1.0, ec.S)
            s = np.union1d(s, extra[~near])
            cell = np.clip(np.searchsorted(ec.mesh, 0.5 * (s[:-1] + s[1:]), side="right") - 1, 0, ec.K - 1)
            nsub = np.bincount(cell, minlength=ec.K)
    return s, cell, nsub


def history_levels(dyn: DelayDynamics) -> np.ndarray:
    """Values of ``phi0`` in ``(0, h)`` where a history slot meets a breakpoint."""
    h = dyn.h
    inner = dyn.xi0.breaks[1:-1]
    out = []
    for l in range(1, dyn.N + 1):
        for k in range(l, dyn.M + 1):
            lv = inner + (k - l + 1) * h
            out.extend(lv[(lv > 1e-12 * h) & (lv < h * (1 - 1e-12))])
    return np.unique(out)


@dataclass(eq=False)
class ExtendedProcess:
    """Extended control with the solution ``(tau, y, beta)`` of the time-space system."""

    ec: ExtendedControl
    dyn: DelayDynamics
    s: np.ndarray  # (P+1,)
    cell: np.ndarray  # (P,)
    y: np.ndarray  # (N, P+1, n)
    dy0: np.ndarray  # (N, P, n) right side at step start
    dy1: np.ndarray  # (N, P, n) right side at step end (same control)
    beta: np.ndarray  # (N, P+1)
    substeps: int
    max_step: float | None

    @property
    def N(self) -> int:
        return self.ec.N

    @property
    def S(self) -> float:
        return self.ec.S

    @property
    def P(self) -> int:
        return self.cell.size

    def phi0_grid(self) -> np.ndarray:
        return self.ec.phi0_at(self.s)

    def tau(self, l: int, s):
        """``tau_l(s) = (l-1) h + phi0(s)`` (``l`` is 1-based)."""
        return (l - 1) * self.ec.h + self.ec.phi0_at(s)

    def _locate(self, s):
        s = np.asarray(s, float)
        p = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, self.P - 1)
        return s, p

    def y_at(self, l: int, s):
        """Cubic Hermite dense output of ``y_l`` (shape ``s.shape + (n,)``)."""
        s, p = self._locate(s)
        H = (self.s[p + 1] - self.s[p])[..., None]
        x = ((s - self.s[p])[..., None]) / H
        y0, y1 = self.y[l - 1, p], self.y[l - 1, p + 1]
        d0, d1 = self.dy0[l - 1, p], self.dy1[l - 1, p]
        h00 = 2 * x**3 - 3 * x**2 + 1
        h10 = x**3 - 2 * x**2 + x
        h01 = -2 * x**3 + 3 * x**2
        h11 = x**3 - x**2
        return h00 * y0 + h10 * H * d0 + h01 * y1 + h11 * H * d1

    def beta_at(self, l: int, s):
        return np.interp(s, self.s, self.beta[l - 1])

    def slots_at(self, l: int, s) -> np.ndarray:
        """Delay slots ``(y_l, y_{l-1}, ..., y_{l-M})`` at ``s`` (history where needed)."""
        s = np.asarray(s, float)
        dyn = self.dyn
        out = np.empty(s.shape + (dyn.M + 1, dyn.n))
        tau = self.tau(l, s)
        for k in range(dyn.M + 1):
            if l - k >= 1:
                out[..., k, :] = self.y_at(l - k, s)
            else:
                out[..., k, :] = dyn.xi0(tau - k * dyn.h)[0]
        return out

    @property
    def y_end(self) -> np.ndarray:
        return self.y[-1, -1].copy()

    @property
    def beta_end(self) -> float:
        return float(self.beta[-1, -1])

    def chaining_residual(self) -> float:
        r = 0.0
        for l in range(1, self.N):
            r = max(r, float(np.abs(self.y[l, 0] - self.y[l - 1, -1]).max()), abs(self.beta[l, 0] - self.beta[l - 1, -1]))
        r = max(r, float(np.abs(self.y[0, 0] - self.dyn.x0).max()), abs(self.beta[0, 0]))
        return r

    def write_csv(self, path) -> None:
        n = self.dyn.n
        ph = self.phi0_grid()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            head = ["s"]
            for l in range(1, self.N + 1):
                head += [f"tau_{l}"] + [f"y_{l}_{i}" for i in range(n)] + [f"beta_{l}"]
            wr.writerow(head)
            for p in range(self.s.size):
                row = [repr(float(self.s[p]))]
                for l in range(self.N):
                    row.append(repr(float(l * self.ec.h + ph[p])))
                    row += [repr(float(v)) for v in self.y[l, p]]
                    row.append(repr(float(self.beta[l, p])))
                wr.writerow(row)


def integrate_acs(
    ec: ExtendedControl,
    dyn: DelayDynamics,
    substeps: int = DEFAULT_SUBSTEPS,
    max_step: float | None = DEFAULT_MAX_STEP,
) -> ExtendedProcess:
    """Solve the time-space system block by block with stage-sharing RK4."""
    if ec.N != dyn.N or ec.m != dyn.m or abs(ec.h - dyn.h) > 1e-14 * max(1.0, dyn.h):
        raise ValueError("extended control and dynamics grid constants differ")
    N, M, n, m, h = dyn.N, dyn.M, dyn.n, dyn.m, dyn.h
    s, cell, nsub = step_grid(ec, substeps, max_step, history_levels(dyn))
    P = cell.size
    dsteps = np.diff(s)
    w0c = ec.w0[cell]
    knots = ec.phi0_knots
    ph_a = knots[cell] + w0c * (s[:-1] - ec.mesh[cell])
    ph_b = knots[cell] + w0c * (s[1:] - ec.mesh[cell])
    cell_end = np.zeros(P, bool)
    cell_end[np.cumsum(nsub) - 1] = True
    ph_b[cell_end] = knots[cell[cell_end] + 1]
    ph_a[np.concatenate([[True], cell_end[:-1]])] = knots[cell[np.concatenate([[True], cell_end[:-1]])]]
    ph_m = 0.5 * (ph_a + ph_b)

    rhs = dyn.rhs_scalar
    d_list = dsteps.tolist()
    w0_list = w0c.tolist()
    ph_a_l, ph_m_l, ph_b_l = ph_a.tolist(), ph_m.tolist(), ph_b.tolist()
    wcell = ec.w.tolist()  # [K][N][m]
    cell_l = cell.tolist()
    end_l = cell_end.tolist()

    Y = np.empty((N, P + 1, n))
    D0 = np.empty((N, P, n))
    D1 = np.empty((N, P, n))
    stages: list[list] = []  # per block: list over steps of 4 lists of n

    for l in range(N):  # 0-based block index
        # delayed slot values per step and stage, flattened slot-major
        hist = {}
        for k in range(1, M + 1):
            if l - k < 0:
                base = l * h - k * h
                va = dyn.xi0(base + ph_a)[0].tolist()
                vm = dyn.xi0(base + ph_m)[0].tolist()
                vb = dyn.xi0(base + ph_b)[0].tolist()
                hist[k] = (va, vm, vb)
        prev = [stages[l - k] if l - k >= 0 else None for k in range(1, M + 1)]

        y = list(dyn.x0) if l == 0 else Y[l - 1, P].tolist()
        tl = l * h
        Yl = [y]
        st_l = []
        k1s = []
        for p in range(P):
            c = cell_l[p]
            d = d_list[p]
            tail = [w0_list[p]] + wcell[c][l]
            s1, s2, s3, s4 = [], [], [], []
            for kk in range(1, M + 1):
                src = prev[kk - 1]
                if src is not None:
                    q = src[p]
                    s1 += q[0]
                    s2 += q[1]
                    s3 += q[2]
                    s4 += q[3]
                else:
                    va, vm, vb = hist[kk]
                    s1 += va[p]
                    s2 += vm[p]
                    s3 += vm[p]
                    s4 += vb[p]
            ta = tl + ph_a_l[p]
            tm = tl + ph_m_l[p]
            tb = tl + ph_b_l[p]
            k1 = rhs(ta, *y, *s1, *tail)
            y2 = [y[i] + 0.5 * d * k1[i] for i in range(n)]
            k2 = rhs(tm, *y2, *s2, *tail)
            y3 = [y[i] + 0.5 * d * k2[i] for i in range(n)]
            k3 = rhs(tm, *y3, *s3, *tail)
            y4 = [y[i] + d * k3[i] for i in range(n)]
            k4 = rhs(tb, *y4, *s4, *tail)
            st_l.append((y, y2, y3, y4))
            k1s.append(k1)
            y = [y[i] + d / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(n)]
            Yl.append(y)
        stages.append(st_l)
        Yarr = np.array(Yl)
        if not np.all(np.isfinite(Yarr)):
            raise NumericalFailure(f"non-finite state in block {l + 1}")
        Y[l] = Yarr
        D0[l] = np.array(k1s).reshape(P, n)
        # derivative at step ends: next step's first stage when the control is unchanged
        D1[l, :-1] = D0[l, 1:]
        for p in np.nonzero(cell_end)[0].tolist():
            c = cell_l[p]
            args = [tl + ph_b_l[p]] + Y[l, p + 1].tolist()
            for kk in range(1, M + 1):
                if l - kk >= 0:
                    args += Y[l - kk, p + 1].tolist()
                else:
                    args += hist[kk][2][p]
            args += [w0_list[p]] + wcell[c][l]
            D1[l, p] = rhs(*args)

    # beta is exact: its rate is constant on each cell
    speed = np.abs(ec.w).sum(axis=2)  # (K, N)
    inc = speed[cell] * dsteps[:, None]  # (P, N)
    beta = np.empty((N, P + 1))
    base = 0.0
    for l in range(N):
        beta[l] = base + np.concatenate([[0.0], np.cumsum(inc[:, l])])
        base = beta[l, -1]
    return ExtendedProcess(ec, dyn, s, cell, Y, D0, D1, beta, substeps, max_step)


def richardson_check(
    ec: ExtendedControl, dyn: DelayDynamics, base_substeps: int = 2, levels: int = 3, cap: float = 99.0
) -> float:
    """Observed convergence order from successive substep doublings.

    Errors of the end state and of the block-boundary values are measured
    against a run with ``2**(levels+1)`` times the base substeps; the order
    is the least-squares slope of ``-log2(error)`` over the levels.
    """
    ref = integrate_acs(ec, dyn, base_substeps * 2 ** (levels + 1), None)
    mesh_idx = lambda ep: np.searchsorted(ep.s, ec.mesh)
    ref_vals = ref.y[:, mesh_idx(ref)]
    errs = []
    for i in range(levels):
        ep = integrate_acs(ec, dyn, base_substeps * 2**i, None)
        errs.append(float(np.abs(ep.y[:, mesh_idx(ep)] - ref_vals).max()))
    errs = np.array(errs)
    scale = max(1.0, float(np.abs(ref_vals).max()))
    if np.all(errs <= 1e-13 * scale):
        return cap
    good = errs > 1e-13 * scale
    if good.sum() < 2:
        return cap
    x = np.arange(levels)[good]
    slope = np.polyfit(x, np.log2(errs[good]), 1)[0]
    return float(min(-slope, cap))
