"""Direct transcription of the extended Mayer problem.

Decision variables are the cell rates ``(w0^k, w^k)`` on a uniform mesh of
``[0, S]`` with ``S = h + C``.  Each cell stays in the relaxed simplex
``w0 >= 0, w_l in K, w0 + sum ||w_l||_1 <= 1``; idle slack is harmless by
rate independence.  For orthant cones the clock condition ``phi0(S) = h``
and the budget are part of the (convex) feasible set and enforced by an
exact projection; otherwise they join the target in an augmented
Lagrangian.  The inner problem is projected gradient with Armijo
backtracking and adjoint gradients.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint_pmp import TerminalLinearization, _Frame, cost_gradient
from .cone import ControlCone
from .dynamics import DelayDynamics, MayerProblemData, TargetBox, TargetLevelSet
from .extsys import ExtendedProcess, NumericalFailure, integrate_acs
from .graphcomp import ExtendedControl, canonicalize


class InfeasibleProblem(RuntimeError):
    def __init__(self, result: "OptimizeResult"):
        self.result = result
        super().__init__(
            "constraints stalled above threshold: "
            + ", ".join(f"{k}={v:.3e}" for k, v in result.residuals.items())
        )


@dataclass(frozen=True)
class TranscriptionConfig:
    K: int = 200
    substeps: int = 2
    max_outer: int = 30
    max_inner: int = 200
    tol: float = 1e-6  # gradient-map norm
    feas_tol: float = 1e-6
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e8
    armijo: float = 1e-4
    backtrack: float = 0.5
    step0: float = 1.0
    step_max: float = 1e4
    eps: float = 1e-6  # smoothing of ||.||_1 in the budget term
    proj_iters: int = 5
    memory: int = 1  # line-search reference window (1 = monotone)
    seed: int = 0
    init: str = "uniform"  # or "random"
    time_limit: float = 55.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.rho0 <= 0 or self.rho_growth <= 1:
            raise ValueError("penalties must be positive and grow")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    def horizon(self, h: float, C: float) -> float:
        return h + C


@dataclass(eq=False)
class OptimizeResult:
    ec: ExtendedControl  # canonical
    ep: ExtendedProcess  # of the canonical control
    raw: ExtendedControl  # fixed-horizon control before canonicalization
    objective: float
    residuals: dict
    multipliers: dict  # augmented-Lagrangian estimates
    trace: list = field(default_factory=list)
    status: str = "converged"
    seed: int = 0
    elapsed: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "outer", "objective", "merit", "phi0_gap", "target", "budget", "step", "gradmap"])
            for row in self.trace:
                wr.writerow([repr(v) if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# projection


def project_simplex_cell(w0, w, cone: ControlCone, iters: int = 5):
    """Feasible point of the relaxed cell set close to ``(w0, w)``.

    Clamp ``w0``, project each block onto the cone, then rescale when the
    budget ``w0 + sum ||w_l||_1`` exceeds one.  Works on a single cell
    (``w`` of shape ``(N, m)``) or a batch (``(K,)``, ``(K, N, m)``).
    """
    w0 = np.asarray(w0, float)
    w = np.asarray(w, float)
    single = w0.ndim == 0
    w0 = np.atleast_1d(w0).copy()
    w = w.reshape((w0.size,) + w.shape[-2:]).copy()
    for _ in range(max(1, iters)):
        w0 = np.maximum(w0, 0.0)
        if cone.is_orthant:
            sg = np.array(cone.signs)
            lo = np.where(sg == "+", 0.0, -np.inf)
            hi = np.where(sg == "-", 0.0, np.inf)
            w = np.clip(w, lo, hi)
        else:
            flat = w.reshape(-1, w.shape[-1])
            w = np.array([cone.project(v) for v in flat]).reshape(w.shape)
        tot = w0 + np.abs(w).sum(axis=(1, 2))
        over = tot > 1.0
        if not np.any(over):
            break
        f = np.where(over, 1.0 / np.where(over, tot, 1.0), 1.0)
        w0 = w0 * f
        w = w * f[:, None, None]
    # final exact feasibility
    tot = w0 + np.abs(w).sum(axis=(1, 2))
    f = np.where(tot > 1.0, 1.0 / np.maximum(tot, 1e-300), 1.0)
    w0, w = w0 * f, w * f[:, None, None]
    if single:
        return float(w0[0]), w[0]
    return w0, w


def _to_u(w0, w, cone: ControlCone):
    """Magnitudes ``U = [w0, |w|]`` per cell and the signs to restore ``w``."""
    w0 = np.atleast_1d(np.asarray(w0, float))
    w = np.asarray(w, float).reshape((w0.size,) + np.shape(w)[-2:])
    K = w0.size
    sg = np.array(cone.signs)
    sign = np.where(sg == "-", -1.0, 1.0)
    free = np.broadcast_to(sg == "free", w.shape)
    # negative parts of fixed-sign components are clipped by the projection
    u = np.where(free, np.abs(w), w * sign).reshape(K, -1)
    out_sign = np.where(free, np.where(w < 0, -1.0, 1.0), sign).reshape(K, -1)
    return np.concatenate([w0[:, None], u], axis=1), out_sign, w.shape


def _cap_simplex(U):
    """Row-wise projection onto ``{z >= 0, sum z <= 1}``."""
    Z = np.maximum(U, 0.0)
    over = Z.sum(axis=1) > 1.0
    if np.any(over):
        Uo = U[over]
        srt = -np.sort(-Uo, axis=1)
        css = np.cumsum(srt, axis=1) - 1.0
        idx = np.arange(1, Uo.shape[1] + 1)
        cond = srt - css / idx > 0
        rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = css[np.arange(Uo.shape[0]), rho] / (rho + 1)
        Z[over] = np.maximum(Uo - theta[:, None], 0.0)
    return Z


def project_cells(w0, w, cone: ControlCone, iters: int = 5):
    """Euclidean projection onto the relaxed cell set for orthant cones.

    With signs fixed by the orthant the set is a face-restricted
    ``l1`` ball, so the projection is a soft threshold at the level found by
    sorting.  Other cones fall back to :func:`project_simplex_cell`.
    """
    if not cone.is_orthant:
        return project_simplex_cell(w0, w, cone, iters)
    U, out_sign, shape = _to_u(w0, w, cone)
    Z = _cap_simplex(U)
    return Z[:, 0], (Z[:, 1:] * out_sign).reshape(shape)


def project_feasible(w0, w, ds, h: float, C: float, cone: ControlCone):
    """Euclidean projection onto cells with ``sum ds*w0 = h`` and ``sum ds*||w||_1 <= C``.

    Orthant cones only.  The minimiser is the cell projection of
    ``(w0 + mu, |w| - nu)``; ``mu`` and ``nu >= 0`` are found by nested
    root finding on the two monotone constraint maps.
    """
    from scipy.optimize import brentq

    ds = np.asarray(ds, float)
    U, out_sign, shape = _to_u(w0, w, cone)
    shift_w = np.zeros(U.shape[1])
    shift_w[1:] = 1.0
    big = 2.0 + np.abs(U).max()

    def at(mu, nu):
        V = U.copy()
        V[:, 0] += mu
        V[:, 1:] -= nu
        return _cap_simplex(V)

    def solve_mu(nu):
        f = lambda mu: float(ds @ at(mu, nu)[:, 0]) - h
        lo, hi = -big - nu, big + nu
        if f(hi) <= 0.0:
            return hi
        return brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)

    def budget(nu):
        return float(ds @ at(solve_mu(nu), nu)[:, 1:].sum(axis=1)) - C

    nu = 0.0
    if budget(0.0) > 0.0:
        hi = 1.0
        while budget(hi) > 0.0:
            hi *= 2.0
        nu = brentq(budget, 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    Z = at(solve_mu(nu), nu)
    return Z[:, 0], (Z[:, 1:] * out_sign).reshape(shape)


# ---------------------------------------------------------------------------
# objective


@dataclass(eq=False)
class _Problem:
    dyn: DelayDynamics
    problem: MayerProblemData
    cone: ControlCone
    cfg: TranscriptionConfig
    mesh: np.ndarray

    @property
    def ds(self) -> np.ndarray:
        return np.diff(self.mesh)

    @property
    def exact(self) -> bool:
        # clock and budget constraints are enforced by the projection
        return self.cone.is_orthant

    def project(self, w0, w):
        if self.exact:
            return project_feasible(w0, w, self.ds, self.dyn.h, self.problem.C, self.cone)
        return project_cells(w0, w, self.cone, self.cfg.proj_iters)

    def control(self, w0, w) -> ExtendedControl:
        return ExtendedControl(self.dyn.h, self.mesh, w0, w)

    def simulate(self, w0, w) -> ExtendedProcess:
        return integrate_acs(self.control(w0, w), self.dyn, self.cfg.substeps, None)

    def pieces(self, ep: ExtendedProcess):
        """Constraint values ``(phi0(S) - h, target violations, smoothed budget - C)``."""
        ec = ep.ec
        gap = float(ec.phi0_knots[-1] - self.dyn.h)
        tv = self.problem.target.violation(ep.y_end) if self.problem.target is not None else np.zeros(0)
        if self.exact:
            beta = float((self.ds[:, None, None] * np.abs(ec.w)).sum())
        else:
            beta = float((self.ds[:, None, None] * np.sqrt(ec.w**2 + self.cfg.eps**2)).sum())
        return gap, tv, beta - self.problem.C

    def merit(self, ep: ExtendedProcess, lam_e, lam_t, lam_b, rho):
        phi, _ = self.problem.cost_grad(ep.y_end)
        gap, tv, bg = self.pieces(ep)
        val = phi + float(np.sum(0.5 * rho * np.maximum(0.0, tv + lam_t / rho) ** 2 - lam_t**2 / (2 * rho)))
        if not self.exact:
            val += lam_e * gap + 0.5 * rho * gap**2
            val += 0.5 * rho * max(0.0, bg + lam_b / rho) ** 2 - lam_b**2 / (2 * rho)
        return val, phi

    def gradient(self, ep: ExtendedProcess, lam_e, lam_t, lam_b, rho):
        _, dphi = self.problem.cost_grad(ep.y_end)
        gap, tv, bg = self.pieces(ep)
        dy = dphi.copy()
        tgt = self.problem.target
        if tgt is not None:
            mult = np.maximum(0.0, lam_t + rho * tv)
            if isinstance(tgt, TargetBox):
                n = ep.dyn.n
                dy += -mult[:n] + mult[n:]
            else:
                _, gpsi = tgt.value_grad(ep.y_end)
                dy += mult[0] * gpsi
        if self.exact:
            lin = TerminalLinearization(dy, 0.0, 0.0, self.cfg.eps)
        else:
            lin = TerminalLinearization(dy, lam_e + rho * gap, max(0.0, lam_b + rho * bg), self.cfg.eps)
        return cost_gradient(ep, lin)


def _initial(pb: _Problem, rng: np.random.Generator, kind: str):
    K, N, m = pb.cfg.K, pb.dyn.N, pb.dyn.m
    S = pb.mesh[-1]
    h = pb.dyn.h
    w0 = np.full(K, h / S)
    if kind == "uniform":
        w = np.zeros((K, N, m))
        rays = pb.cone.rays()
        if pb.problem.C > 0 and rays.shape[0]:
            # spread the budget evenly over blocks and generators
            w[:] = (pb.problem.C / S) / N * rays.mean(axis=0)
    else:
        rays = pb.cone.rays()
        mix = rng.dirichlet(np.ones(rays.shape[0]), size=(K, N)) @ rays
        share = rng.dirichlet(np.ones(N), size=K)
        amp = rng.uniform(0.0, 1.0, K) * (pb.problem.C / S)
        w = mix * (share * amp[:, None])[:, :, None]
    return pb.project(w0, w)


def _gradmap(pb: _Problem, w0, w, g0, gw, step: float) -> float:
    a0, a = pb.project(w0 - step * g0 / pb.ds, w - step * gw / pb.ds[:, None, None])
    return float(max(np.abs(a0 - w0).max(), np.abs(a - w).max(initial=0.0))) / step


def _relaxed_history(dyn: DelayDynamics) -> DelayDynamics:
    """Same dynamics with the history continued linearly beyond its interval."""
    return replace(dyn, xi0=replace(dyn.xi0, extend=True), _cache={})


def _solve_single(dyn, problem, cone, cfg: TranscriptionConfig, seed: int) -> OptimizeResult:
    t_start = time.perf_counter()
    exact_dyn = dyn
    dyn = _relaxed_history(dyn)
    h, C = dyn.h, problem.C
    S = cfg.horizon(h, C)
    pb = _Problem(dyn, problem, cone, cfg, np.linspace(0.0, S, cfg.K + 1))
    if C == 0:
        w0 = np.ones(cfg.K)
        w = np.zeros((cfg.K, dyn.N, dyn.m))
        pb = replace(pb, dyn=exact_dyn)
        return _finish(pb, w0, w, {"phi0": 0.0, "target": np.zeros(0), "budget": 0.0}, [], "converged", seed, t_start)

    rng = np.random.default_rng(seed)
    w0, w = _initial(pb, rng, "uniform" if (cfg.init == "uniform" and seed == cfg.seed) else "random")
    ntv = 0 if problem.target is None else problem.target.violation(dyn.x0).size
    lam_e, lam_t, lam_b = 0.0, np.zeros(ntv), 0.0
    rho = cfg.rho0
    trace = []
    ep = pb.simulate(w0, w)
    step = cfg.step0
    it = 0
    status = "max_iter"
    prev_viol = np.inf
    for outer in range(cfg.max_outer):
        val, phi = pb.merit(ep, lam_e, lam_t, lam_b, rho)
        hist = [val]  # nonmonotone reference values
        g0, gw = pb.gradient(ep, lam_e, lam_t, lam_b, rho)
        for inner in range(cfg.max_inner):
            gm = _gradmap(pb, w0, w, g0, gw, 1e-3)
            if gm <= cfg.tol:
                break
            # spectral projected gradient: trial point at the BB step, then
            # nonmonotone backtracking along the projected direction
            d0, d = pb.project(w0 - step * g0 / pb.ds, w - step * gw / pb.ds[:, None, None])
            d0, d = d0 - w0, d - w
            slope = float(np.sum(g0 * d0) + np.sum(gw * d))
            ref = max(hist[-cfg.memory:])
            lam = 1.0
            accepted = False
            while lam > 1e-12:
                a0, a = w0 + lam * d0, w + lam * d
                try:
                    ep_new = pb.simulate(a0, a)
                    new_val, new_phi = pb.merit(ep_new, lam_e, lam_t, lam_b, rho)
                except (NumericalFailure, ArithmeticError, OverflowError):
                    new_val = math.inf
                if np.isfinite(new_val) and new_val <= ref + cfg.armijo * lam * slope:
                    accepted = True
                    break
                lam *= cfg.backtrack
            it += 1
            if not accepted:
                break
            ng0, ngw = pb.gradient(ep_new, lam_e, lam_t, lam_b, rho)
            s0, sw = a0 - w0, a - w
            y0, yw = (ng0 - g0) / pb.ds, (ngw - gw) / pb.ds[:, None, None]
            sy = float(np.sum(s0 * y0) + np.sum(sw * yw))
            ss = float(np.sum(s0 * s0) + np.sum(sw * sw))
            moved = float(max(np.abs(s0).max(), np.abs(sw).max(initial=0.0)))
            w0, w, ep, val, phi, g0, gw = a0, a, ep_new, new_val, new_phi, ng0, ngw
            hist.append(val)
            gap, tv, bg = pb.pieces(ep)
            trace.append((it, outer, phi, val, gap, float(np.maximum(tv, 0).max(initial=0.0)), max(bg, 0.0), step * lam, gm))
            # capped so the projection input stays well scaled
            step = min(max(ss / sy, 1e-10), cfg.step_max) if sy > 0 else cfg.step_max
            if moved <= 1e-15 or time.perf_counter() - t_start > cfg.time_limit:
                break
        gap, tv, bg = pb.pieces(ep)
        viol = max(abs(gap), float(np.maximum(tv, 0).max(initial=0.0)), max(bg, 0.0))
        lam_e += rho * gap
        lam_t = np.maximum(0.0, lam_t + rho * tv)
        lam_b = max(0.0, lam_b + rho * bg)
        if viol <= cfg.feas_tol and gm <= 10 * cfg.tol:
            status = "converged"
            break
        if viol > 0.25 * prev_viol and rho < cfg.rho_max:
            rho = min(rho * cfg.rho_growth, cfg.rho_max)
        prev_viol = viol
        if time.perf_counter() - t_start > cfg.time_limit:
            status = "time_limit"
            break
    pb = replace(pb, dyn=exact_dyn)
    res = _finish(pb, w0, w, {"phi0": lam_e, "target": lam_t, "budget": lam_b}, trace, status, seed, t_start)
    return res


def split_mixed_cells(mesh, w0, w, tol: float = 1e-12):
    """Split cells that mix drift and jump next to a pure-jump cell.

    Such a cell is where the mesh cut an atom's edge.  It becomes a pure
    drift piece and a pure jump piece (jump side towards the neighbouring
    plateau) with the same rate sum, so ``phi0`` and ``beta`` at the cell
    ends are unchanged.
    """
    mesh = np.asarray(mesh, float)
    nw = np.abs(w).sum(axis=(1, 2))
    mixed = (w0 > tol) & (nw > tol)
    jump = (w0 <= tol) & (nw > tol)
    K = w0.size
    new_mesh, new_w0, new_w = [mesh[0]], [], []
    for k in range(K):
        ds = mesh[k + 1] - mesh[k]
        right = k + 1 < K and jump[k + 1]
        left = k > 0 and jump[k - 1]
        if not (mixed[k] and (left or right)):
            new_mesh.append(mesh[k + 1])
            new_w0.append(w0[k])
            new_w.append(w[k])
            continue
        tot = w0[k] + nw[k]
        a = ds * w0[k] / tot
        drift = (a, tot, np.zeros_like(w[k]))
        jmp = (ds - a, 0.0, w[k] * (tot / nw[k]))
        for length, r0, rw in ((drift, jmp) if right else (jmp, drift)):
            new_mesh.append(new_mesh[-1] + length)
            new_w0.append(r0)
            new_w.append(rw)
    new_mesh[-1] = mesh[-1]
    return np.array(new_mesh), np.array(new_w0), np.array(new_w)


def _finish(pb: _Problem, w0, w, mults, trace, status, seed, t_start) -> OptimizeResult:
    dyn, problem, cfg = pb.dyn, pb.problem, pb.cfg
    raw = pb.control(w0, w)
    phi0_end = raw.phi0_knots[-1]
    if phi0_end > 0:
        raw = pb.control(w0 * (dyn.h / phi0_end), w)
    mesh, a0, a = split_mixed_cells(raw.mesh, raw.w0, raw.w)
    ec = canonicalize(ExtendedControl(dyn.h, mesh, a0, a))
    # canonical cells can be long; keep the arc-length step of the transcription
    ep = integrate_acs(ec, dyn, cfg.substeps, pb.mesh[-1] / (cfg.K * cfg.substeps))
    y = ep.y_end
    res = {
        "phi0_gap": float(abs(raw.phi0_knots[-1] - dyn.h)),
        "target_distance": float(problem.target_distance(y)),
        "budget_excess": float(max(0.0, ep.beta_end - problem.C)),
    }
    if not np.all(np.isfinite(y)):
        raise NumericalFailure("non-finite endpoint")
    if status != "converged" and (res["target_distance"] > 10 * cfg.feas_tol or res["budget_excess"] > 10 * cfg.feas_tol):
        status = "infeasible"
    mults = {k: (v.tolist() if isinstance(v, np.ndarray) else float(v)) for k, v in mults.items()}
    return OptimizeResult(
        ec, ep, raw, problem.cost(y), res, mults, trace, status, seed, time.perf_counter() - t_start
    )


def solve_pext(
    dyn: DelayDynamics,
    problem: MayerProblemData,
    cone: ControlCone,
    cfg: TranscriptionConfig = TranscriptionConfig(),
    restarts: int = 1,
    workers: int | None = None,
) -> OptimizeResult:
    """Best of ``restarts`` solves (seed ``cfg.seed + i``); raises when infeasible."""
    results = solve_restarts(dyn, problem, cone, cfg, restarts, workers)
    feas = [r for r in results if r.feasible]
    if not feas:
        best = min(results, key=lambda r: sum(r.residuals.values()))
        raise InfeasibleProblem(best)
    return min(feas, key=lambda r: r.objective)


def solve_restarts(
    dyn: DelayDynamics,
    problem: MayerProblemData,
    cone: ControlCone,
    cfg: TranscriptionConfig = TranscriptionConfig(),
    restarts: int = 1,
    workers: int | None = None,
) -> list[OptimizeResult]:
    """Independent solves from the seeds ``cfg.seed .. cfg.seed + restarts - 1``."""
    seeds = [cfg.seed + i for i in range(max(1, restarts))]
    if len(seeds) == 1 or workers == 1:
        return [_solve_single(dyn, problem, cone, cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(_solve_single, dyn, problem, cone, cfg, s) for s in seeds]
        return [f.result() for f in futs]
