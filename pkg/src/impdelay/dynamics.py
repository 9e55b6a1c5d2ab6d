"""Problem data for delay control systems.

The state equation is

    dx/dt = f(t, x(t), x(t-h), ..., x(t-Mh)) + sum_j g_j(t, ...) du^j/dt

with a C^1 history xi0 on [-Mh, 0) and initial value x0 at t = 0.  Scenario
expressions use the variables ``t`` and ``x{k}_{i}`` (delay slot ``k``,
component ``i``); when ``n == 1`` the shorthand ``x{k}`` is accepted.
Terminal-cost and target expressions use ``x{i}`` for the components of the
final state (``x`` alone when ``n == 1``).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as E


# ---------------------------------------------------------------------------
# History


@dataclass(frozen=True, eq=False)
class HermiteHistory:
    """Piecewise cubic Hermite interpolant on ``[breaks[0], breaks[-1]]``.

    With ``extend`` the interpolant continues linearly with its end slopes
    outside the interval, so the extension is C1; optimizer iterates with
    ``phi0(S) != h`` may look there.
    """

    breaks: np.ndarray
    values: np.ndarray  # (p+1, n)
    slopes: np.ndarray  # (p+1, n)
    extend: bool = False

    def __post_init__(self):
        b = np.asarray(self.breaks, float)
        v = np.asarray(self.values, float)
        d = np.asarray(self.slopes, float)
        if v.ndim == 1:
            v = v[:, None]
        if d.ndim == 1:
            d = d[:, None]
        if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0):
            raise ValueError("history breakpoints must be strictly increasing, at least two")
        if v.shape[0] != b.size or d.shape != v.shape:
            raise ValueError("history values/slopes must have one row per breakpoint")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "slopes", d)
        object.__setattr__(self, "_blist", b.tolist())
        object.__setattr__(self, "_vlist", v.tolist())
        object.__setattr__(self, "_dlist", d.tolist())

    @classmethod
    def constant(cls, value, t0: float) -> "HermiteHistory":
        value = np.atleast_1d(np.asarray(value, float))
        return cls(np.array([t0, 0.0]), np.vstack([value, value]), np.zeros((2, value.size)))

    @classmethod
    def from_function(cls, fun, dfun, breaks) -> "HermiteHistory":
        breaks = np.asarray(breaks, float)
        vals = np.array([np.atleast_1d(fun(b)) for b in breaks])
        slopes = np.array([np.atleast_1d(dfun(b)) for b in breaks])
        return cls(breaks, vals, slopes)

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def _check(self, t):
        if self.extend:
            return
        lo, hi = self.breaks[0], self.breaks[-1]
        tol = 1e-12 * max(1.0, hi - lo)
        if np.any(np.asarray(t) < lo - tol) or np.any(np.asarray(t) > hi + tol):
            raise ValueError(f"history queried outside [{lo}, {hi}]")

    def __call__(self, t):
        """Value and slope at ``t`` (arrays of shape ``t.shape + (n,)``)."""
        t = np.asarray(t, float)
        self._check(t)
        b = self.breaks
        k = np.clip(np.searchsorted(b, t, side="right") - 1, 0, b.size - 2)
        H = b[k + 1] - b[k]
        x = np.clip((t - b[k]) / H, 0.0, 1.0)[..., None]
        H = H[..., None]
        v0, v1 = self.values[k], self.values[k + 1]
        d0, d1 = self.slopes[k], self.slopes[k + 1]
        h00 = 2 * x**3 - 3 * x**2 + 1
        h10 = x**3 - 2 * x**2 + x
        h01 = -2 * x**3 + 3 * x**2
        h11 = x**3 - x**2
        val = h00 * v0 + h10 * H * d0 + h01 * v1 + h11 * H * d1
        dh00 = 6 * x**2 - 6 * x
        dh10 = 3 * x**2 - 4 * x + 1
        dh01 = -6 * x**2 + 6 * x
        dh11 = 3 * x**2 - 2 * x
        slope = (dh00 * v0 + dh01 * v1) / H + dh10 * d0 + dh11 * d1
        if self.extend:
            lo, hi = t < b[0], t > b[-1]
            val = np.where(lo[..., None], self.values[0] + (t - b[0])[..., None] * self.slopes[0], val)
            val = np.where(hi[..., None], self.values[-1] + (t - b[-1])[..., None] * self.slopes[-1], val)
            slope = np.where(lo[..., None], self.slopes[0], np.where(hi[..., None], self.slopes[-1], slope))
        return val, slope

    def value_scalar(self, t: float) -> list[float]:
        """Fast path used inside the integrators."""
        b = self._blist
        k = bisect.bisect_right(b, t) - 1
        if k < 0:
            k = 0
        elif k > len(b) - 2:
            k = len(b) - 2
        if t < b[0] or t > b[-1]:
            i = 0 if t < b[0] else -1
            return [v + (t - b[i]) * d for v, d in zip(self._vlist[i], self._dlist[i])]
        H = b[k + 1] - b[k]
        x = min(max((t - b[k]) / H, 0.0), 1.0)
        x2 = x * x
        x3 = x2 * x
        h00 = 2 * x3 - 3 * x2 + 1
        h10 = (x3 - 2 * x2 + x) * H
        h01 = -2 * x3 + 3 * x2
        h11 = (x3 - x2) * H
        v0, v1, d0, d1 = self._vlist[k], self._vlist[k + 1], self._dlist[k], self._dlist[k + 1]
        return [h00 * v0[i] + h10 * d0[i] + h01 * v1[i] + h11 * d1[i] for i in range(len(v0))]

    def slope_scalar(self, t: float) -> list[float]:
        b = self._blist
        k = bisect.bisect_right(b, t) - 1
        if k < 0:
            k = 0
        elif k > len(b) - 2:
            k = len(b) - 2
        if t < b[0] or t > b[-1]:
            return list(self._dlist[0 if t < b[0] else -1])
        H = b[k + 1] - b[k]
        x = (t - b[k]) / H
        dh00 = (6 * x * x - 6 * x) / H
        dh10 = 3 * x * x - 4 * x + 1
        dh01 = -dh00
        dh11 = 3 * x * x - 2 * x
        v0, v1, d0, d1 = self._vlist[k], self._vlist[k + 1], self._dlist[k], self._dlist[k + 1]
        return [dh00 * v0[i] + dh10 * d0[i] + dh01 * v1[i] + dh11 * d1[i] for i in range(len(v0))]

    def __getstate__(self):
        return {"breaks": self.breaks, "values": self.values, "slopes": self.slopes, "extend": self.extend}

    def __setstate__(self, state):
        self.__init__(state["breaks"], state["values"], state["slopes"], state.get("extend", False))


def history(xi0: HermiteHistory, t):
    """Value and slope of the history at ``t``."""
    val, slope = xi0(t)
    return val, slope


# ---------------------------------------------------------------------------
# Dynamics


def state_variables(n: int, M: int) -> list[str]:
    return ["t"] + [f"x{k}_{i}" for k in range(M + 1) for i in range(n)]


def state_aliases(n: int, M: int) -> dict[str, int]:
    if n != 1:
        return {}
    return {f"x{k}": 1 + k for k in range(M + 1)}


@dataclass(frozen=True, eq=False)
class DelayDynamics:
    """Delay dynamics with drift ``f`` and control fields ``g_1..g_m``.

    ``f`` holds ``n`` expression strings, ``g[j]`` holds ``n`` strings for the
    ``j``-th control direction.
    """

    n: int
    m: int
    M: int
    N: int
    h: float
    f: tuple[str, ...]
    g: tuple[tuple[str, ...], ...]
    xi0: HermiteHistory
    x0: np.ndarray
    bound: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 1 or self.M < 0 or self.N < self.M:
            raise ValueError("grid constants must satisfy N >= 1 and N >= M >= 0")
        if not self.h > 0:
            raise ValueError("delay h must be positive")
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "g", tuple(tuple(gj) for gj in self.g))
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, float)))
        if len(self.f) != self.n or len(self.g) != self.m or any(len(gj) != self.n for gj in self.g):
            raise ValueError("f needs n components and g needs m fields of n components")
        if self.x0.shape != (self.n,) or self.xi0.n != self.n:
            raise ValueError("initial value and history must have n components")
        lo = self.xi0.breaks[0]
        if lo > -self.M * self.h + 1e-12 * self.h or self.xi0.breaks[-1] < -1e-12:
            raise ValueError("history must be defined on [-Mh, 0]")
        self.asts  # parse eagerly so bad input fails at construction

    @property
    def T(self) -> float:
        return self.N * self.h

    @property
    def variables(self) -> list[str]:
        return state_variables(self.n, self.M)

    @property
    def nargs(self) -> int:
        return 1 + (self.M + 1) * self.n

    @property
    def asts(self):
        if "asts" not in self._cache:
            names = self.variables
            aliases = state_aliases(self.n, self.M)
            fa = [E.parse_expression(s, names, aliases) for s in self.f]
            ga = [[E.parse_expression(s, names, aliases) for s in gj] for gj in self.g]
            self._cache["asts"] = (fa, ga)
        return self._cache["asts"]

    # compiled kernels -----------------------------------------------------
    def _hamiltonian_nodes(self):
        """``H = q . (f w0 + sum_j g_j w_j)`` over ``[t, x.., w0, w.., q..]``."""
        fa, ga = self.asts
        base = self.nargs
        w0 = E.Var("w0", base)
        ws = [E.Var(f"w{j + 1}", base + 1 + j) for j in range(self.m)]
        qs = [E.Var(f"q{i}", base + 1 + self.m + i) for i in range(self.n)]
        rhs = []
        for i in range(self.n):
            node = E.Binary("*", fa[i], w0)
            for j in range(self.m):
                node = E.Binary("+", node, E.Binary("*", ga[j][i], ws[j]))
            rhs.append(node)
        ham = E.Binary("*", qs[0], rhs[0])
        for i in range(1, self.n):
            ham = E.Binary("+", ham, E.Binary("*", qs[i], rhs[i]))
        return rhs, ham

    @property
    def rhs_scalar(self):
        """``(t, x.., w0, w..) -> tuple`` of the n components of f w0 + g w."""
        if "rhs" not in self._cache:
            rhs, _ = self._hamiltonian_nodes()
            self._cache["rhs"] = E.compile_vector(rhs, self.nargs + 1 + self.m)
        return self._cache["rhs"]

    @property
    def ham_grad_scalar(self):
        """``(t, x.., w0, w.., q..) -> ((H,), (grad,))`` with the full gradient."""
        if "hamg" not in self._cache:
            _, ham = self._hamiltonian_nodes()
            nv = self.nargs + 1 + self.m + self.n
            self._cache["hamg"] = E.compile_vector([ham], nv, with_grad=True)
        return self._cache["hamg"]

    @property
    def ham_grad_vec(self):
        if "hamgv" not in self._cache:
            _, ham = self._hamiltonian_nodes()
            nv = self.nargs + 1 + self.m + self.n
            self._cache["hamgv"] = E.compile_vector([ham], nv, with_grad=True, vectorized=True)
        return self._cache["hamgv"]

    @property
    def fg_vec(self):
        """Vectorized ``(t, x..) -> values`` of ``f`` then all ``g_j``."""
        if "fgv" not in self._cache:
            fa, ga = self.asts
            nodes = list(fa) + [node for gj in ga for node in gj]
            self._cache["fgv"] = E.compile_vector(nodes, self.nargs, vectorized=True)
        return self._cache["fgv"]

    @property
    def fg_jac_vec(self):
        if "fgjv" not in self._cache:
            fa, ga = self.asts
            nodes = list(fa) + [node for gj in ga for node in gj]
            self._cache["fgjv"] = E.compile_vector(nodes, self.nargs, with_grad=True, vectorized=True)
        return self._cache["fgjv"]

    def eval_fg(self, t, slots):
        """``f`` (..., n) and ``g`` (..., m, n) at time ``t`` and delay slots.

        ``slots`` has shape ``(..., M+1, n)``.
        """
        t = np.asarray(t, float)
        slots = np.asarray(slots, float)
        shape = np.broadcast_shapes(t.shape, slots.shape[:-2])
        args = [np.broadcast_to(t, shape)]
        for k in range(self.M + 1):
            for i in range(self.n):
                args.append(np.broadcast_to(slots[..., k, i], shape))
        vals = self.fg_vec(*args)
        vals = np.stack([np.broadcast_to(np.asarray(v, float), shape) for v in vals], axis=-1)
        f = vals[..., : self.n]
        g = vals[..., self.n :].reshape(shape + (self.m, self.n))
        return f, g

    def eval_fg_jac(self, t, slots):
        """Values and Jacobians.

        Returns ``f, g, df, dg`` where ``df`` has shape ``(..., n, nargs)`` and
        ``dg`` has shape ``(..., m, n, nargs)``; argument 0 is ``t`` and
        argument ``1 + k*n + i`` is component ``i`` of delay slot ``k``.
        """
        t = np.asarray(t, float)
        slots = np.asarray(slots, float)
        shape = np.broadcast_shapes(t.shape, slots.shape[:-2])
        args = [np.broadcast_to(t, shape)]
        for k in range(self.M + 1):
            for i in range(self.n):
                args.append(np.broadcast_to(slots[..., k, i], shape))
        vals, grads = self.fg_jac_vec(*args)
        b = lambda v: np.broadcast_to(np.asarray(v, float), shape)
        V = np.stack([b(v) for v in vals], axis=-1)
        G = np.stack([np.stack([b(x) for x in row], axis=-1) for row in grads], axis=-2)
        n, m = self.n, self.m
        return (
            V[..., :n],
            V[..., n:].reshape(shape + (m, n)),
            G[..., :n, :],
            G[..., n:, :].reshape(shape + (m, n, self.nargs)),
        )

    def history_slot_time(self, l: int, k: int, tau_l):
        """Argument of the history for block ``l`` (1-based) and delay ``k``."""
        return tau_l - k * self.h

    def eval_stacked(self, l: int, times: dict[int, float], states: dict[int, np.ndarray]):
        """Stacked maps ``F_l`` and ``G_{j_l}``.

        ``times`` maps block index to ``t_k`` and ``states`` maps block index
        to ``x_k``.  For ``l <= M`` the history slots ``k >= l`` are filled
        with ``xi0(t_{M+l-k} - Mh)``; for ``l > M`` the slots are the states
        ``x_{l-k}``.
        """
        if not 1 <= l <= self.N:
            raise IndexError(f"block index {l} outside 1..{self.N}")
        slots = np.zeros((self.M + 1, self.n))
        for k in range(self.M + 1):
            if l - k >= 1:
                slots[k] = states[l - k]
            else:
                tk = times[self.M + l - k]
                slots[k] = self.xi0(tk - self.M * self.h)[0]
        f, g = self.eval_fg(times[l], slots)
        return f, g

    def sample_bound(self, box: float = 10.0, samples: int = 200, seed: int = 0) -> float:
        """Largest sampled ``max(|f|, |g_j|)`` on a box; compared with ``bound``."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, self.T, samples)
        slots = rng.uniform(-box, box, (samples, self.M + 1, self.n))
        f, g = self.eval_fg(t, slots)
        return float(max(np.abs(f).max(initial=0.0), np.abs(g).max(initial=0.0)))

    def __getstate__(self):
        state = {k: getattr(self, k) for k in ("n", "m", "M", "N", "h", "f", "g", "xi0", "x0", "bound")}
        return state

    def __setstate__(self, state):
        for k, v in state.items():
            object.__setattr__(self, k, v)
        object.__setattr__(self, "_cache", {})


# ---------------------------------------------------------------------------
# Mayer problem


def final_variables(n: int) -> tuple[list[str], dict[str, int]]:
    names = [f"x{i}" for i in range(n)]
    return names, ({"x": 0} if n == 1 else {})


@dataclass(frozen=True, eq=False)
class TargetBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, float)
        hi = np.asarray(self.hi, float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("target box needs lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def violation(self, x) -> np.ndarray:
        """Signed hinge per face: positive entries are violations."""
        x = np.asarray(x, float)
        return np.concatenate([self.lo - x, x - self.hi])

    def distance(self, x) -> float:
        x = np.asarray(x, float)
        return float(np.linalg.norm(x - np.clip(x, self.lo, self.hi)))

    def normal_basis(self, x, tol: float = 1e-6) -> np.ndarray:
        """Rows spanning the normal cone (nonnegative combinations)."""
        x = np.asarray(x, float)
        rows = []
        for i in range(x.size):
            e = np.zeros(x.size)
            if x[i] <= self.lo[i] + tol:
                e[i] = -1.0
                rows.append(e.copy())
            if x[i] >= self.hi[i] - tol:
                e[i] = 1.0
                rows.append(e.copy())
        return np.array(rows).reshape(-1, x.size)


@dataclass(frozen=True, eq=False)
class TargetLevelSet:
    psi: str
    n: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.compiled

    @property
    def compiled(self):
        if "fn" not in self._cache:
            names, aliases = final_variables(self.n)
            node = E.parse_expression(self.psi, names, aliases)
            self._cache["fn"] = E.compile_vector([node], self.n, with_grad=True)
        return self._cache["fn"]

    def value_grad(self, x):
        vals, grads = self.compiled(*[float(v) for v in x])
        return float(vals[0]), np.array(grads[0], float)

    def violation(self, x) -> np.ndarray:
        return np.array([self.value_grad(x)[0]])

    def distance(self, x) -> float:
        v, g = self.value_grad(x)
        return max(0.0, v) / max(np.linalg.norm(g), 1e-300) if v > 0 else 0.0

    def normal_basis(self, x, tol: float = 1e-6) -> np.ndarray:
        v, g = self.value_grad(x)
        if v >= -tol:
            return g[None, :]
        return np.zeros((0, self.n))

    def __getstate__(self):
        return {"psi": self.psi, "n": self.n}

    def __setstate__(self, state):
        object.__setattr__(self, "psi", state["psi"])
        object.__setattr__(self, "n", state["n"])
        object.__setattr__(self, "_cache", {})


@dataclass(frozen=True, eq=False)
class MayerProblemData:
    """Terminal cost ``Phi``, optional target set and variation budget ``C``."""

    Phi: str
    n: int
    C: float
    target: TargetBox | TargetLevelSet | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.C < 0:
            raise ValueError("budget C must be nonnegative")
        self.compiled

    @property
    def compiled(self):
        if "fn" not in self._cache:
            names, aliases = final_variables(self.n)
            node = E.parse_expression(self.Phi, names, aliases)
            self._cache["fn"] = E.compile_vector([node], self.n, with_grad=True)
        return self._cache["fn"]

    def cost(self, x) -> float:
        return self.cost_grad(x)[0]

    def cost_grad(self, x) -> tuple[float, np.ndarray]:
        vals, grads = self.compiled(*[float(v) for v in np.atleast_1d(x)])
        return float(vals[0]), np.array(grads[0], float)

    def target_distance(self, x) -> float:
        return 0.0 if self.target is None else self.target.distance(x)

    def __getstate__(self):
        return {"Phi": self.Phi, "n": self.n, "C": self.C, "target": self.target}

    def __setstate__(self, state):
        for k, v in state.items():
            object.__setattr__(self, k, v)
        object.__setattr__(self, "_cache", {})
