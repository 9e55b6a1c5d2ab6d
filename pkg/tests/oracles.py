"""Independent reference computations used by the tests.

Nothing here goes through the graph-completion machinery: delay ODEs are
solved directly by the method of steps with scipy's DOP853, integrals
against monotone functions are summed segment by segment, and gradients
come from central differences.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp


def method_of_steps(f, g, history, x0, h, M, N, density, breaks, t_eval, rtol=1e-12, atol=1e-13):
    """Solve ``x' = f(t, X) + sum_j g_j(t, X) u_j(t)`` with ``X = (x(t), x(t-h), ..., x(t-Mh))``.

    ``f(t, X)`` returns ``(n,)``, ``g(t, X)`` returns ``(m, n)``; ``density``
    is ``(len(breaks)-1, m)`` piecewise constant on ``breaks``.  Each block
    ``[(l-1)h, lh]`` is integrated separately, with further splits at the
    density breaks and at the shifted history breakpoints, using dense
    output of the previous blocks for the delayed arguments.
    """
    x0 = np.asarray(x0, float)
    density = np.asarray(density, float)
    breaks = np.asarray(breaks, float)
    dense = []  # (t_lo, t_hi, callable)

    def past(t):
        if t <= 0.0:
            return np.asarray(history(t), float) if t < 0.0 else x0
        for lo, hi, sol in dense:
            if lo - 1e-15 <= t <= hi + 1e-15:
                return sol(min(max(t, lo), hi))
        raise RuntimeError(f"no solution stored at t={t}")

    def u(t):
        k = np.clip(np.searchsorted(breaks, t, side="right") - 1, 0, density.shape[0] - 1)
        return density[k]

    x = x0.copy()
    for l in range(1, N + 1):
        a, b = (l - 1) * h, l * h
        cuts = [a, b]
        cuts += [t for t in breaks if a < t < b]
        for k in range(1, M + 1):
            cuts += [t + k * h for t in getattr(history, "breaks", []) if a < t + k * h < b]
        cuts = sorted(set(cuts))
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            mid_u = u(0.5 * (lo + hi))

            def rhs(t, y, mid_u=mid_u):
                X = [y] + [past(t - k * h) for k in range(1, M + 1)]
                return f(t, X) + mid_u @ g(t, X)

            sol = solve_ivp(rhs, (lo, hi), x, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
            if not sol.success:
                raise RuntimeError(sol.message)
            dense.append((lo, hi, sol.sol))
            x = sol.y[:, -1]
    t_eval = np.asarray(t_eval, float)
    return np.array([past(t) if t > 0 else x0 for t in t_eval])


# ---------------------------------------------------------------------------
# Lebesgue-Stieltjes integrals against polyline monotone functions


def step_value(breaks, values, t):
    """Right-continuous step function, last value kept at the right end."""
    k = np.clip(np.searchsorted(breaks, t, side="right") - 1, 0, len(values) - 1)
    return values[k]


def stieltjes_integral(xs, ys, breaks, values, a, b):
    """``int_{[a, b]} F dA`` for a polyline ``A`` with vertical runs.

    Vertical runs at ``x`` in ``[a, b]`` contribute ``F(x)`` times their
    height; sloped segments are integrated exactly piece by piece.
    """
    total = 0.0
    for i in range(len(xs) - 1):
        x0, x1, y0, y1 = xs[i], xs[i + 1], ys[i], ys[i + 1]
        if x1 == x0:
            if a <= x0 <= b:
                total += step_value(breaks, values, x0) * (y1 - y0)
            continue
        lo, hi = max(x0, a), min(x1, b)
        if hi <= lo:
            continue
        slope = (y1 - y0) / (x1 - x0)
        pts = [lo] + [t for t in breaks if lo < t < hi] + [hi]
        for p, q in zip(pts[:-1], pts[1:]):
            total += step_value(breaks, values, 0.5 * (p + q)) * slope * (q - p)
    return total


def composed_integral(B, breaks, values, s1, s2):
    """``int_{[s1, s2]} F(B(s)) ds`` by exact piecewise-constant summation."""
    pts = [s1, s2] + [s for s in B.xs if s1 < s < s2]
    # where B crosses a breakpoint of F
    A = B.right_inverse()
    for t in breaks:
        if A.domain[0] <= t <= A.domain[1]:
            for s in (A.lower(t), A.upper(t)):
                if s1 < s < s2:
                    pts.append(float(s))
    pts = np.unique(pts)
    mids = 0.5 * (pts[:-1] + pts[1:])
    return float(sum(step_value(breaks, values, B(mm)) * (q - p) for mm, p, q in zip(mids, pts[:-1], pts[1:])))


# ---------------------------------------------------------------------------
# finite differences


def central_difference(fun, x, idx, step):
    xp = x.copy()
    xm = x.copy()
    xp[idx] += step
    xm[idx] -= step
    return (fun(xp) - fun(xm)) / (2 * step)
