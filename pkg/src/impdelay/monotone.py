"""Nondecreasing piecewise-linear curves with jumps and plateaus.

A :class:`MonotoneCurve` is stored as a polyline through vertices
``(xs[i], ys[i])`` with both coordinates nondecreasing.  A repeated abscissa
is a vertical run (a jump of the function), a repeated ordinate is a plateau.
Swapping the axes gives the right inverse, so time changes and their
inverses share one representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SNAP_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class MonotoneCurve:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise ValueError("vertices must be two 1-d arrays of equal length >= 2")
        if np.any(np.diff(xs) < 0) or np.any(np.diff(ys) < 0):
            raise ValueError("curve vertices must be nondecreasing in both coordinates")
        if not xs[-1] > xs[0]:
            raise ValueError("curve domain must have positive length")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @classmethod
    def from_function_values(cls, xs, ys) -> "MonotoneCurve":
        return cls(np.asarray(xs, float), np.asarray(ys, float))

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.xs[0]), float(self.xs[-1])

    @property
    def range(self) -> tuple[float, float]:
        return float(self.ys[0]), float(self.ys[-1])

    def _prepare(self, x):
        x = np.asarray(x, dtype=float)
        span = self.xs[-1] - self.xs[0]
        atol = SNAP_RTOL * max(span, abs(self.xs[0]), abs(self.xs[-1]), 1.0)
        if np.any(x < self.xs[0] - atol) or np.any(x > self.xs[-1] + atol):
            raise ValueError(f"query outside curve domain [{self.xs[0]}, {self.xs[-1]}]")
        n = self.xs.size
        i = np.clip(np.searchsorted(self.xs, x), 0, n - 1)
        for idx in (i, np.clip(i - 1, 0, n - 1)):
            x = np.where(np.abs(self.xs[idx] - x) <= atol, self.xs[idx], x)
        return x

    def _interp(self, x, k0):
        x0, x1 = self.xs[k0], self.xs[k0 + 1]
        y0, y1 = self.ys[k0], self.ys[k0 + 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            lam = np.where(x1 > x0, (x - x0) / np.where(x1 > x0, x1 - x0, 1.0), 1.0)
        return y0 + lam * (y1 - y0)

    def upper(self, x):
        """Top of the vertical run at ``x`` (right limit in the interior)."""
        x = self._prepare(x)
        n = self.xs.size
        k = np.searchsorted(self.xs, x, side="right") - 1
        k = np.clip(k, 0, n - 1)
        exact = self.xs[k] == x
        kk = np.clip(k, 0, n - 2)
        out = np.where(exact, self.ys[k], self._interp(x, kk))
        return out if out.ndim else float(out)

    def lower(self, x):
        """Bottom of the vertical run at ``x`` (left limit in the interior)."""
        x = self._prepare(x)
        n = self.xs.size
        k = np.clip(np.searchsorted(self.xs, x, side="left"), 0, n - 1)
        exact = self.xs[k] == x
        kk = np.clip(k - 1, 0, n - 2)
        out = np.where(exact, self.ys[k], self._interp(x, kk))
        return out if out.ndim else float(out)

    def __call__(self, x):
        """Right-continuous value with ``A(x_first) = y_first``, ``A(x_last) = y_last``."""
        x = self._prepare(x)
        out = np.where(x == self.xs[0], self.ys[0], self.upper(x))
        return out if out.ndim else float(out)

    def left(self, x):
        return self.lower(x)

    def right_inverse(self) -> "MonotoneCurve":
        """``B(s) = inf{t : A(t) > s}`` with ``B(S1) = T1`` and ``B(S2) = T2``.

        On the polyline the infimum is the largest abscissa at ordinate ``s``,
        which is exactly what :meth:`upper` of the axis-swapped curve returns.
        """
        return MonotoneCurve(self.ys.copy(), self.xs.copy())

    def jumps(self, tol: float = 0.0) -> list[tuple[float, float, float]]:
        """Vertical runs as ``(x, y_low, y_high)``."""
        out = []
        i = 0
        n = self.xs.size
        while i < n:
            j = i
            while j + 1 < n and self.xs[j + 1] == self.xs[i]:
                j += 1
            if self.ys[j] - self.ys[i] > tol:
                out.append((float(self.xs[i]), float(self.ys[i]), float(self.ys[j])))
            i = j + 1
        return out

    def plateaus(self, tol: float = 0.0) -> list[tuple[float, float, float]]:
        """Horizontal runs as ``(y, x_low, x_high)``."""
        return [(y, a, b) for (y, a, b) in self.right_inverse().jumps(tol)]


def scan_right_inverse(A: MonotoneCurve, s: float, grid: np.ndarray) -> float:
    """Brute-force ``inf{t in grid : A(t) > s}`` used as a test oracle."""
    vals = A(grid)
    hit = np.nonzero(vals > s)[0]
    return float(grid[hit[0]]) if hit.size else float(grid[-1])
