"""Closed control cones: sign orthants or unions of generated sub-cones."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

TOL_MEAS = 1e-9
_SIGNS = {"+": 1, "-": -1, "free": 0, "0": 0}


@dataclass(frozen=True, eq=False)
class ControlCone:
    """A closed cone in R^m.

    ``signs`` gives an orthant-type cone ('+', '-' or 'free' per component).
    Otherwise ``subcones`` is a list of generator matrices (rows are
    generators), each sub-cone lying in a single orthant.
    """

    m: int
    signs: tuple[str, ...] | None = None
    subcones: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self):
        if self.signs is not None:
            if len(self.signs) != self.m or any(s not in _SIGNS for s in self.signs):
                raise ValueError(f"orthant signs must be {self.m} entries of '+', '-', 'free'")
            object.__setattr__(self, "signs", tuple("free" if s == "0" else s for s in self.signs))
            return
        if not self.subcones:
            raise ValueError("cone needs a sign pattern or at least one sub-cone")
        subs = []
        for G in self.subcones:
            G = np.atleast_2d(np.asarray(G, dtype=float))
            if G.size == 0 or G.shape[1] != self.m:
                raise ValueError("empty generator list or wrong generator dimension")
            if np.any(np.abs(G).sum(axis=1) == 0):
                raise ValueError("generators must be nonzero")
            prod = G[:, None, :] * G[None, :, :]
            if np.any(prod < 0):
                raise ValueError("generators of a sub-cone must share one sign pattern")
            subs.append(G)
        object.__setattr__(self, "subcones", tuple(subs))

    # constructors
    @classmethod
    def orthant(cls, signs: Sequence[str]) -> "ControlCone":
        return cls(m=len(signs), signs=tuple(signs))

    @classmethod
    def nonnegative(cls, m: int) -> "ControlCone":
        return cls.orthant(["+"] * m)

    @classmethod
    def whole_space(cls, m: int) -> "ControlCone":
        return cls.orthant(["free"] * m)

    @classmethod
    def generated(cls, *subcones) -> "ControlCone":
        subs = tuple(np.atleast_2d(np.asarray(G, float)) for G in subcones)
        m = subs[0].shape[1] if subs and subs[0].size else 0
        return cls(m=m, subcones=subs)

    @property
    def is_orthant(self) -> bool:
        return self.signs is not None

    def rays(self) -> np.ndarray:
        """All l1-normalized generators (rows); extreme points of the unit section."""
        if self.is_orthant:
            rows = []
            for j, s in enumerate(self.signs):
                e = np.zeros(self.m)
                if s in ("+", "free"):
                    e[j] = 1.0
                    rows.append(e.copy())
                if s in ("-", "free"):
                    e[j] = -1.0
                    rows.append(e.copy())
            return np.array(rows).reshape(-1, self.m)
        G = np.vstack(self.subcones)
        return G / np.abs(G).sum(axis=1, keepdims=True)

    def contains(self, w, tol: float = TOL_MEAS) -> bool:
        w = np.asarray(w, dtype=float)
        if self.is_orthant:
            for wj, s in zip(w, self.signs):
                if s == "+" and wj < -tol:
                    return False
                if s == "-" and wj > tol:
                    return False
            return True
        return bool(np.linalg.norm(self.project(w) - w) <= tol * max(1.0, np.linalg.norm(w)))

    def project(self, w) -> np.ndarray:
        """Euclidean projection onto the cone."""
        w = np.asarray(w, dtype=float)
        if self.is_orthant:
            out = w.copy()
            for j, s in enumerate(self.signs):
                if s == "+":
                    out[j] = max(out[j], 0.0)
                elif s == "-":
                    out[j] = min(out[j], 0.0)
            return out
        best, best_res = None, np.inf
        for G in self.subcones:
            coef, res = nnls(G.T, w)
            if res < best_res:
                best, best_res = G.T @ coef, res
        return best

    def linmax(self, c) -> tuple[float, np.ndarray]:
        """``max{c.w : w in K, ||w||_1 = 1}`` and a maximizer."""
        c = np.asarray(c, dtype=float)
        R = self.rays()
        vals = R @ c
        k = int(np.argmax(vals))
        return float(vals[k]), R[k].copy()

    def linmax_batch(self, C: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`linmax` value for rows of ``C``."""
        return (np.asarray(C, float) @ self.rays().T).max(axis=-1)

    def to_json(self) -> dict:
        if self.is_orthant:
            return {"kind": "orthant", "signs": list(self.signs)}
        return {"kind": "generators", "subcones": [G.tolist() for G in self.subcones]}

    @classmethod
    def from_json(cls, data: dict) -> "ControlCone":
        if data["kind"] == "orthant":
            return cls.orthant(data["signs"])
        return cls.generated(*data["subcones"])
