"""JSON scenario files: schema, validation with field paths, construction.

A scenario bundles the grid, cone, dynamics, an optional control (impulse,
extended or strict density), the Mayer problem and numerical settings.
Non-finite box bounds are written as ``null``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import jsonschema
import numpy as np

from . import expr as E
from .cone import ControlCone
from .dynamics import (
    DelayDynamics,
    HermiteHistory,
    MayerProblemData,
    TargetBox,
    TargetLevelSet,
    final_variables,
    state_aliases,
    state_variables,
)
from .graphcomp import ExtendedControl
from .measures import ImpulseControl, VectorMeasure
from .optimize import TranscriptionConfig


class ScenarioError(ValueError):
    """Bad scenario input; ``path`` is the dotted location of the problem."""

    def __init__(self, path: str, message: str):
        self.path = path or "<root>"
        super().__init__(f"{self.path}: {message}")


_num = {"type": "number"}
_vec = {"type": "array", "items": _num}
_mat = {"type": "array", "items": _vec}
_step = {
    "type": "object",
    "required": ["breaks", "values"],
    "properties": {"breaks": _vec, "values": _mat},
    "additionalProperties": False,
}
_measure = {
    "type": "object",
    "properties": {
        "atoms": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2}},
        "density": _step,
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "impdelay scenario",
    "type": "object",
    "required": ["grid", "cone", "dynamics"],
    "properties": {
        "name": {"type": "string"},
        "grid": {
            "type": "object",
            "required": ["n", "m", "M", "N", "h"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
                "M": {"type": "integer", "minimum": 0},
                "N": {"type": "integer", "minimum": 1},
                "h": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "cone": {
            "type": "object",
            "oneOf": [{"required": ["signs"]}, {"required": ["subcones"]}],
            "properties": {
                "signs": {"type": "array", "items": {"enum": ["+", "-", "free"]}},
                "subcones": {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _vec}},
            },
            "additionalProperties": False,
        },
        "dynamics": {
            "type": "object",
            "required": ["f", "g", "xi0", "x0"],
            "properties": {
                "f": {"type": "array", "items": {"type": "string"}},
                "g": {"type": "array", "items": {"type": "array", "items": {"type": "string"}}},
                "xi0": {
                    "type": "object",
                    "oneOf": [{"required": ["constant"]}, {"required": ["breaks", "values", "slopes"]}],
                    "properties": {"constant": _vec, "breaks": _vec, "values": _mat, "slopes": _mat},
                    "additionalProperties": False,
                },
                "x0": _vec,
                "bound": _num,
            },
            "additionalProperties": False,
        },
        "control": {
            "type": "object",
            "oneOf": [{"required": ["impulse"]}, {"required": ["extended"]}, {"required": ["strict"]}],
            "properties": {
                "impulse": {
                    "type": "object",
                    "required": ["mu"],
                    "properties": {
                        "mu": _measure,
                        "nu": _measure,
                        "attached": {
                            "type": "array",
                            "items": {
                                "type": "object",
                                "required": ["r", "omega"],
                                "properties": {
                                    "r": _num,
                                    "omega": {"type": "array", "items": {"oneOf": [{"type": "null"}, _step]}},
                                },
                                "additionalProperties": False,
                            },
                        },
                        "from_measure": {"type": "boolean"},
                    },
                    "additionalProperties": False,
                },
                "extended": {
                    "type": "object",
                    "required": ["mesh", "w0", "w"],
                    "properties": {
                        "h": _num,
                        "mesh": _vec,
                        "w0": _vec,
                        "w": {"type": "array", "items": _mat},
                        "phi0_knots": {"oneOf": [{"type": "null"}, _vec]},
                    },
                    "additionalProperties": False,
                },
                "strict": {
                    "type": "object",
                    "required": ["density"],
                    "properties": {"density": _step},
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "problem": {
            "type": "object",
            "required": ["Phi", "C"],
            "properties": {
                "Phi": {"type": "string"},
                "C": {"type": "number", "minimum": 0},
                "target": {
                    "type": "object",
                    "oneOf": [{"required": ["box"]}, {"required": ["psi"]}],
                    "properties": {
                        "box": {
                            "type": "object",
                            "required": ["lo", "hi"],
                            "properties": {
                                "lo": {"type": "array", "items": {"type": ["number", "null"]}},
                                "hi": {"type": "array", "items": {"type": ["number", "null"]}},
                            },
                            "additionalProperties": False,
                        },
                        "psi": {"type": "string"},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "numerics": {
            "type": "object",
            "properties": {
                "substeps": {"type": "integer", "minimum": 1},
                "max_step": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "tol_pmp": {"type": "number", "exclusiveMinimum": 0},
                "probes": _vec,
                "samples": {"type": "integer", "minimum": 2},
                "transcription": {"type": "object"},
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}


@dataclass
class Numerics:
    substeps: int = 8
    max_step: float | None = 0.01
    tol: float = 1e-9  # measure identities and round trips
    tol_pmp: float = 1e-3
    probes: tuple = ()
    samples: int = 201  # trajectory output points
    transcription: TranscriptionConfig = field(default_factory=TranscriptionConfig)


@dataclass(eq=False)
class Scenario:
    name: str
    dyn: DelayDynamics
    cone: ControlCone
    control: ImpulseControl | ExtendedControl | None
    problem: MayerProblemData | None
    numerics: Numerics
    seed: int
    raw: dict

    @property
    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _check_expr(text: str, names, aliases, where: str):
    try:
        E.parse_expression(text, names, aliases)
    except E.ExpressionError as exc:
        raise ScenarioError(where, str(exc)) from None


def _arr(data, where: str, shape=None) -> np.ndarray:
    a = np.asarray(data, float)
    if shape is not None and a.shape != shape:
        raise ScenarioError(where, f"expected shape {shape}, got {a.shape}")
    return a


def parse_scenario(data: dict) -> Scenario:
    """Validate ``data`` against :data:`SCHEMA` and build the objects."""
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(SCHEMA).iter_errors(data))
    if err is not None:
        where = list(err.absolute_path)
        if err.validator == "required" and isinstance(err.instance, dict):
            missing = [k for k in err.validator_value if k not in err.instance]
            raise ScenarioError(_path(where + missing[:1]), "missing required field")
        raise ScenarioError(_path(where), err.message)
    gr = data["grid"]
    n, m, M, N, h = gr["n"], gr["m"], gr["M"], gr["N"], float(gr["h"])
    if N < M:
        raise ScenarioError("grid.N", "must be at least M")

    cd = data["cone"]
    try:
        if "signs" in cd:
            if len(cd["signs"]) != m:
                raise ScenarioError("cone.signs", f"needs {m} entries")
            cone = ControlCone.orthant(cd["signs"])
        else:
            cone = ControlCone(m=m, subcones=tuple(np.asarray(G, float) for G in cd["subcones"]))
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError("cone", str(exc)) from None

    dd = data["dynamics"]
    names, aliases = state_variables(n, M), state_aliases(n, M)
    if len(dd["f"]) != n:
        raise ScenarioError("dynamics.f", f"needs {n} expressions")
    if len(dd["g"]) != m:
        raise ScenarioError("dynamics.g", f"needs {m} control fields")
    for i, s in enumerate(dd["f"]):
        _check_expr(s, names, aliases, f"dynamics.f[{i}]")
    for j, gj in enumerate(dd["g"]):
        if len(gj) != n:
            raise ScenarioError(f"dynamics.g[{j}]", f"needs {n} expressions")
        for i, s in enumerate(gj):
            _check_expr(s, names, aliases, f"dynamics.g[{j}][{i}]")
    x0 = _arr(dd["x0"], "dynamics.x0", (n,))
    xd = dd["xi0"]
    try:
        if "constant" in xd:
            xi0 = HermiteHistory.constant(_arr(xd["constant"], "dynamics.xi0.constant", (n,)), -M * h if M else -h)
        else:
            b = _arr(xd["breaks"], "dynamics.xi0.breaks")
            xi0 = HermiteHistory(
                b,
                _arr(xd["values"], "dynamics.xi0.values", (b.size, n)),
                _arr(xd["slopes"], "dynamics.xi0.slopes", (b.size, n)),
            )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError("dynamics.xi0", str(exc)) from None
    try:
        dyn = DelayDynamics(n, m, M, N, h, tuple(dd["f"]), tuple(tuple(g) for g in dd["g"]), xi0, x0, dd.get("bound"))
    except ValueError as exc:
        raise ScenarioError("dynamics", str(exc)) from None

    control = None
    if "control" in data:
        control = _parse_control(data["control"], dyn)

    problem = None
    if "problem" in data:
        pd = data["problem"]
        fn, fa = final_variables(n)
        _check_expr(pd["Phi"], fn, fa, "problem.Phi")
        target = None
        if "target" in pd:
            td = pd["target"]
            if "box" in td:
                lo = [-np.inf if v is None else v for v in td["box"]["lo"]]
                hi = [np.inf if v is None else v for v in td["box"]["hi"]]
                try:
                    target = TargetBox(_arr(lo, "problem.target.box.lo", (n,)), _arr(hi, "problem.target.box.hi", (n,)))
                except ScenarioError:
                    raise
                except ValueError as exc:
                    raise ScenarioError("problem.target.box", str(exc)) from None
            else:
                _check_expr(td["psi"], fn, fa, "problem.target.psi")
                target = TargetLevelSet(td["psi"], n)
        problem = MayerProblemData(pd["Phi"], n, float(pd["C"]), target)

    nd = dict(data.get("numerics", {}))
    tc = nd.pop("transcription", {})
    known = {f.name for f in fields(TranscriptionConfig)}
    for k in tc:
        if k not in known:
            raise ScenarioError(f"numerics.transcription.{k}", "unknown setting")
    seed = int(data.get("seed", 0))
    try:
        cfg = TranscriptionConfig(**{"seed": seed, **tc})
    except (TypeError, ValueError) as exc:
        raise ScenarioError("numerics.transcription", str(exc)) from None
    if "probes" in nd:
        nd["probes"] = tuple(float(t) for t in nd["probes"])
        for i, t in enumerate(nd["probes"]):
            if not 0.0 <= t <= dyn.T:
                raise ScenarioError(f"numerics.probes[{i}]", f"outside [0, {dyn.T:g}]")
    num = Numerics(**nd, transcription=cfg)
    return Scenario(data.get("name", "scenario"), dyn, cone, control, problem, num, seed, data)


def _parse_control(cd: dict, dyn: DelayDynamics):
    T, m, N, M, h = dyn.T, dyn.m, dyn.N, dyn.M, dyn.h
    try:
        if "impulse" in cd:
            ic = cd["impulse"]
            for i, a in enumerate(ic["mu"].get("atoms", [])):
                if len(a) != m + 1:
                    raise ScenarioError(f"control.impulse.mu.atoms[{i}]", f"needs time and {m} masses")
            for i, item in enumerate(ic.get("attached", [])):
                if len(item["omega"]) != N:
                    raise ScenarioError(f"control.impulse.attached[{i}].omega", f"needs {N} entries")
            if ic.get("from_measure"):
                return ImpulseControl.from_measure(VectorMeasure.from_json(ic["mu"], T, m), N, M, h)
            return ImpulseControl.from_json(ic, N, M, h, m)
        if "extended" in cd:
            ed = dict(cd["extended"])
            ed.setdefault("h", h)
            ec = ExtendedControl.from_json(ed)
            if ec.N != N or ec.m != m:
                raise ScenarioError("control.extended.w", f"expected shape (K, {N}, {m})")
            return ec
        mu = VectorMeasure.from_json({"density": cd["strict"]["density"]}, T, m)
        return ImpulseControl.strict(mu, N, M, h)
    except ScenarioError:
        raise
    except (ValueError, KeyError, IndexError) as exc:
        key = next(iter(cd))
        raise ScenarioError(f"control.{key}", str(exc)) from None


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except OSError as exc:
        raise ScenarioError("<file>", str(exc)) from None
    except json.JSONDecodeError as exc:
        raise ScenarioError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_scenario(data)


def write_schema(path) -> None:
    Path(path).write_text(json.dumps(SCHEMA, indent=2) + "\n")
