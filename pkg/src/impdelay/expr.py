"""Small expression language for scenario dynamics.

Expressions are parsed into an immutable AST over a declared variable list.
Two evaluation paths are provided:

* :func:`eval_with_derivatives` walks the tree with :class:`Dual` numbers
  (forward-mode AD) and is the reference implementation.
* :func:`compile_vector` emits straight-line Python for a list of
  expressions together with their forward-mode tangents.  The generated code
  works on floats and on numpy arrays, which is what the integrators use.

Grammar (usual precedence, ``^`` binds tightest and is right associative)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DIV_EPS = 1e-12
SMIN_EPS = 1e-6

FUNCTIONS = {"exp": 1, "sin": 1, "cos": 1, "tanh": 1, "smin": 2}


class ExpressionError(ValueError):
    """Raised for syntax errors and unknown identifiers."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (column {offset})"
        super().__init__(message)


class DomainError(ArithmeticError):
    """Raised when an expression is evaluated outside its domain."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    index: int


@dataclass(frozen=True)
class Unary:
    op: str  # 'neg', 'exp', 'sin', 'cos', 'tanh'
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # '+', '-', '*', '/', '^', 'smin'
    left: "Node"
    right: "Node"


Node = Const | Var | Unary | Binary


def free_variables(node: Node) -> set[int]:
    if isinstance(node, Const):
        return set()
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, Unary):
        return free_variables(node.arg)
    return free_variables(node.left) | free_variables(node.right)


# ---------------------------------------------------------------------------
# Parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            col = pos + 1 + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionError(f"unexpected character {text[col - 1]!r}", col)
        kind = m.lastgroup
        value = m.group(kind)
        if value == "**":
            value = "^"
        tokens.append((kind, value, m.start(kind) + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Sequence[str], aliases: dict[str, int]):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.lookup = {name: i for i, name in enumerate(variables)}
        self.lookup.update(aliases)

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value: str):
        kind, tok, col = self.take()
        if tok != value:
            what = "end of input" if kind == "end" else repr(tok)
            raise ExpressionError(f"expected {value!r}, found {what}", col)

    def parse(self) -> Node:
        node = self.expr()
        kind, tok, col = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {tok!r}", col)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Unary("neg", self.unary())
        if self.peek()[0] == "op" and self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, tok, col = self.take()
        if kind == "num":
            return Const(float(tok))
        if kind == "name":
            if tok in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[tok]:
                    raise ExpressionError(
                        f"{tok} takes {FUNCTIONS[tok]} argument(s), got {len(args)}", col
                    )
                if tok == "smin":
                    return Binary("smin", args[0], args[1])
                return Unary(tok, args[0])
            if tok == "pi":
                return Const(math.pi)
            if tok not in self.lookup:
                raise ExpressionError(f"unknown identifier {tok!r}", col)
            return Var(tok, self.lookup[tok])
        if kind == "op" and tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise ExpressionError("unexpected end of input", col)
        raise ExpressionError(f"unexpected token {tok!r}", col)


def parse_expression(
    text: str, variables: Sequence[str], aliases: dict[str, int] | None = None
) -> Node:
    """Parse ``text`` into an AST over ``variables``.

    ``aliases`` maps extra accepted names to indices of ``variables``.
    Columns in error messages are 1-based; an error at end of input reports
    ``len(text) + 1``.
    """
    if not text or not text.strip():
        raise ExpressionError("empty expression", 1)
    return _Parser(text, variables, aliases or {}).parse()


def to_text(node: Node) -> str:
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{to_text(node.arg)})"
        return f"{node.op}({to_text(node.arg)})"
    if node.op == "smin":
        return f"smin({to_text(node.left)}, {to_text(node.right)})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"


# ---------------------------------------------------------------------------
# Dual numbers


class Dual:
    """Value plus gradient with respect to every declared variable."""

    __slots__ = ("val", "grad")

    def __init__(self, val: float, grad: np.ndarray):
        self.val = float(val)
        self.grad = grad

    def __add__(self, o: "Dual") -> "Dual":
        return Dual(self.val + o.val, self.grad + o.grad)

    def __sub__(self, o: "Dual") -> "Dual":
        return Dual(self.val - o.val, self.grad - o.grad)

    def __mul__(self, o: "Dual") -> "Dual":
        return Dual(self.val * o.val, self.val * o.grad + o.val * self.grad)

    def __truediv__(self, o: "Dual") -> "Dual":
        if abs(o.val) < DIV_EPS:
            raise DomainError(f"division by {o.val!r}")
        q = self.val / o.val
        return Dual(q, (self.grad - q * o.grad) / o.val)

    def __neg__(self) -> "Dual":
        return Dual(-self.val, -self.grad)

    def __pow__(self, o: "Dual") -> "Dual":
        if not o.grad.any() and float(o.val).is_integer():
            k = o.val
            if k == 0:
                return Dual(1.0, np.zeros_like(self.grad))
            if k < 0 and abs(self.val) < DIV_EPS:
                raise DomainError("negative power of zero")
            return Dual(self.val**k, k * self.val ** (k - 1) * self.grad)
        if self.val <= 0:
            raise DomainError("non-integer power of a non-positive base")
        v = self.val**o.val
        return Dual(v, v * (o.val / self.val * self.grad + math.log(self.val) * o.grad))

    def exp(self) -> "Dual":
        v = math.exp(self.val)
        return Dual(v, v * self.grad)

    def sin(self) -> "Dual":
        return Dual(math.sin(self.val), math.cos(self.val) * self.grad)

    def cos(self) -> "Dual":
        return Dual(math.cos(self.val), -math.sin(self.val) * self.grad)

    def tanh(self) -> "Dual":
        v = math.tanh(self.val)
        return Dual(v, (1.0 - v * v) * self.grad)

    def smin(self, o: "Dual") -> "Dual":
        diff = self.val - o.val
        r = math.sqrt(diff * diff + SMIN_EPS)
        v = 0.5 * (self.val + o.val - r)
        da = 0.5 * (1.0 - diff / r)
        db = 0.5 * (1.0 + diff / r)
        return Dual(v, da * self.grad + db * o.grad)


def _eval_dual(node: Node, point: Sequence[float], nvars: int) -> Dual:
    if isinstance(node, Const):
        return Dual(node.value, np.zeros(nvars))
    if isinstance(node, Var):
        g = np.zeros(nvars)
        g[node.index] = 1.0
        return Dual(point[node.index], g)
    if isinstance(node, Unary):
        a = _eval_dual(node.arg, point, nvars)
        return -a if node.op == "neg" else getattr(a, node.op)()
    a = _eval_dual(node.left, point, nvars)
    b = _eval_dual(node.right, point, nvars)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    if node.op == "^":
        return a**b
    return a.smin(b)


def eval_with_derivatives(node: Node, point: Sequence[float]) -> tuple[float, np.ndarray]:
    """Value and gradient of ``node`` at ``point`` (indexed like the variables)."""
    point = [float(p) for p in point]
    d = _eval_dual(node, point, len(point))
    return d.val, d.grad


def evaluate(node: Node, point: Sequence[float]) -> float:
    return eval_with_derivatives(node, point)[0]


# ---------------------------------------------------------------------------
# Code generation


class _Emitter:
    """Emit SSA-style lines computing values and sparse tangents."""

    def __init__(self, nvars: int, with_grad: bool):
        self.lines: list[str] = []
        self.count = 0
        self.nvars = nvars
        self.with_grad = with_grad
        self.cache: dict[Node, tuple[str, dict[int, str]]] = {}

    def tmp(self, expr: str) -> str:
        name = f"_t{self.count}"
        self.count += 1
        self.lines.append(f"{name} = {expr}")
        return name

    def emit(self, node: Node) -> tuple[str, dict[int, str]]:
        if node in self.cache:
            return self.cache[node]
        out = self._emit(node)
        self.cache[node] = out
        return out

    def _emit(self, node: Node) -> tuple[str, dict[int, str]]:
        g = self.with_grad
        if isinstance(node, Const):
            return repr(float(node.value)), {}
        if isinstance(node, Var):
            return f"_a[{node.index}]", ({node.index: "1.0"} if g else {})
        if isinstance(node, Unary):
            v, dv = self.emit(node.arg)
            if node.op == "neg":
                r = self.tmp(f"-({v})")
                return r, {k: self.tmp(f"-({d})") for k, d in dv.items()}
            if node.op == "exp":
                r = self.tmp(f"_m.exp({v})")
                return r, {k: self.tmp(f"{r} * {d}") for k, d in dv.items()}
            if node.op == "sin":
                r = self.tmp(f"_m.sin({v})")
                if dv:
                    c = self.tmp(f"_m.cos({v})")
                    return r, {k: self.tmp(f"{c} * {d}") for k, d in dv.items()}
                return r, {}
            if node.op == "cos":
                r = self.tmp(f"_m.cos({v})")
                if dv:
                    s = self.tmp(f"_m.sin({v})")
                    return r, {k: self.tmp(f"-{s} * {d}") for k, d in dv.items()}
                return r, {}
            if node.op == "tanh":
                r = self.tmp(f"_m.tanh({v})")
                if dv:
                    c = self.tmp(f"1.0 - {r} * {r}")
                    return r, {k: self.tmp(f"{c} * {d}") for k, d in dv.items()}
                return r, {}
            raise AssertionError(node.op)
        a, da = self.emit(node.left)
        b, db = self.emit(node.right)
        op = node.op
        if op in "+-":
            r = self.tmp(f"{a} {op} {b}")
            dr = {}
            for k in set(da) | set(db):
                if k in da and k in db:
                    dr[k] = self.tmp(f"{da[k]} {op} {db[k]}")
                elif k in da:
                    dr[k] = da[k]
                else:
                    dr[k] = db[k] if op == "+" else self.tmp(f"-({db[k]})")
            return r, dr
        if op == "*":
            r = self.tmp(f"{a} * {b}")
            dr = {}
            for k in set(da) | set(db):
                parts = []
                if k in da:
                    parts.append(f"{b} * {da[k]}")
                if k in db:
                    parts.append(f"{a} * {db[k]}")
                dr[k] = self.tmp(" + ".join(parts))
            return r, dr
        if op == "/":
            self.lines.append(f"_chk({b})")
            r = self.tmp(f"{a} / {b}")
            dr = {}
            for k in set(da) | set(db):
                num = da.get(k, "0.0")
                if k in db:
                    num = f"({num} - {r} * {db[k]})"
                dr[k] = self.tmp(f"{num} / {b}")
            return r, dr
        if op == "^":
            if isinstance(node.right, Const) and float(node.right.value).is_integer():
                k_exp = node.right.value
                if k_exp == 0:
                    return "1.0", {}
                r = self.tmp(f"_ipow({a}, {int(k_exp)})")
                if da:
                    c = self.tmp(f"{k_exp!r} * _ipow({a}, {int(k_exp) - 1})")
                    return r, {k: self.tmp(f"{c} * {d}") for k, d in da.items()}
                return r, {}
            self.lines.append(f"_chkpos({a})")
            r = self.tmp(f"{a} ** {b}")
            dr = {}
            if da or db:
                la = self.tmp(f"_m.log({a})")
                for k in set(da) | set(db):
                    parts = []
                    if k in da:
                        parts.append(f"{b} / {a} * {da[k]}")
                    if k in db:
                        parts.append(f"{la} * {db[k]}")
                    dr[k] = self.tmp(f"{r} * ({' + '.join(parts)})")
            return r, dr
        if op == "smin":
            diff = self.tmp(f"{a} - {b}")
            rr = self.tmp(f"_m.sqrt({diff} * {diff} + {SMIN_EPS!r})")
            r = self.tmp(f"0.5 * ({a} + {b} - {rr})")
            dr = {}
            if da or db:
                ca = self.tmp(f"0.5 * (1.0 - {diff} / {rr})")
                cb = self.tmp(f"0.5 * (1.0 + {diff} / {rr})")
                for k in set(da) | set(db):
                    parts = []
                    if k in da:
                        parts.append(f"{ca} * {da[k]}")
                    if k in db:
                        parts.append(f"{cb} * {db[k]}")
                    dr[k] = self.tmp(" + ".join(parts))
            return r, dr
        raise AssertionError(op)


def _ipow(x, k: int):
    if k < 0:
        _chk(x)
        return 1.0 / x ** (-k)
    return x**k


def _chk(x):
    if np.any(np.abs(x) < DIV_EPS):
        raise DomainError("division by a value below 1e-12")


def _chkpos(x):
    if np.any(np.asarray(x) <= 0):
        raise DomainError("non-integer power of a non-positive base")


def generate_source(nodes: Sequence[Node], nvars: int, with_grad: bool) -> str:
    em = _Emitter(nvars, with_grad)
    values, grads = [], []
    for node in nodes:
        v, dv = em.emit(node)
        values.append(v)
        grads.append(dv)
    body = ["def _fn(*_a):"]
    body += ["    " + ln for ln in em.lines]
    body.append(f"    _vals = ({', '.join(values)}{',' if values else ''})")
    if with_grad:
        rows = []
        for dv in grads:
            rows.append("(" + ", ".join(dv.get(k, "0.0") for k in range(nvars)) + ",)")
        body.append(f"    _grads = ({', '.join(rows)}{',' if rows else ''})")
        body.append("    return _vals, _grads")
    else:
        body.append("    return _vals")
    return "\n".join(body)


def compile_vector(nodes: Sequence[Node], nvars: int, with_grad: bool = False, vectorized: bool = False):
    """Compile expressions to a function of ``nvars`` positional arguments.

    Returns ``values`` (tuple, one entry per node) or ``(values, grads)`` with
    ``grads[i][k]`` the partial of node ``i`` w.r.t. variable ``k``.  With
    ``vectorized=True`` the arguments may be numpy arrays; constant entries
    are then returned as scalars and must be broadcast by the caller.
    """
    src = generate_source(nodes, nvars, with_grad)
    namespace = {
        "_m": np if vectorized else math,
        "_chk": _chk,
        "_chkpos": _chkpos,
        "_ipow": _ipow,
    }
    exec(compile(src, "<impdelay-expr>", "exec"), namespace)
    return namespace["_fn"]
