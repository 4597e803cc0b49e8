"""Arithmetic expression grammar for scenario files.

Scenario inputs (diffusion/absorption/boundary coefficients, forcings,
disturbances, initial data) are given as strings over the variables
``x``, ``y``, ``t`` (plus ``u`` for custom reaction terms).  A recursive
descent parser builds a small AST; evaluation is numpy-vectorized so a
compiled expression can be applied to whole node arrays at once.

Precedence, tightest first: ``^`` (right associative), unary minus,
``*`` ``/``, ``+`` ``-``.  Functions: sin, cos, exp, ln, sqrt, abs and
the two-argument min, max.  Constants: pi, e.  Parse errors report the
byte offset of the offending token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CONSTANTS = {"pi": math.pi, "e": math.e}

_FUNCS_1 = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "ln": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_FUNCS_2 = {"min": np.minimum, "max": np.maximum}

DEFAULT_VARIABLES = ("x", "y", "t")


class ParseError(ValueError):
    """Raised on malformed expression text; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


_TWO_CHAR_NONE = ()
_OPS = set("+-*/^(),")


def _tokenize(text: str):
    """Yield (kind, value, offset) tokens; kinds: num, name, op, end."""
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            try:
                val = float(text[i:j])
            except ValueError:
                raise ParseError(f"bad numeric literal {text[i:j]!r}", i) from None
            yield ("num", val, i)
            i = j
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            yield ("name", text[i:j], i)
            i = j
        elif ch in _OPS:
            yield ("op", ch, i)
            i += 1
        else:
            raise ParseError(f"unexpected character {ch!r}", i)
    yield ("end", "", n)


class _Parser:
    def __init__(self, text: str, variables):
        self.text = text
        self.variables = frozenset(variables)
        self.tokens = list(_tokenize(text))
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, val, off = self.next()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", off)

    def parse(self):
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing input {val!r}", off)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                node = Bin(val, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                node = Bin(val, node, self.unary())
            else:
                return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.next()
            # right associative; the exponent may itself be negated
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, val, off = self.next()
        if kind == "num":
            return Num(val)
        if kind == "name":
            nk, nv, _ = self.peek()
            if nk == "op" and nv == "(":
                return self.call(val, off)
            if val in CONSTANTS:
                return Num(CONSTANTS[val])
            if val in self.variables:
                return Var(val)
            raise ParseError(f"unknown identifier {val!r}", off)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError(f"expected a value, got {val!r}" if val else "unexpected end of input", off)

    def call(self, name: str, off: int):
        if name not in _FUNCS_1 and name not in _FUNCS_2:
            raise ParseError(f"unknown function {name!r}", off)
        self.expect_op("(")
        args = [self.expr()]
        while True:
            kind, val, o2 = self.peek()
            if kind == "op" and val == ",":
                self.next()
                args.append(self.expr())
            elif kind == "op" and val == ")":
                self.next()
                break
            else:
                raise ParseError("unbalanced parentheses in call", o2)
        want = 1 if name in _FUNCS_1 else 2
        if len(args) != want:
            raise ParseError(f"{name} takes {want} argument(s), got {len(args)}", off)
        return Call(name, tuple(args))


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Bin):
        a = _eval(node.lhs, env)
        b = _eval(node.rhs, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        return np.power(a, b)
    fn = _FUNCS_1.get(node.func) or _FUNCS_2[node.func]
    return fn(*(_eval(a, env) for a in node.args))


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _to_string(node, parent_prec=0):
    if isinstance(node, Num):
        v = node.value
        if v < 0:
            s = repr(v)
            return f"({s})" if parent_prec > _PREC["neg"] else s
        return repr(v)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        s = "-" + _to_string(node.arg, _PREC["neg"])
        return f"({s})" if parent_prec > _PREC["neg"] else s
    if isinstance(node, Bin):
        p = _PREC[node.op]
        # left operand at own precedence, right one tighter (left assoc);
        # '^' is right associative so the asymmetry flips
        if node.op == "^":
            s = f"{_to_string(node.lhs, p + 1)}^{_to_string(node.rhs, p)}"
        else:
            s = f"{_to_string(node.lhs, p)}{node.op}{_to_string(node.rhs, p + 1)}"
        return f"({s})" if p < parent_prec else s
    inner = ",".join(_to_string(a) for a in node.args)
    return f"{node.func}({inner})"


class Expression:
    """A parsed expression over a fixed variable set.

    Instances are immutable; evaluation accepts scalars or numpy arrays
    (broadcast together) for each declared variable.
    """

    __slots__ = ("root", "variables", "source")

    def __init__(self, root, variables, source: str):
        self.root = root
        self.variables = tuple(variables)
        self.source = source

    def __call__(self, **env):
        missing = [v for v in self.variables if v not in env and _uses_var(self.root, v)]
        if missing:
            raise ValueError(f"expression {self.source!r} needs variables {missing}")
        return _eval(self.root, env)

    def to_string(self) -> str:
        return _to_string(self.root)

    def __repr__(self):
        return f"Expression({self.to_string()!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and self.root == other.root

    def __hash__(self):
        return hash(self.to_string())


def _uses_var(node, name: str) -> bool:
    if isinstance(node, Var):
        return node.name == name
    if isinstance(node, Neg):
        return _uses_var(node.arg, name)
    if isinstance(node, Bin):
        return _uses_var(node.lhs, name) or _uses_var(node.rhs, name)
    if isinstance(node, Call):
        return any(_uses_var(a, name) for a in node.args)
    return False


def parse_expression(text: str, variables=DEFAULT_VARIABLES) -> Expression:
    """Parse ``text`` into an :class:`Expression` over ``variables``."""
    root = _Parser(text, variables).parse()
    return Expression(root, variables, text)


ZERO = parse_expression("0")


def is_zero(expr: Expression, n_probe: int = 64, seed: int = 0) -> bool:
    """Numerically probe whether an expression is identically zero.

    Structural zero is detected immediately; otherwise the expression is
    sampled on random points of a moderate box.
    """
    if expr.root == Num(0.0):
        return True
    rng = np.random.default_rng(seed)
    env = {v: rng.uniform(-3.0, 3.0, size=n_probe) for v in expr.variables}
    env["t"] = rng.uniform(0.0, 10.0, size=n_probe)
    with np.errstate(all="ignore"):
        vals = np.asarray(expr(**env))
    return bool(np.all(np.abs(vals) < 1e-15))
