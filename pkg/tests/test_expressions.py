import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdesup.expressions import (
    Bin,
    Call,
    Neg,
    Num,
    ParseError,
    Var,
    is_zero,
    parse_expression,
)


def test_manufactured_forcing_value():
    e = parse_expression("sqrt(2)*sin(x)*cos(t-pi/4)")
    assert e(x=math.pi / 2, t=math.pi / 4) == pytest.approx(math.sqrt(2), rel=1e-15)


def test_constant_zero():
    e = parse_expression("0")
    assert e(x=3.0, t=1.0) == 0.0
    assert is_zero(e)


def test_unbalanced_paren_offset():
    with pytest.raises(ParseError) as ei:
        parse_expression("sin(x")
    assert ei.value.offset == 5


def test_unknown_identifier():
    with pytest.raises(ParseError):
        parse_expression("sin(q)")


def test_arity_mismatch():
    with pytest.raises(ParseError):
        parse_expression("min(x)")
    with pytest.raises(ParseError):
        parse_expression("sin(x, t)")


def test_precedence():
    assert parse_expression("2+3*4")(x=0, t=0) == 14
    assert parse_expression("-2^2")(x=0, t=0) == -4  # unary binds looser than ^
    assert parse_expression("2^-2")(x=0, t=0) == 0.25
    assert parse_expression("2^3^2")(x=0, t=0) == 512  # right associative
    assert parse_expression("6/3/2")(x=0, t=0) == 1.0  # left associative


def test_vectorized_eval():
    e = parse_expression("sin(pi*x)*exp(-t)")
    xs = np.linspace(0, 1, 11)
    out = e(x=xs, t=0.5)
    assert out.shape == xs.shape
    np.testing.assert_allclose(out, np.sin(np.pi * xs) * np.exp(-0.5), rtol=1e-15)


def test_min_max_abs():
    e = parse_expression("min(max(t-1, 0), 1) + abs(x)")
    assert e(x=-2.0, t=0.5) == 2.0
    assert e(x=0.0, t=1.5) == 0.5
    assert e(x=0.0, t=9.0) == 1.0


# --- reference evaluator for cross-checking (scalar, math-module based) ---

def _ref_eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_ref_eval(node.arg, env)
    if isinstance(node, Bin):
        a, b = _ref_eval(node.lhs, env), _ref_eval(node.rhs, env)
        return {"+": lambda: a + b, "-": lambda: a - b, "*": lambda: a * b,
                "/": lambda: a / b, "^": lambda: a ** b}[node.op]()
    fns = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "ln": math.log,
           "sqrt": math.sqrt, "abs": abs, "min": min, "max": max}
    return fns[node.func](*(_ref_eval(a, env) for a in node.args))


def _random_tree(rng, depth):
    # safe op set: avoid division blowups and domain errors by construction
    if depth == 0 or rng.random() < 0.25:
        r = rng.random()
        if r < 0.4:
            # negative values arise via Neg nodes so print->parse is structural
            return Num(round(rng.uniform(0, 2), 6))
        return Var(rng.choice(["x", "t"]))
    r = rng.random()
    if r < 0.18:
        return Neg(_random_tree(rng, depth - 1))
    if r < 0.70:
        op = rng.choice(["+", "-", "*"])
        return Bin(op, _random_tree(rng, depth - 1), _random_tree(rng, depth - 1))
    if r < 0.90:
        fn = rng.choice(["sin", "cos"])
        return Call(fn, (_random_tree(rng, depth - 1),))
    return Call(rng.choice(["min", "max"]),
                (_random_tree(rng, depth - 1), _random_tree(rng, depth - 1)))


def test_thousand_random_trees_roundtrip_and_reference():
    import random

    from pdesup.expressions import Expression, _to_string

    rng = random.Random(1234)
    for _ in range(1000):
        tree = _random_tree(rng, 4)
        expr = Expression(tree, ("x", "t"), "<generated>")
        text = expr.to_string()
        reparsed = parse_expression(text, ("x", "t"))
        # structural equality after print->parse
        assert reparsed.root == tree, text
        env = {"x": rng.uniform(-2, 2), "t": rng.uniform(-2, 2)}
        mine = float(expr(**env))
        ref = _ref_eval(tree, env)
        assert mine == pytest.approx(ref, rel=1e-14, abs=1e-14)


@settings(max_examples=200)
@given(st.floats(-3, 3), st.floats(0, 10))
def test_roundtrip_evaluates_identically(xv, tv):
    e = parse_expression("1+x/2*sin(t)-x^2/(1+abs(x))")
    r = parse_expression(e.to_string())
    assert float(e(x=xv, t=tv)) == pytest.approx(float(r(x=xv, t=tv)), rel=1e-15, abs=1e-15)
