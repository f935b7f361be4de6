import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probround.expr import (BinOp, Const, Distribution, DivisionFree, Neg, ProblemError, TopFraction,
                            Unsupported, Var, check_denominator_sign, classify, count_ops, evaluate,
                            format_problem, parse_expression, parse_number, parse_problem, pretty)

from conftest import EX1, EX2, random_expression


def test_parse_single_variable():
    sp = parse_problem("var x uniform(-1,1)\nexpr x*x")
    assert sp.variables == {"x": Distribution("uniform", -1.0, 1.0)}
    assert sp.expr == BinOp("*", Var("x"), Var("x"))
    assert sp.eps is None and sp.confidence is None


def test_parse_example1():
    sp = parse_problem(EX1)
    assert list(sp.variables) == ["x1", "x2", "x3"]
    assert sp.expr == BinOp("+", BinOp("*", Var("x1"), Var("x2")), Var("x3"))


def test_undeclared_variable():
    with pytest.raises(ProblemError, match="undeclared variable x"):
        parse_problem("expr x+1")


@pytest.mark.parametrize("text, msg", [
    ("var x uniform(-1,1)\nvar x uniform(0,1)\nexpr x", "duplicate"),
    ("var x gamma(0,1)\nexpr x", "unknown distribution family"),
    ("var x uniform(1,-1)\nexpr x", "inverted"),
    ("var x uniform(1,1)\nexpr x", "inverted"),
    ("var x laplace(-1,1,0)\nexpr x", "scale"),
    ("var x laplace(-1,1,-2)\nexpr x", "scale"),
    ("var x uniform(-1,1)\nexpr x +* 2", "unexpected"),
    ("var x uniform(-1,1)\nexpr (x + 1", "expected"),
    ("var x uniform(-1,1)\nexpr x / 0", "division by zero"),
    ("var x uniform(-1,1)", "missing expr"),
    ("var x uniform(-1,1)\nexpr x\nexpr x", "more than one"),
    ("var x uniform(-1,1)\nconf 1.5\nexpr x", "confidence"),
    ("var x uniform(-1,1)\nprec quad\nexpr x", "single"),
])
def test_parse_errors(text, msg):
    with pytest.raises(ProblemError, match=msg):
        parse_problem(text)


def test_syntax_error_position():
    with pytest.raises(ProblemError) as info:
        parse_problem("var x uniform(-1,1)\nexpr x + $")
    assert info.value.line == 2 and info.value.column is not None


def test_non_finite_bounds():
    with pytest.raises(ProblemError):
        Distribution("uniform", -np.inf, 1.0)


def test_exact_literals():
    assert parse_number("0.1") == Fraction(1, 10)
    assert parse_number("0x1.8p-1") == Fraction(3, 4)
    assert parse_number("1e-3") == Fraction(1, 1000)
    e = parse_expression("x * 0.1 + 0x1p-3")
    assert e == BinOp("+", BinOp("*", Var("x"), Const(Fraction(1, 10))), Const(Fraction(1, 8)))


def test_directives_and_comments():
    sp = parse_problem("# header\nprec double\nconf 0.9  # trailing\nvar y normal(-2, 3)\n"
                       "var z laplace(-1, 1, 0.5)\nvar unused uniform(0,1)\nexpr y - z\n")
    assert sp.fmt == "double" and sp.confidence == 0.9
    assert sp.variables["z"].sigma == 0.5
    assert set(sp.used_variables) == {"y", "z"}
    sp = parse_problem("prec eps=1/1024 delta=0\nvar x uniform(0,1)\nexpr x*x")
    assert sp.eps == Fraction(1, 1024) and sp.delta == 0


def test_constant_folding_and_unary_minus():
    e = parse_expression("2*3*x - -(4/2)")
    assert e == BinOp("-", BinOp("*", Const(Fraction(6)), Var("x")), Const(Fraction(-2)))
    assert parse_expression("-(-x)") == Var("x")
    assert parse_expression("-x") == Neg(Var("x"))
    # division by a constant stays a (rounded) operation
    assert count_ops(parse_expression("x / 3")) == 1


def test_classify():
    assert classify(parse_problem(EX1).expr) == DivisionFree()
    e = parse_problem(EX2).expr
    assert classify(e) == TopFraction(parse_expression("x1*x2"), parse_expression("x3 + 5"))
    assert classify(parse_expression("x1/(x2+2) + x3/(x2+3)")) == \
        Unsupported("nested non-constant division")
    assert classify(parse_expression("x / 4 + y")) == DivisionFree()
    assert isinstance(classify(parse_expression("x / (y / z)")), Unsupported)


def test_denominator_sign():
    d = {"x3": Distribution("uniform", -1, 1)}
    assert check_denominator_sign(parse_expression("x3 + 5"), d) == "positive"
    assert check_denominator_sign(parse_expression("x3"), d) == "indeterminate"
    assert check_denominator_sign(parse_expression("-x3 - 5"), d) == "negative"


def test_denominator_sign_fuzz():
    rng = random.Random(7)
    npr = np.random.default_rng(7)
    checked = 0
    for trial in range(40):
        names = ["u", "v"]
        dists = {n: Distribution("uniform", *sorted(rng.sample([-3, -2, -1, 0.5, 1, 2, 4], 2)))
                 for n in names}
        q = random_expression(rng, names, 4)
        q = BinOp("+", q, Const(Fraction(rng.randint(-20, 20))))
        sign = check_denominator_sign(q, dists)
        if sign == "indeterminate":
            continue
        checked += 1
        env = {n: npr.uniform(d.a, d.b, 10_000) for n, d in dists.items()}
        vals = evaluate(q, env)
        if sign == "positive":
            assert np.all(vals > 0)
        else:
            assert np.all(vals < 0)
    assert checked > 5


_names = st.sampled_from(["x", "y", "z"])
_consts = st.fractions(min_value=-20, max_value=20, max_denominator=8)


def _exprs():
    leaf = st.one_of(_names.map(Var), _consts.map(Const))
    return st.recursive(
        leaf,
        lambda kids: st.one_of(
            st.tuples(st.sampled_from("+-*/"), kids, kids).map(lambda t: BinOp(*t)),
            kids.map(Neg)),
        max_leaves=8)


@settings(max_examples=200, deadline=None)
@given(_exprs())
def test_pretty_round_trip(e):
    try:
        once = parse_expression(pretty(e))
    except ProblemError:
        return   # e.g. a literal division by zero
    assert parse_expression(pretty(once)) == once


def test_format_problem_round_trip():
    for text in (EX1, EX2, "prec double\nconf 0.95\nvar a laplace(-1, 2, 0.25)\nexpr a*a/3"):
        sp = parse_problem(text)
        again = parse_problem(format_problem(sp))
        assert again.expr == sp.expr and again.variables == sp.variables
        assert (again.eps, again.delta, again.confidence) == (sp.eps, sp.delta, sp.confidence)
