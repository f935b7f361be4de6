import random
from fractions import Fraction

import pytest

from probround.bounds import (BoundError, Box, IndeterminateDenominator, interval_eval,
                              residual_bound, second_order_bound, second_order_bound_exact,
                              struct_bound)
from probround.expr import Distribution, evaluate, parse_expression
from probround.fpmodel import (derivative_polynomials, fp_transform, fraction_remainder,
                               reduce_common_factor, remainder, scaled_derivatives)
from probround.poly import expand

from conftest import random_problem

EPS = Fraction(1, 2 ** 24)
DELTA = Fraction(1, 2 ** 150)
U = Distribution("uniform", -1, 1)


def box(names, eps=EPS, delta=DELTA):
    return Box.from_distributions({n: U for n in names}, eps, delta)


def test_struct_bound_examples():
    b = box(["x", "y"])
    assert struct_bound(parse_expression("x - y"), b) == 2
    assert struct_bound(parse_expression("5"), b) == 5
    assert struct_bound(expand(parse_expression("x*y - 3")), b) == 4
    assert struct_bound(parse_expression("x/4"), b) == Fraction(1, 4)
    with pytest.raises(BoundError):
        struct_bound(parse_expression("x/(y+3)"), b)


def test_example1_second_order():
    e = parse_expression("x1*x2 + x3")
    r = remainder(fp_transform(e), e)
    b = box(["x1", "x2", "x3"])
    exact = second_order_bound_exact(r, b)
    assert exact == 2 * DELTA + EPS * EPS + EPS * DELTA
    u2 = second_order_bound(r, b)
    assert 2.0 ** -48 <= u2 <= 3.6e-15
    assert u2 == pytest.approx(3.5527e-15, rel=1e-4)


def test_zero_ops_bound():
    e = parse_expression("x")
    assert second_order_bound(remainder(fp_transform(e), e), box(["x"])) == 0.0


def test_interval_examples():
    b = box(["x", "x3"])
    assert interval_eval(parse_expression("x3 + 5"), b) == (4, 6)
    assert interval_eval(parse_expression("x*x"), b) == (-1, 1)
    with pytest.raises(IndeterminateDenominator):
        interval_eval(parse_expression("1/x"), b)


def test_example2_second_order_finite():
    e = parse_expression("(x1*x2)/(x3+5)")
    f = fp_transform(e)
    gs, power = reduce_common_factor(scaled_derivatives(f, e.right), expand(e.right))
    r = fraction_remainder(f, e.left, e.right, gs, power)
    u2 = second_order_bound(r, box(["x1", "x2", "x3"]))
    assert 0 < u2 < 1e-13


def _point(rng, b):
    env = {}
    for n, (lo, hi) in b.vars.items():
        env[n] = Fraction(rng.uniform(float(lo), float(hi)))
    return env


def test_pointwise_soundness_random():
    rng = random.Random(21)
    for seed in range(40):
        sp = random_problem(seed)
        b = Box.from_distributions(sp.used_variables)
        sb = struct_bound(sp.expr, b)
        lo, hi = interval_eval(sp.expr, b)
        corners = [{n: (v[0] if (mask >> i) & 1 else v[1]) for i, (n, v) in enumerate(b.vars.items())}
                   for mask in range(1 << len(b.vars))]
        for env in corners + [_point(rng, b) for _ in range(250)]:
            v = evaluate(sp.expr, env)
            assert abs(v) <= sb
            assert lo <= v <= hi


def test_monotonicity():
    rng = random.Random(22)
    for seed in range(40):
        sp = random_problem(seed)
        b = Box.from_distributions(sp.used_variables, EPS, DELTA)
        base = struct_bound(sp.expr, b)
        for n in b.vars:
            lo, hi = b.vars[n]
            grown = Box(dict(b.vars), b.eps, b.delta)
            grown.vars[n] = (lo - Fraction(rng.random()), hi + Fraction(rng.random()))
            assert struct_bound(sp.expr, grown) >= base
        tree = fp_transform(sp.expr).tree
        wider = Box(dict(b.vars), 2 * b.eps, 2 * b.delta)
        assert residual_bound(tree, wider) >= residual_bound(tree, b)


def test_second_order_dominates_samples():
    rng = random.Random(23)
    for seed in range(30):
        sp = random_problem(seed, 4, 6)
        f = fp_transform(sp.expr)
        hs = derivative_polynomials(f)
        r = remainder(f, sp.expr, hs)
        b = Box.from_distributions(sp.used_variables, EPS, DELTA)
        bound = second_order_bound_exact(r, b)
        for _ in range(300):
            env = _point(rng, b)
            for i in range(1, f.k + 1):
                env[("e", i)] = EPS * rng.choice((-1, 1)) * Fraction(rng.random())
                env[("d", i)] = DELTA * rng.choice((-1, 1)) * Fraction(rng.random())
            assert abs(r.numerator.evaluate(env)) <= bound


def test_propagated_residual_dominates_samples():
    # the fallback used for large expressions must bound |R2| on its own
    rng = random.Random(24)
    for seed in range(40):
        sp = random_problem(seed, 4, 6)
        f = fp_transform(sp.expr)
        hs = derivative_polynomials(f)
        r = remainder(f, sp.expr, hs)
        b = Box.from_distributions(sp.used_variables, EPS, DELTA)
        prop = residual_bound(f.tree, b)
        for _ in range(200):
            env = _point(rng, b)
            for i in range(1, f.k + 1):
                env[("e", i)] = EPS * rng.choice((-1, 1))
                env[("d", i)] = DELTA * rng.choice((-1, 1))
            assert abs(r.numerator.evaluate(env)) <= prop
