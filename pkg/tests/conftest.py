import random
from fractions import Fraction

import pytest

from probround.expr import (BinOp, Const, Distribution, ProblemSpec, Var, parse_expression,
                           parse_problem, pretty, variables)

EX1 = """var x1 uniform(-1, 1)
var x2 uniform(-1, 1)
var x3 uniform(-1, 1)
expr x1*x2 + x3
"""

EX2 = """var x1 uniform(-1, 1)
var x2 uniform(-1, 1)
var x3 uniform(-1, 1)
expr (x1*x2) / (x3 + 5)
"""


@pytest.fixture
def ex1():
    return parse_problem(EX1)


@pytest.fixture
def ex2():
    return parse_problem(EX2)


def random_distribution(rng: random.Random):
    family = rng.choice(["uniform", "normal", "laplace"])
    kind = rng.random()
    if kind < 0.5:
        a, b = -rng.uniform(0.2, 2), rng.uniform(0.2, 2)
    elif kind < 0.75:
        a = rng.uniform(0, 1)
        b = a + rng.uniform(0.2, 2)
    else:
        b = -rng.uniform(0, 1)
        a = b - rng.uniform(0.2, 2)
    a, b = round(a, 3), round(b, 3)
    if b - a < 0.1:
        b = a + 0.1
    sigma = round(rng.uniform(0.3, 2), 3)
    return Distribution(family, a, b, sigma)


def random_expression(rng: random.Random, names, max_ops=8, division_free=True):
    """Random expression over ``names`` with 1..max_ops binary operations."""
    ops = "+-*" if division_free else "+-*/"

    def build(budget):
        if budget == 0:
            if rng.random() < 0.85:
                return Var(rng.choice(names))
            return Const(Fraction(rng.randint(1, 9), rng.choice([1, 2, 4])))
        left = rng.randint(0, budget - 1)
        node = BinOp(rng.choice(ops), build(left), build(budget - 1 - left))
        return node

    while True:
        # round-trip through the parser so constant subexpressions get folded
        e = parse_expression(pretty(build(rng.randint(1, max_ops))))
        if isinstance(e, BinOp) and variables(e):
            return e


def random_problem(seed, max_vars=4, max_ops=8):
    rng = random.Random(seed)
    m = rng.randint(1, max_vars)
    names = [f"x{i}" for i in range(1, m + 1)]
    dists = {n: random_distribution(rng) for n in names}
    e = random_expression(rng, names, max_ops)
    return ProblemSpec({n: d for n, d in dists.items() if n in variables(e)}, e)
