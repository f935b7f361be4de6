"""Floating-point model of an expression and its first-order Taylor split.

Every rounded operation ``l op r`` becomes ``(l op r)(1 + e_i) + d_i``.
Error symbols are numbered in left-to-right post-order.  Negation is exact
and gets no error symbols; constants and inputs are taken as exact.

The model is split as

    f~(x, e, d) = f(x) + sum_i h_i(x) e_i + R2(x, e, d)

with h_i the partial derivative in e_i at e = d = 0 and R2 the exact
algebraic residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from . import expr as ex
from .expr import BinOp, Const, ErrVar, Expression, Neg, Var
from .poly import (DEFAULT_TERM_CAP, Polynomial, ResourceLimitError, err_d, err_e,
                   expand, poly_divide_exact)


class FpModelError(RuntimeError):
    """Internal inconsistency, e.g. a scaled derivative that does not cancel."""


@dataclass(frozen=True)
class FpExpression:
    tree: Expression
    k: int


_ONE = Const(Fraction(1))
_ZERO = Const(Fraction(0))


def fp_transform(expr: Expression) -> FpExpression:
    counter = [0]

    def go(node):
        if isinstance(node, (Const, Var, ErrVar)):
            return node
        if isinstance(node, Neg):
            return Neg(go(node.child))
        left = go(node.left)
        right = go(node.right)
        counter[0] += 1
        i = counter[0]
        rounded = BinOp(node.op, left, right)
        return BinOp("+", BinOp("*", rounded, BinOp("+", _ONE, ErrVar("e", i))), ErrVar("d", i))

    tree = go(expr)
    return FpExpression(tree, counter[0])


# ---------------------------------------------------------------------------
# Light simplification helpers used while differentiating

def _is(node, v):
    return isinstance(node, Const) and node.value == v


def s_add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(b, Neg):
        return s_sub(a, b.child)
    return BinOp("+", a, b)


def s_sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return s_neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def s_neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.child
    return Neg(a)


def s_mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return _ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if _is(a, -1):
        return s_neg(b)
    if _is(b, -1):
        return s_neg(a)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def s_div(a, b):
    if _is(a, 0):
        return _ZERO
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value / b.value)
    return BinOp("/", a, b)


def _at_zero(node, i):
    """(value, d/de_i) of ``node`` at e = d = 0, as simplified expressions."""
    if isinstance(node, Const):
        return node, _ZERO
    if isinstance(node, Var):
        return node, _ZERO
    if isinstance(node, ErrVar):
        return _ZERO, (_ONE if node.kind == "e" and node.index == i else _ZERO)
    if isinstance(node, Neg):
        v, d = _at_zero(node.child, i)
        return s_neg(v), s_neg(d)
    lv, ld = _at_zero(node.left, i)
    rv, rd = _at_zero(node.right, i)
    op = node.op
    if op == "+":
        return s_add(lv, rv), s_add(ld, rd)
    if op == "-":
        return s_sub(lv, rv), s_sub(ld, rd)
    if op == "*":
        return s_mul(lv, rv), s_add(s_mul(ld, rv), s_mul(lv, rd))
    value = s_div(lv, rv)
    if _is(rd, 0):
        return value, s_div(ld, rv)
    return value, s_div(s_sub(s_mul(ld, rv), s_mul(lv, rd)), s_mul(rv, rv))


def _contains(node, kind, i):
    return any(isinstance(n, ErrVar) and n.kind == kind and n.index == i for n in ex.walk(node))


def first_order_derivatives(fexpr: FpExpression) -> list:
    """h_i = d f~ / d e_i at (x, 0, 0) for i = 1..k, as expressions."""
    return [_at_zero(fexpr.tree, i)[1] for i in range(1, fexpr.k + 1)]


def derivative_polynomials(fexpr: FpExpression) -> list:
    """Expanded h_i for a division-free model."""
    return [expand(h) for h in first_order_derivatives(fexpr)]


# ---------------------------------------------------------------------------
# Rational-function view, used to clear denominators

def _ratfunc(node):
    """(numerator, denominator) polynomials of an expression."""
    if isinstance(node, BinOp):
        ln, ld = _ratfunc(node.left)
        rn, rd = _ratfunc(node.right)
        if node.op in "+-":
            sign = 1 if node.op == "+" else -1
            if ld == rd:
                return ln + rn.scale(sign), ld
            return ln * rd + (rn * ld).scale(sign), ld * rd
        if node.op == "*":
            return ln * rn, ld * rd
        return ln * rd, ld * rn
    if isinstance(node, Neg):
        n, d = _ratfunc(node.child)
        return -n, d
    return expand(node), Polynomial.const(1)


def split_top_fraction(fexpr: FpExpression):
    """(N~, Q~) of a model whose root operation is a division."""
    t = fexpr.tree
    try:
        rounded = t.left.left
        assert rounded.op == "/"
    except (AttributeError, AssertionError):
        raise FpModelError("model is not a top-level fraction") from None
    return rounded.left, rounded.right


def scaled_derivatives(fexpr: FpExpression, q: Expression) -> list:
    """h_i * Q^2 as polynomials for a top-level fraction N/Q."""
    qp = expand(q)
    q2 = qp * qp
    out = []
    for i, h in enumerate(first_order_derivatives(fexpr), start=1):
        num, den = _ratfunc(h)
        quotient = poly_divide_exact(num * q2, den)
        if quotient is None:
            raise FpModelError(f"h_{i} * Q^2 does not reduce to a polynomial")
        out.append(quotient)
    return out


def reduce_common_factor(hs: list, q: Polynomial):
    """Divide every scaled derivative by Q when possible: returns (hs', power)."""
    quotients = []
    for h in hs:
        r = poly_divide_exact(h, q)
        if r is None:
            return list(hs), 2
        quotients.append(r)
    return quotients, 1


# ---------------------------------------------------------------------------
# Second-order residual

@dataclass
class RemainderForm:
    """R2 = numerator / prod(factor^power).

    ``numerator`` is None when the exact expansion was too large; the
    residual is then bounded directly from ``fexpr``.
    """

    numerator: Polynomial | None
    denominators: list = field(default_factory=list)   # [(Expression, power)]
    fexpr: FpExpression | None = None

    @property
    def exact(self) -> bool:
        return self.numerator is not None

    def denominator(self) -> Polynomial:
        d = Polynomial.const(1)
        for e, pw in self.denominators:
            for _ in range(pw):
                d = d * expand(e)
        return d

    def check_terms(self):
        """Every numerator term has a d factor or (e, d)-degree >= 2."""
        if self.numerator is None:
            return
        for m in self.numerator.terms:
            err_deg = sum(e for s, e in m if s[0] in (1, 2))
            has_d = any(s[0] == 2 for s, _ in m)
            if not (has_d or err_deg >= 2):
                raise FpModelError(f"first-order term left in the remainder: {m}")


def estimate_terms(node) -> int:
    """Cheap upper bound on the number of terms of expand(node)."""
    if isinstance(node, (Const, Var, ErrVar)):
        return 1
    if isinstance(node, Neg):
        return estimate_terms(node.child)
    a, b = estimate_terms(node.left), estimate_terms(node.right)
    if node.op in "+-":
        return a + b
    if node.op == "/":
        return a
    return a * b


def _first_order_sum(hs):
    s = Polynomial()
    for i, h in enumerate(hs, start=1):
        s = s + h * Polynomial.symbol(err_e(i))
    return s


def remainder(fexpr: FpExpression, f: Expression, hs: list | None = None,
              cap: int = 200_000) -> RemainderForm:
    """Exact second-order residual of a division-free model.

    ``hs`` are the expanded first-order derivatives (computed if omitted).
    """
    if estimate_terms(fexpr.tree) > cap:
        return RemainderForm(None, [], fexpr)
    try:
        ft = expand(fexpr.tree)
    except ResourceLimitError:
        return RemainderForm(None, [], fexpr)
    if hs is None:
        hs = derivative_polynomials(fexpr)
    r = RemainderForm(ft - expand(f) - _first_order_sum(hs), [], fexpr)
    r.check_terms()
    return r


def fraction_remainder(fexpr: FpExpression, n: Expression, q: Expression,
                       gs: list, power: int) -> RemainderForm:
    """Residual of N/Q over the common denominator Q~ * Q^power.

    ``gs`` satisfy h_i = g_i / Q^power.
    """
    nt, qt = split_top_fraction(fexpr)
    k = fexpr.k
    ntp, qtp = expand(nt), expand(qt)
    np_, qp = expand(n), expand(q)
    qpow = Polynomial.const(1)
    for _ in range(power):
        qpow = qpow * qp
    one_e = Polynomial.const(1) + Polynomial.symbol(err_e(k))
    num = ntp * one_e * qpow + Polynomial.symbol(err_d(k)) * qtp * qpow
    qpow_1 = Polynomial.const(1)
    for _ in range(power - 1):
        qpow_1 = qpow_1 * qp
    num = num - np_ * qtp * qpow_1 - _first_order_sum(gs) * qtp
    r = RemainderForm(num, [(qt, 1), (q, power)], fexpr)
    r.check_terms()
    return r
