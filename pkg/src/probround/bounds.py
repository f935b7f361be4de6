"""Deterministic bounds: interval enclosures and structural magnitude bounds.

All arithmetic is exact (Fractions); results leave rational arithmetic only
through directed conversion, so every float returned here is an upper
(or lower) bound of the exact quantity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .expr import BinOp, Const, ErrVar, Expression, Neg, Var
from .poly import NEG, ORIG, POS, Polynomial, upper_float


class IndeterminateDenominator(ArithmeticError):
    """A denominator enclosure contains zero."""


class BoundError(ValueError):
    pass


@dataclass
class Box:
    """Ranges for inputs plus the [-eps, eps] / [-delta, delta] error ranges."""

    vars: dict = field(default_factory=dict)   # name -> (lo, hi) as Fractions
    eps: Fraction = Fraction(0)
    delta: Fraction = Fraction(0)

    @classmethod
    def from_distributions(cls, dists: dict, eps=0, delta=0) -> "Box":
        return cls({n: (Fraction(d.a), Fraction(d.b)) for n, d in dists.items()},
                   Fraction(eps), Fraction(delta))

    def range(self, name):
        try:
            return self.vars[name]
        except KeyError:
            raise BoundError(f"no range for variable {name!r}") from None

    def err_range(self, kind):
        r = self.eps if kind == "e" else self.delta
        return -r, r

    def magnitude(self, name) -> Fraction:
        lo, hi = self.range(name)
        return max(abs(lo), abs(hi))


# ---------------------------------------------------------------------------
# Interval arithmetic

def _imul(a, b):
    ps = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return min(ps), max(ps)


def _idiv(a, b):
    if b[0] <= 0 <= b[1]:
        raise IndeterminateDenominator(f"denominator enclosure [{float(b[0])}, {float(b[1])}] contains 0")
    return _imul(a, (1 / b[1], 1 / b[0]))


def _ipow(a, n):
    lo, hi = a
    if n == 0:
        return Fraction(1), Fraction(1)
    if n % 2 or lo >= 0:
        return lo ** n, hi ** n
    if hi <= 0:
        return hi ** n, lo ** n
    return Fraction(0), max(lo ** n, hi ** n)


def interval_eval(expr: Expression, box: Box):
    """Exact enclosure (lo, hi) of ``expr`` over ``box`` (naive interval arithmetic)."""
    if isinstance(expr, Const):
        return expr.value, expr.value
    if isinstance(expr, Var):
        return box.range(expr.name)
    if isinstance(expr, ErrVar):
        return box.err_range(expr.kind)
    if isinstance(expr, Neg):
        lo, hi = interval_eval(expr.child, box)
        return -hi, -lo
    a = interval_eval(expr.left, box)
    b = interval_eval(expr.right, box)
    if expr.op == "+":
        return a[0] + b[0], a[1] + b[1]
    if expr.op == "-":
        return a[0] - b[1], a[1] - b[0]
    if expr.op == "*":
        return _imul(a, b)
    return _idiv(a, b)


def _sym_interval(sym, box):
    kind, name, tag = sym
    if kind == 1:
        return box.err_range("e")
    if kind == 2:
        return box.err_range("d")
    lo, hi = box.range(name)
    if tag == POS:
        return max(lo, Fraction(0)), max(hi, Fraction(0))
    if tag == NEG:
        return max(-hi, Fraction(0)), max(-lo, Fraction(0))
    return lo, hi


def poly_interval(p: Polynomial, box: Box):
    """Term-wise enclosure of a polynomial (powers handled tightly)."""
    lo = hi = Fraction(0)
    for m, c in p.terms.items():
        t = (c, c)
        for s, e in m:
            t = _imul(t, _ipow(_sym_interval(s, box), e))
        lo += t[0]
        hi += t[1]
    return lo, hi


# ---------------------------------------------------------------------------
# Structural bound

def _sym_magnitude(sym, box) -> Fraction:
    lo, hi = _sym_interval(sym, box)
    return max(abs(lo), abs(hi))


def struct_bound(obj, box: Box) -> Fraction:
    """Upper bound on |obj| over ``box`` by structural recursion (exact)."""
    if isinstance(obj, Polynomial):
        total = Fraction(0)
        for m, c in obj.terms.items():
            t = abs(c)
            for s, e in m:
                t *= _sym_magnitude(s, box) ** e
            total += t
        return total
    if isinstance(obj, Const):
        return abs(obj.value)
    if isinstance(obj, Var):
        return box.magnitude(obj.name)
    if isinstance(obj, ErrVar):
        return box.eps if obj.kind == "e" else box.delta
    if isinstance(obj, Neg):
        return struct_bound(obj.child, box)
    if isinstance(obj, BinOp):
        if obj.op == "/":
            if not isinstance(obj.right, Const):
                raise BoundError("structural bound is undefined for a non-constant division")
            return struct_bound(obj.left, box) / abs(obj.right.value)
        a, b = struct_bound(obj.left, box), struct_bound(obj.right, box)
        return a + b if obj.op in "+-" else a * b
    raise TypeError(f"cannot bound {type(obj).__name__}")


def residual_bound(tree: Expression, box: Box) -> Fraction:
    """Bound on |R2| of a division-free model without expanding it.

    Every subterm's model value is split as V + L + R (exact value, part
    linear in the e's, rest) and bounds on |V|, |L|, |R| are propagated.
    """
    def go(node):
        if isinstance(node, Const):
            return abs(node.value), Fraction(0), Fraction(0)
        if isinstance(node, Var):
            return box.magnitude(node.name), Fraction(0), Fraction(0)
        if isinstance(node, Neg):
            return go(node.child)
        if isinstance(node, BinOp) and _is_rounded(node):
            v, l, r = go(node.left.left)
            e, d = box.eps, box.delta
            return v, l + e * v, r * (1 + e) + e * l + d
        if isinstance(node, BinOp):
            if node.op == "/":
                if not isinstance(node.right, Const):
                    raise BoundError("residual propagation needs a division-free model")
                c = abs(node.right.value)
                v, l, r = go(node.left)
                return v / c, l / c, r / c
            a, b = go(node.left), go(node.right)
            if node.op in "+-":
                return a[0] + b[0], a[1] + b[1], a[2] + b[2]
            (vl, ll, rl), (vr, lr, rr) = a, b
            return (vl * vr, vl * lr + ll * vr,
                    ll * lr + rl * (vr + lr + rr) + (vl + ll) * rr)
        raise BoundError(f"unexpected node {node!r} in a floating-point model")

    return go(tree)[2]


def _is_rounded(node) -> bool:
    """Matches the (w * (1 + e_i)) + d_i pattern produced by fp_transform."""
    try:
        return (node.op == "+" and isinstance(node.right, ErrVar) and node.right.kind == "d"
                and node.left.op == "*" and isinstance(node.left.right, BinOp)
                and isinstance(node.left.right.right, ErrVar)
                and node.left.right.right.kind == "e")
    except AttributeError:
        return False


def _magnitude_lower(iv) -> Fraction:
    lo, hi = iv
    if lo > 0:
        return lo
    if hi < 0:
        return -hi
    raise IndeterminateDenominator(
        f"denominator enclosure [{float(lo)}, {float(hi)}] contains 0; cannot certify Q != 0")


def second_order_bound_exact(rform, box: Box) -> Fraction:
    if not rform.exact:
        return residual_bound(rform.fexpr.tree, box)
    num = struct_bound(rform.numerator, box)
    if not rform.denominators or num == 0:
        return num
    den = Fraction(1)
    for factor, power in rform.denominators:
        den *= _magnitude_lower(interval_eval(factor, box)) ** power
    return num / den


def second_order_bound(rform, box: Box) -> float:
    """U2 >= |R2| over the box, as a float rounded upward."""
    q = second_order_bound_exact(rform, box)
    return upper_float(q) if q else 0.0
