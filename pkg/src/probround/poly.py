"""Sparse multivariate polynomials with exact rational coefficients.

Symbols are small tuples so that they sort quickly and deterministically:

* ``(0, name, tag)`` an input variable; ``tag`` is ORIG, POS (x+) or NEG (x-)
* ``(1, i, 0)``      relative error symbol e_i
* ``(2, i, 0)``      absolute error symbol d_i

A monomial is a sorted tuple of ``(symbol, exponent)`` pairs.  Products that
would contain both x+ and x- of the same variable vanish, since
x+ * x- = 0.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable

from .expr import BinOp, Const, ErrVar, Expression, Neg, Var

ORIG, POS, NEG = 0, 1, 2
TAG_NAMES = {ORIG: "", POS: "+", NEG: "-"}

DEFAULT_TERM_CAP = 5_000_000


class ResourceLimitError(RuntimeError):
    """Raised when an expansion would exceed the configured term cap."""


class NotPolynomialError(ValueError):
    """Raised when expanding an expression with a non-constant division."""


def var(name: str, tag: int = ORIG) -> tuple:
    return (0, name, tag)


def err_e(i: int) -> tuple:
    return (1, i, 0)


def err_d(i: int) -> tuple:
    return (2, i, 0)


def sym_str(sym) -> str:
    kind, name, tag = sym
    if kind == 0:
        return f"{name}{TAG_NAMES[tag]}"
    return f"{'e' if kind == 1 else 'd'}{name}"


def _mono_mul(m1: tuple, m2: tuple):
    """Product of two monomials, or None when it vanishes by x+ x- = 0."""
    if not m1:
        return m2
    if not m2:
        return m1
    out = []
    i = j = 0
    n1, n2 = len(m1), len(m2)
    while i < n1 and j < n2:
        s1, e1 = m1[i]
        s2, e2 = m2[j]
        if s1 == s2:
            out.append((s1, e1 + e2))
            i += 1
            j += 1
        elif s1 < s2:
            out.append(m1[i])
            i += 1
        else:
            out.append(m2[j])
            j += 1
    out.extend(m1[i:])
    out.extend(m2[j:])
    # tags sort ORIG < POS < NEG, so x+ sits right before x- of the same base
    prev = None
    for s, _ in out:
        if s[0] == 0 and s[2] == NEG and prev is not None and prev[0] == 0 \
                and prev[1] == s[1] and prev[2] == POS:
            return None
        prev = s
    return tuple(out)


def mono_degree(m: tuple) -> int:
    return sum(e for _, e in m)


def _order_key(m: tuple):
    # graded lexicographic over the symbol order
    return (mono_degree(m), m)


class Polynomial:
    """Immutable-by-convention sparse polynomial ``{monomial: Fraction}``."""

    __slots__ = ("terms",)

    def __init__(self, terms: dict | None = None):
        self.terms = {} if terms is None else terms

    # -- constructors --------------------------------------------------
    @classmethod
    def const(cls, c) -> "Polynomial":
        c = Fraction(c)
        return cls({(): c} if c else {})

    @classmethod
    def symbol(cls, sym, exp: int = 1) -> "Polynomial":
        return cls({((sym, exp),): Fraction(1)})

    @classmethod
    def variable(cls, name: str, tag: int = ORIG) -> "Polynomial":
        return cls.symbol(var(name, tag))

    # -- inspection ----------------------------------------------------
    def __len__(self):
        return len(self.terms)

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.const(other)
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def sorted_terms(self) -> list:
        """Terms in canonical (graded lexicographic) order."""
        return sorted(self.terms.items(), key=lambda kv: _order_key(kv[0]))

    def symbols(self) -> set:
        return {s for m in self.terms for s, _ in m}

    def degree(self) -> int:
        return max((mono_degree(m) for m in self.terms), default=0)

    def is_constant(self) -> bool:
        return all(not m for m in self.terms)

    def constant_value(self) -> Fraction:
        return self.terms.get((), Fraction(0))

    def __repr__(self):
        return f"Polynomial({self})"

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for m, c in self.sorted_terms():
            mono = "*".join(sym_str(s) + (f"^{e}" if e > 1 else "") for s, e in m)
            if not mono:
                parts.append(str(c))
            elif c == 1:
                parts.append(mono)
            elif c == -1:
                parts.append("-" + mono)
            else:
                parts.append(f"{c}*{mono}")
        return " + ".join(parts).replace("+ -", "- ")

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.const(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            v = out.get(m, 0) + c
            if v:
                out[m] = v
            else:
                out.pop(m, None)
        return Polynomial(out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.const(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c) -> "Polynomial":
        c = Fraction(c)
        if not c:
            return Polynomial()
        return Polynomial({m: v * c for m, v in self.terms.items()})

    def mul(self, other: "Polynomial", cap: int = DEFAULT_TERM_CAP) -> "Polynomial":
        out: dict = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = _mono_mul(m1, m2)
                if m is None:
                    continue
                v = out.get(m, 0) + c1 * c2
                if v:
                    out[m] = v
                else:
                    del out[m]
            if len(out) > cap:
                raise ResourceLimitError(
                    f"polynomial product exceeds {cap} terms; lower the analysis order")
        return Polynomial(out)

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return self.scale(other)
        return self.mul(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __pow__(self, n: int):
        return poly_pow(self, n)

    # -- evaluation ----------------------------------------------------
    def evaluate(self, env: dict):
        """Evaluate with ``env`` mapping variable names (and ``('e', i)``, ``('d', i)``)."""
        total = 0
        for m, c in self.terms.items():
            t = c
            for s, e in m:
                t = t * _sym_value(s, env) ** e
            total = total + t
        return total

    def evaluate_float(self, env: dict):
        """Float evaluation (numpy arrays allowed); coefficients rounded to binary64."""
        total = 0.0
        for m, c in self.terms.items():
            t = float(c)
            for s, e in m:
                t = t * _sym_value(s, env) ** e
            total = total + t
        return total

    def substitute_zero(self, kinds=(1, 2)) -> "Polynomial":
        """Drop every term that contains a symbol of the given kinds."""
        return Polynomial({m: c for m, c in self.terms.items()
                           if not any(s[0] in kinds for s, _ in m)})


def _sym_value(sym, env):
    kind, name, tag = sym
    if kind == 1:
        return env.get(("e", name), 0)
    if kind == 2:
        return env.get(("d", name), 0)
    x = env[name]
    if tag == ORIG:
        return x
    if tag == POS:
        return _pos(x)
    return _pos(-x)


def _pos(x):
    try:
        return x if x > 0 else x * 0
    except ValueError:  # numpy arrays
        import numpy as np
        return np.maximum(x, 0)


def poly_pow(p: Polynomial, n: int, cap: int = DEFAULT_TERM_CAP) -> Polynomial:
    """``p ** n`` by repeated multiplication, applying x+ x- = 0 at every step."""
    if n < 0:
        raise ValueError("negative power")
    if n == 0:
        return Polynomial.const(1)
    # repeated multiplication by the (sparse) base keeps intermediate sizes small
    result = p
    for _ in range(n - 1):
        result = result.mul(p, cap)
    return result


def powers(p: Polynomial, n: int, cap: int = DEFAULT_TERM_CAP, deadline=None) -> list:
    """``[p**0, p**1, ..., p**n]``."""
    out = [Polynomial.const(1)]
    for _ in range(n):
        if deadline is not None:
            deadline.check()
        out.append(out[-1].mul(p, cap))
    return out


def expand(expr: Expression) -> Polynomial:
    """Expand a division-free expression (constant denominators allowed)."""
    if isinstance(expr, Const):
        return Polynomial.const(expr.value)
    if isinstance(expr, Var):
        return Polynomial.variable(expr.name)
    if isinstance(expr, ErrVar):
        return Polynomial.symbol(err_e(expr.index) if expr.kind == "e" else err_d(expr.index))
    if isinstance(expr, Neg):
        return -expand(expr.child)
    left = expand(expr.left)
    if expr.op == "/":
        if not isinstance(expr.right, Const):
            raise NotPolynomialError("cannot expand a non-constant division")
        return left.scale(1 / expr.right.value)
    right = expand(expr.right)
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    return left * right


def poly_divide_exact(p: Polynomial, q: Polynomial):
    """Exact quotient ``p / q``, or ``None`` when ``q`` does not divide ``p``.

    Multivariate division by the leading term under a lexicographic order;
    with a single divisor the remainder is zero exactly when q | p.
    """
    if not q:
        raise ZeroDivisionError("division by the zero polynomial")
    if not p:
        return Polynomial()
    syms = sorted(p.symbols() | q.symbols())
    idx = {s: i for i, s in enumerate(syms)}

    def vec(m):
        v = [0] * len(syms)
        for s, e in m:
            v[idx[s]] = e
        return tuple(v)

    def mono(v):
        return tuple((syms[i], e) for i, e in enumerate(v) if e)

    qv = {vec(m): c for m, c in q.terms.items()}
    q_lead = max(qv)
    q_lc = qv[q_lead]
    rem = {vec(m): c for m, c in p.terms.items()}
    quot: dict = {}
    while rem:
        lead = max(rem)
        shift = tuple(a - b for a, b in zip(lead, q_lead))
        if any(s < 0 for s in shift):
            return None
        coef = rem[lead] / q_lc
        quot[shift] = quot.get(shift, 0) + coef
        for qm, qc in qv.items():
            m = tuple(a + b for a, b in zip(qm, shift))
            v = rem.get(m, 0) - coef * qc
            if v:
                rem[m] = v
            else:
                rem.pop(m, None)
    return Polynomial({mono(v): c for v, c in quot.items() if c})


# ---------------------------------------------------------------------------
# Positive-negative decomposition

def _pn_factor(sym, exp, signs) -> Polynomial:
    kind, name, tag = sym
    if kind != 0 or tag != ORIG or exp % 2 == 0:
        return Polynomial.symbol(sym, exp)
    sign = signs.get(name, "spans")
    if sign == "spans":
        return Polynomial.symbol(var(name, POS), exp) - Polynomial.symbol(var(name, NEG), exp)
    if sign == "nonpos":
        return -Polynomial.symbol(var(name, NEG), exp)
    return Polynomial.symbol(sym, exp)


def pn_rewrite(h: Polynomial, signs: dict) -> Polynomial:
    """Rewrite odd powers of sign-indefinite or non-positive variables.

    The result equals ``h`` pointwise and every monomial in it is
    non-negative, so each term carries the sign of its coefficient.
    """
    out = Polynomial()
    for m, c in h.terms.items():
        t = Polynomial.const(c)
        for s, e in m:
            t = t * _pn_factor(s, e, signs)
        out = out + t
    return out


def split_signs(h: Polynomial):
    """Route terms by coefficient sign: returns (h_plus, h_minus), h = h_plus - h_minus."""
    plus = {m: c for m, c in h.terms.items() if c > 0}
    minus = {m: -c for m, c in h.terms.items() if c < 0}
    return Polynomial(plus), Polynomial(minus)


def pn_decompose(hs: Iterable[Polynomial], signs: dict) -> Polynomial:
    """Polynomial p with sum_i |h_i e_i| <= p * eps for all |e_i| <= eps."""
    p = Polynomial()
    for h in hs:
        hp, hm = split_signs(pn_rewrite(h, signs))
        p = p + hp + hm
    return p


def signs_of(dists: dict) -> dict:
    return {name: d.sign for name, d in dists.items()}


def upper_float(q: Fraction) -> float:
    """Smallest float >= q (tiny positive values clamp to the least subnormal)."""
    f = float(q)
    if Fraction(f) < q:
        f = math.nextafter(f, math.inf)
    return f


def lower_float(q: Fraction) -> float:
    f = float(q)
    if Fraction(f) > q:
        f = math.nextafter(f, -math.inf)
    return f
