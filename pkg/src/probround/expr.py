"""Arithmetic expressions over random inputs, and the problem-file parser.

A problem file is line oriented::

    # comment
    prec single                  # or: double, or: eps=<q> delta=<q>
    conf 0.99
    var x uniform(-1, 1)
    var y normal(-2, 2)
    var z laplace(-1, 1, 0.5)
    expr x*y + z

Constants are kept as exact rationals.  Sub-expressions without variables
are folded exactly at parse time, so a division node either has a
constant denominator (``Const``) or a non-constant one.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Union


class ProblemError(ValueError):
    """Syntax or validation error in a problem file."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# Expression tree

@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class ErrVar:
    """Error symbol of a rounded operation: kind 'e' (relative) or 'd' (absolute)."""

    kind: str
    index: int


@dataclass(frozen=True)
class Neg:
    child: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"

    @property
    def constant_denominator(self) -> bool:
        return self.op == "/" and isinstance(self.right, Const)


Expression = Union[Const, Var, ErrVar, Neg, BinOp]

OPS = ("+", "-", "*", "/")


def walk(expr: Expression) -> Iterator[Expression]:
    """Post-order traversal."""
    if isinstance(expr, Neg):
        yield from walk(expr.child)
    elif isinstance(expr, BinOp):
        yield from walk(expr.left)
        yield from walk(expr.right)
    yield expr


def variables(expr: Expression) -> set:
    return {n.name for n in walk(expr) if isinstance(n, Var)}


def count_ops(expr: Expression) -> int:
    """Number of rounded operations (negation is exact and not counted)."""
    return sum(1 for n in walk(expr) if isinstance(n, BinOp))


def is_division_free(expr: Expression) -> bool:
    return all(not (isinstance(n, BinOp) and n.op == "/" and not n.constant_denominator)
               for n in walk(expr))


def evaluate(expr: Expression, env: dict):
    """Evaluate with whatever number type ``env`` carries (Fraction, float, ndarray).

    ``env`` maps variable names, and optionally ``('e', i)`` / ``('d', i)``
    keys for error symbols.
    """
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        return env[expr.name]
    if isinstance(expr, ErrVar):
        return env.get((expr.kind, expr.index), 0)
    if isinstance(expr, Neg):
        return -evaluate(expr.child, env)
    lv = evaluate(expr.left, env)
    rv = evaluate(expr.right, env)
    if expr.op == "+":
        return lv + rv
    if expr.op == "-":
        return lv - rv
    if expr.op == "*":
        return lv * rv
    return lv / rv


def _fmt_const(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def pretty(expr: Expression) -> str:
    """Render an expression so that ``parse_expression`` gives it back."""
    if isinstance(expr, Const):
        s = _fmt_const(expr.value)
        return f"({s})" if expr.value < 0 or expr.value.denominator != 1 else s
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, ErrVar):
        return f"{expr.kind}{expr.index}"
    if isinstance(expr, Neg):
        return f"-({pretty(expr.child)})"
    p = _PREC[expr.op]
    left = pretty(expr.left)
    if isinstance(expr.left, BinOp) and _PREC[expr.left.op] < p:
        left = f"({left})"
    right = pretty(expr.right)
    # left-associative: a right operand of equal precedence needs parentheses
    if isinstance(expr.right, BinOp) and _PREC[expr.right.op] <= p:
        right = f"({right})"
    return f"{left} {expr.op} {right}"


# ---------------------------------------------------------------------------
# Distributions and problem statement

FAMILIES = ("uniform", "normal", "laplace")


@dataclass(frozen=True)
class Distribution:
    """Input law truncated to [a, b].

    ``normal`` is the standard normal restricted to [a, b]; ``laplace`` has
    pre-truncation density exp(-|x|/sigma) / (2 sigma).
    """

    family: str
    a: float
    b: float
    sigma: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ProblemError(f"unknown distribution family {self.family!r}")
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ProblemError("distribution bounds must be finite")
        if not self.a < self.b:
            raise ProblemError(f"inverted bounds [{self.a}, {self.b}]")
        if self.family == "laplace" and not self.sigma > 0:
            raise ProblemError("laplace scale must be positive")

    @property
    def sign(self) -> str:
        """'spans', 'nonneg' or 'nonpos' according to the support."""
        if self.a >= 0:
            return "nonneg"
        if self.b <= 0:
            return "nonpos"
        return "spans"


SINGLE = (Fraction(1, 2**24), Fraction(1, 2**150))
DOUBLE = (Fraction(1, 2**53), Fraction(1, 2**1075))


@dataclass
class ProblemSpec:
    variables: dict            # name -> Distribution, declaration order
    expr: Expression
    eps: Fraction | None = None
    delta: Fraction | None = None
    confidence: float | None = None
    fmt: str | None = None      # 'single' / 'double' when a preset was used

    @property
    def used_variables(self) -> dict:
        used = variables(self.expr)
        return {k: v for k, v in self.variables.items() if k in used}


# ---------------------------------------------------------------------------
# Tokenizer / parser

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<hex>[+-]?0[xX][0-9a-fA-F]*\.?[0-9a-fA-F]*[pP][+-]?\d+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/(),=])
""", re.VERBOSE)


def parse_number(text: str) -> Fraction:
    """Exact rational value of a decimal, fraction or hexadecimal-float literal."""
    t = text.strip()
    if re.fullmatch(r"[+-]?0[xX].*", t):
        return Fraction(float.fromhex(t))
    if "/" in t:
        n, d = t.split("/", 1)
        return parse_number(n) / parse_number(d)
    return Fraction(t)


def _tokenize(src: str, line: int, col0: int):
    pos = 0
    out = []
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ProblemError(f"unexpected character {src[pos]!r}", line, col0 + pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            if kind == "hex" and m.group().startswith(("+", "-")):
                out.append(("op", m.group()[0], col0 + pos + 1))
                out.append(("hex", m.group()[1:], col0 + pos + 2))
            else:
                out.append((kind, m.group(), col0 + pos + 1))
        pos = m.end()
    out.append(("end", "", col0 + len(src) + 1))
    return out


def _fold(op: str, left: Expression, right: Expression) -> Expression:
    if isinstance(left, Const) and isinstance(right, Const):
        a, b = left.value, right.value
        if op == "+":
            return Const(a + b)
        if op == "-":
            return Const(a - b)
        if op == "*":
            return Const(a * b)
        if b == 0:
            raise ProblemError("division by zero constant")
        return Const(a / b)
    if op == "/" and isinstance(right, Const) and right.value == 0:
        raise ProblemError("division by zero constant")
    return BinOp(op, left, right)


class _Parser:
    # expr   := term (('+'|'-') term)*
    # term   := unary (('*'|'/') unary)*
    # unary  := '-' unary | '+' unary | atom
    # atom   := number | ident | '(' expr ')'

    def __init__(self, tokens, line):
        self.toks = tokens
        self.i = 0
        self.line = line

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return ProblemError(msg, self.line, tok[2])

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            raise self.error(f"expected {value!r}, found {tok[1] or 'end of line'!r}", tok)
        return tok

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = _fold(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = _fold(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            child = self.unary()
            if isinstance(child, Const):
                return Const(-child.value)
            if isinstance(child, Neg):
                return child.child
            return Neg(child)
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.atom()

    def atom(self):
        tok = self.take()
        if tok[0] in ("num", "hex"):
            return Const(parse_number(tok[1]))
        if tok[0] == "ident":
            return Var(tok[1])
        if tok[1] == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise self.error(f"unexpected {tok[1] or 'end of line'!r}", tok)

    def number(self):
        neg = False
        if self.peek()[1] in ("-", "+"):
            neg = self.take()[1] == "-"
        tok = self.take()
        if tok[0] not in ("num", "hex"):
            raise self.error("expected a number", tok)
        q = parse_number(tok[1])
        if self.peek()[1] == "/":
            self.take()
            d = self.take()
            if d[0] not in ("num", "hex"):
                raise self.error("expected a number", d)
            q /= parse_number(d[1])
        return -q if neg else q


def parse_expression(text: str, line: int = 1, column: int = 0) -> Expression:
    p = _Parser(_tokenize(text, line, column), line)
    node = p.expr()
    if p.peek()[0] != "end":
        raise p.error(f"unexpected {p.peek()[1]!r}")
    return node


def _parse_var(rest: str, line: int, col: int):
    p = _Parser(_tokenize(rest, line, col), line)
    name = p.take()
    if name[0] != "ident":
        raise p.error("expected a variable name", name)
    fam = p.take()
    if fam[0] != "ident":
        raise p.error("expected a distribution family", fam)
    family = fam[1].lower()
    if family not in FAMILIES:
        raise ProblemError(f"unknown distribution family {fam[1]!r}", line, fam[2])
    p.expect("(")
    args = [p.number()]
    while p.peek()[1] == ",":
        p.take()
        args.append(p.number())
    p.expect(")")
    if p.peek()[0] != "end":
        raise p.error(f"unexpected {p.peek()[1]!r}")
    want = 3 if family == "laplace" else 2
    if len(args) != want:
        raise ProblemError(f"{family} takes {want} arguments, got {len(args)}", line, fam[2])
    try:
        dist = Distribution(family, float(args[0]), float(args[1]),
                            float(args[2]) if family == "laplace" else 1.0)
    except ProblemError as exc:
        raise ProblemError(str(exc), line, fam[2]) from None
    return name[1], dist


def parse_problem(text: str) -> ProblemSpec:
    """Parse a problem file into a validated ``ProblemSpec``."""
    dists: dict = {}
    expr = None
    eps = delta = None
    fmt = None
    conf = None
    expr_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        stripped = line.strip()
        if not stripped:
            continue
        indent = len(line) - len(line.lstrip())
        word, _, rest = stripped.partition(" ")
        rest_col = indent + len(word) + 1
        if word == "var":
            name, dist = _parse_var(rest, lineno, rest_col)
            if name in dists:
                raise ProblemError(f"duplicate variable declaration {name!r}", lineno)
            dists[name] = dist
        elif word == "expr":
            if expr is not None:
                raise ProblemError("more than one expr line", lineno)
            if not rest.strip():
                raise ProblemError("empty expression", lineno)
            expr = parse_expression(rest, lineno, rest_col)
            expr_line = lineno
        elif word == "prec":
            arg = rest.strip()
            if arg == "single":
                (eps, delta), fmt = SINGLE, "single"
            elif arg == "double":
                (eps, delta), fmt = DOUBLE, "double"
            else:
                m = re.fullmatch(r"eps\s*=\s*(\S+)\s+delta\s*=\s*(\S+)", arg)
                if not m:
                    raise ProblemError("expected 'single', 'double' or 'eps=<q> delta=<q>'", lineno)
                try:
                    eps, delta = parse_number(m.group(1)), parse_number(m.group(2))
                except (ValueError, ZeroDivisionError):
                    raise ProblemError("malformed precision value", lineno) from None
                if eps <= 0 or delta < 0:
                    raise ProblemError("need eps > 0 and delta >= 0", lineno)
                fmt = None
        elif word == "conf":
            try:
                conf = float(parse_number(rest))
            except (ValueError, ZeroDivisionError):
                raise ProblemError("malformed confidence", lineno) from None
            if not 0 < conf < 1:
                raise ProblemError("confidence must lie in (0, 1)", lineno)
        else:
            raise ProblemError(f"unknown directive {word!r}", lineno, indent + 1)
    if expr is None:
        raise ProblemError("missing expr line")
    for name in sorted(variables(expr)):
        if name not in dists:
            raise ProblemError(f"undeclared variable {name}", expr_line)
    return ProblemSpec(dists, expr, eps, delta, conf, fmt)


def format_problem(spec: ProblemSpec) -> str:
    """Render a ``ProblemSpec`` back into problem-file text."""
    lines = []
    if spec.fmt in ("single", "double"):
        lines.append(f"prec {spec.fmt}")
    elif spec.eps is not None:
        lines.append(f"prec eps={_fmt_const(spec.eps)} delta={_fmt_const(spec.delta or 0)}")
    if spec.confidence is not None:
        lines.append(f"conf {spec.confidence!r}")
    for name, d in spec.variables.items():
        args = [repr(d.a), repr(d.b)] + ([repr(d.sigma)] if d.family == "laplace" else [])
        lines.append(f"var {name} {d.family}({', '.join(args)})")
    lines.append(f"expr {pretty(spec.expr)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Structural classification

@dataclass(frozen=True)
class DivisionFree:
    pass


@dataclass(frozen=True)
class TopFraction:
    numerator: Expression
    denominator: Expression


@dataclass(frozen=True)
class Unsupported:
    reason: str


StructuralForm = Union[DivisionFree, TopFraction, Unsupported]


def classify(expr: Expression) -> StructuralForm:
    if is_division_free(expr):
        return DivisionFree()
    if (isinstance(expr, BinOp) and expr.op == "/" and not expr.constant_denominator
            and is_division_free(expr.left) and is_division_free(expr.right)):
        return TopFraction(expr.left, expr.right)
    return Unsupported("nested non-constant division")


def check_denominator_sign(q: Expression, dists: dict) -> str:
    """'positive', 'negative' or 'indeterminate' from an interval enclosure of ``q``."""
    from .bounds import Box, interval_eval

    lo, hi = interval_eval(q, Box.from_distributions(dists))
    if lo > 0:
        return "positive"
    if hi < 0:
        return "negative"
    return "indeterminate"
