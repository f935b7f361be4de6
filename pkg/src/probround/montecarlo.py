"""Empirical round-off validation by sampling.

Inputs are drawn from the declared laws, rounded into the target format,
and the expression is evaluated twice on those same inputs: once with
round-to-nearest after every operation in the target format, once in a
wider reference (binary64 for binary32 targets, double-double for
binary64 targets).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import truncnorm

from .expr import BinOp, Const, Expression, Neg, ProblemSpec, Var, DOUBLE

CHUNK = 1 << 17
MIN_SAMPLES = 10_000


# ---------------------------------------------------------------------------
# Sampling

def _laplace_cdf(x, s):
    return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0) / s), 1 - 0.5 * np.exp(-np.maximum(x, 0) / s))


def _laplace_ppf(q, s):
    return np.where(q < 0.5, s * np.log(2 * np.maximum(q, 1e-300)),
                    -s * np.log(2 * np.maximum(1 - q, 1e-300)))


def sample(dist, rng, size=None):
    """Inverse-CDF draws from a truncated law; always inside [a, b]."""
    u = rng.random(size)
    a, b = dist.a, dist.b
    if dist.family == "uniform":
        x = a + (b - a) * u
    elif dist.family == "normal":
        x = truncnorm.ppf(u, a, b)
    else:
        s = dist.sigma
        fa, fb = _laplace_cdf(np.float64(a), s), _laplace_cdf(np.float64(b), s)
        x = _laplace_ppf(fa + u * (fb - fa), s)
    return np.clip(x, a, b)


# ---------------------------------------------------------------------------
# Double-double reference arithmetic (vectorised)

_SPLITTER = 134217729.0   # 2^27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def dd_add(x, y):
    s, e = _two_sum(x[0], y[0])
    return _quick_two_sum(s, e + x[1] + y[1])


def dd_neg(x):
    return -x[0], -x[1]


def dd_mul(x, y):
    p, e = _two_prod(x[0], y[0])
    return _quick_two_sum(p, e + x[0] * y[1] + x[1] * y[0])


def dd_div(x, y):
    q1 = x[0] / y[0]
    r = dd_add(x, dd_neg(dd_mul((q1, np.zeros_like(q1)), y)))
    q2 = r[0] / y[0]
    r = dd_add(r, dd_neg(dd_mul((q2, np.zeros_like(q2)), y)))
    q3 = r[0] / y[0]
    s, e = _quick_two_sum(q1, q2)
    return dd_add((s, e), (q3, np.zeros_like(q3)))


# ---------------------------------------------------------------------------
# Evaluation

_NP_OPS = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide}
_DD_OPS = {"+": dd_add, "-": lambda x, y: dd_add(x, dd_neg(y)), "*": dd_mul, "/": dd_div}


def _target_dtype(fmt):
    if fmt in ("binary32", "single"):
        return np.float32
    if fmt in ("binary64", "double"):
        return np.float64
    raise ValueError(f"unknown format {fmt!r}")


def _const(value: Fraction, dtype):
    # correctly rounded conversion of the exact constant
    return dtype(float(value)) if dtype is np.float64 else np.float32(_round32(value))


def _round32(q: Fraction) -> float:
    f = float(q)
    g = float(np.float32(f))
    # double rounding through binary64 is harmless except at exact ties
    if Fraction(g) != q:
        lo = float(np.nextafter(np.float32(g), np.float32(-np.inf)))
        hi = float(np.nextafter(np.float32(g), np.float32(np.inf)))
        cands = [lo, g, hi]
        g = min(cands, key=lambda c: (abs(Fraction(c) - q), int(np.float32(c).view(np.uint32)) & 1))
    return g


def eval_rounded(expr: Expression, assignment: dict, fmt: str = "binary32"):
    """(target, reference) values over arrays of inputs.

    Inputs are first rounded to the target format; the reference sees the
    same rounded inputs and constants.  Returned arrays are binary64 (the
    reference of a binary64 target is its double-double high part plus
    low part, summed only when taking the difference).
    """
    dtype = _target_dtype(fmt)
    wide = dtype is np.float64
    xs = {k: np.asarray(v, dtype=np.float64).astype(dtype) for k, v in assignment.items()}
    shape = np.shape(next(iter(xs.values()))) if xs else ()

    def tgt(node):
        if isinstance(node, Const):
            return np.full(shape, _const(node.value, dtype), dtype=dtype)
        if isinstance(node, Var):
            return xs[node.name]
        if isinstance(node, Neg):
            return -tgt(node.child)
        return _NP_OPS[node.op](tgt(node.left), tgt(node.right))

    def ref32(node):
        if isinstance(node, Const):
            return np.full(shape, float(_const(node.value, dtype)))
        if isinstance(node, Var):
            return xs[node.name].astype(np.float64)
        if isinstance(node, Neg):
            return -ref32(node.child)
        return _NP_OPS[node.op](ref32(node.left), ref32(node.right))

    def ref_dd(node):
        if isinstance(node, Const):
            return np.full(shape, float(node.value)), np.zeros(shape)
        if isinstance(node, Var):
            return xs[node.name], np.zeros(shape)
        if isinstance(node, Neg):
            return dd_neg(ref_dd(node.child))
        return _DD_OPS[node.op](ref_dd(node.left), ref_dd(node.right))

    with np.errstate(all="ignore"):
        t = tgt(expr).astype(np.float64)
        if wide:
            r = ref_dd(expr)
            return t, r
        return t, ref32(expr)


def rounding_error(expr: Expression, assignment: dict, fmt: str = "binary32"):
    """(err, ok) arrays: |target - reference| and a mask of finite samples."""
    t, r = eval_rounded(expr, assignment, fmt)
    with np.errstate(all="ignore"):
        if isinstance(r, tuple):
            err = np.abs((t - r[0]) - r[1])
            ok = np.isfinite(t) & np.isfinite(r[0])
        else:
            err = np.abs(t - r)
            ok = np.isfinite(t) & np.isfinite(r)
    return err, ok


# ---------------------------------------------------------------------------
# Violation frequency

@dataclass
class SampleRun:
    samples: int
    seed: int
    threshold: float
    violations: int
    excluded: int = 0
    max_error: float = 0.0
    fmt: str = "binary32"
    extra: dict = field(default_factory=dict)

    @property
    def frequency(self) -> float:
        n = self.samples - self.excluded
        return self.violations / n if n else 0.0

    @property
    def half_width(self) -> float:
        """3-sigma binomial half-width of the observed frequency."""
        n = self.samples - self.excluded
        f = self.frequency
        return 3 * math.sqrt(f * (1 - f) / n) if n else 0.0

    def allowance(self, confidence: float) -> float:
        """Largest frequency consistent with P[err >= u] <= 1 - c at 3 sigma."""
        q = 1 - confidence
        n = self.samples - self.excluded
        return q + 3 * math.sqrt(q / n)

    def passes(self, confidence: float) -> bool:
        return self.frequency <= self.allowance(confidence)

    def to_dict(self, confidence=None) -> dict:
        d = {"samples": self.samples, "seed": self.seed, "threshold": self.threshold,
             "violations": self.violations, "excluded": self.excluded,
             "frequency": self.frequency, "half_width": self.half_width,
             "max_error": self.max_error, "format": self.fmt}
        if confidence is not None:
            d["allowance"] = self.allowance(confidence)
            d["pass"] = self.passes(confidence)
        return d


def format_of(problem: ProblemSpec) -> str:
    if problem.fmt in ("single", "double"):
        return "binary32" if problem.fmt == "single" else "binary64"
    if problem.eps is not None and problem.eps <= DOUBLE[0]:
        return "binary64"
    return "binary32"


def violation_rate(problem: ProblemSpec, u: float, n: int = 10**6, seed: int = 0,
                   fmt: str | None = None, chunk: int = CHUNK,
                   min_samples: int = MIN_SAMPLES) -> SampleRun:
    """Frequency of err >= u over ``n`` samples (deterministic in ``seed``)."""
    if n < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {n}")
    fmt = fmt or format_of(problem)
    dists = problem.used_variables
    nchunks = -(-n // chunk)
    children = np.random.SeedSequence(seed).spawn(nchunks)
    violations = excluded = 0
    max_err = 0.0
    for j, child in enumerate(children):
        size = min(chunk, n - j * chunk)
        rng = np.random.default_rng(child)
        xs = {name: sample(d, rng, size) for name, d in dists.items()}
        err, ok = rounding_error(problem.expr, xs, fmt)
        excluded += int(np.count_nonzero(~ok))
        e = err[ok]
        violations += int(np.count_nonzero(e >= u))
        if e.size:
            max_err = max(max_err, float(e.max()))
    return SampleRun(n, seed, float(u), violations, excluded, max_err, fmt)
