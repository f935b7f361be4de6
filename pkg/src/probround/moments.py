"""Closed-form moments of truncated input laws and expectations of polynomials.

Every variable's law is one of three families truncated to a finite
interval.  For a sub-interval [lo, hi] of the support we need the partial
integrals

    J_k(lo, hi) = integral_lo^hi x^k rho(x) dx

of the pre-truncation density rho.  Moments of x, x+ and x- on any
sub-range are ratios of these:

    E[x^k]    = J_k(lo, hi) / J_0(lo, hi)
    E[(x+)^k] = J_k(max(lo, 0), hi) / J_0(lo, hi)
    E[(x-)^k] = (-1)^k J_k(lo, min(hi, 0)) / J_0(lo, hi)

(for k = 0 the component "moments" are the masses of each side, which
keeps E[(x+)^k] + (-1)^k E[(x-)^k] = E[x^k] valid for every k).

Uniform integrals are exact rationals.  The normal and Laplace recursions
lose digits quickly for intervals near the origin, so they run in mpmath
at increasing precision until two successive precisions agree.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import mpmath
from mpmath import mp, mpf

from .expr import Distribution
from .poly import NEG, ORIG, POS, Polynomial

WORK_DPS = 40
# relative-to-scale accuracy of every tabulated moment
MOMENT_TOL_DIGITS = 30
DEFAULT_MAX_ORDER = 64
INFLATION = mpf("1e-9")


class MomentError(ValueError):
    """Invalid moment request (zero-mass range, order too large, ...)."""


@dataclass(frozen=True)
class SubRegion:
    """Cartesian cell of a range partition: per-variable interval and weight."""

    ranges: tuple          # ((name, lo, hi), ...)
    weight: float
    index: tuple = ()

    def range_of(self, name):
        for n, lo, hi in self.ranges:
            if n == name:
                return lo, hi
        return None


# ---------------------------------------------------------------------------
# Partial integrals per family

def _uniform_partials(dist: Distribution, lo, hi, K):
    A, B = Fraction(dist.a), Fraction(dist.b)
    lo, hi = Fraction(lo), Fraction(hi)
    width = B - A
    out = []
    plo, phi = lo, hi
    for k in range(K + 1):
        out.append((phi - plo) / ((k + 1) * width))
        plo *= lo
        phi *= hi
    return out


def _normal_mass(lo, hi):
    # Phi(hi) - Phi(lo) without cancellation in either tail
    if lo >= 0:
        return (mpmath.erfc(lo / mpmath.sqrt(2)) - mpmath.erfc(hi / mpmath.sqrt(2))) / 2
    if hi <= 0:
        return (mpmath.erfc(-hi / mpmath.sqrt(2)) - mpmath.erfc(-lo / mpmath.sqrt(2))) / 2
    return 1 - (mpmath.erfc(-lo / mpmath.sqrt(2)) + mpmath.erfc(hi / mpmath.sqrt(2))) / 2


def _normal_partials(lo, hi, K):
    lo, hi = mpf(lo), mpf(hi)
    phi_lo, phi_hi = mpmath.npdf(lo), mpmath.npdf(hi)
    out = [_normal_mass(lo, hi)]
    if K >= 1:
        out.append(phi_lo - phi_hi)
    # J_k = [-x^(k-1) phi(x)]_lo^hi + (k-1) J_(k-2)
    plo, phi = lo, hi          # x^(k-1) for k = 2
    for k in range(2, K + 1):
        out.append(plo * phi_lo - phi * phi_hi + (k - 1) * out[k - 2])
        plo *= lo
        phi *= hi
    return out


def _gamma_lower(c, K):
    """I(c, k) = integral_0^c x^k e^-x dx for k = 0..K by the by-parts recursion."""
    ec = mpmath.exp(-c)
    out = [1 - ec]
    ck = mpf(1)
    for k in range(1, K + 1):
        ck *= c
        out.append(k * out[k - 1] - ck * ec)
    return out


def laplace_helper(c, k: int) -> float:
    """I(c, k) = integral_0^c x^k e^-x dx."""
    with mp.workdps(WORK_DPS * 2):
        return float(_gamma_lower(mpf(c), k)[k])


def _laplace_partials(dist: Distribution, lo, hi, K):
    lo, hi, s = mpf(lo), mpf(hi), mpf(dist.sigma)
    out = [mpf(0)] * (K + 1)
    if hi > 0:
        p0 = max(lo, mpf(0))
        i1 = _gamma_lower(hi / s, K)
        i0 = _gamma_lower(p0 / s, K) if p0 > 0 else [mpf(0)] * (K + 1)
        sk = mpf(1)
        for k in range(K + 1):
            out[k] += sk * (i1[k] - i0[k]) / 2
            sk *= s
    if lo < 0:
        n1 = min(hi, mpf(0))
        i0 = _gamma_lower(-lo / s, K)
        i1 = _gamma_lower(-n1 / s, K) if n1 < 0 else [mpf(0)] * (K + 1)
        sk = mpf(1)
        for k in range(K + 1):
            out[k] += sk * (i0[k] - i1[k]) / 2
            sk *= -s
    return out


def _raw_partials(dist, lo, hi, K):
    if dist.family == "normal":
        return _normal_partials(lo, hi, K)
    return _laplace_partials(dist, lo, hi, K)


@lru_cache(maxsize=4096)
def _partials(dist: Distribution, lo: float, hi: float, K: int) -> tuple:
    """Partial integrals J_0..J_K over [lo, hi], accurate to ~1e-30 of their scale."""
    if hi <= lo:
        return tuple(mpf(0) for _ in range(K + 1))
    if dist.family == "uniform":
        with mp.workdps(WORK_DPS):
            return tuple(mpf(q.numerator) / q.denominator for q in _uniform_partials(dist, lo, hi, K))
    dps = WORK_DPS
    prev = None
    while True:
        with mp.workdps(dps):
            vals = _raw_partials(dist, lo, hi, K)
            if prev is not None:
                m = max(abs(lo), abs(hi))
                tol = mpf(10) ** (-MOMENT_TOL_DIGITS) * abs(vals[0])
                ok = True
                for k in range(K + 1):
                    if abs(vals[k] - prev[k]) > tol * mpf(m) ** k:
                        ok = False
                        break
                if ok:
                    return tuple(+v for v in vals)
            prev = vals
        dps *= 2
        if dps > 4000:
            raise MomentError("moment recursion failed to converge")


def _table_order(k):
    return max(16, 1 << (max(k, 1) - 1).bit_length())


def _J(dist, lo, hi, k):
    return _partials(dist, float(lo), float(hi), _table_order(k))


def mass(dist: Distribution, lo, hi):
    """Pre-truncation probability mass of [lo, hi] (mpf)."""
    return _J(dist, lo, hi, 0)[0]


def component_moments(dist: Distribution, lo, hi, component: int, K: int) -> list:
    """mpf moments k = 0..K of a component of ``dist`` re-truncated to [lo, hi]."""
    lo, hi = float(lo), float(hi)
    if lo < dist.a or hi > dist.b or not lo < hi:
        raise MomentError(f"range [{lo}, {hi}] outside the support [{dist.a}, {dist.b}]")
    Z = mass(dist, lo, hi)
    if Z <= 0:
        raise MomentError(f"zero-mass range [{lo}, {hi}]")
    with mp.workdps(WORK_DPS):
        if component == ORIG:
            J = _J(dist, lo, hi, K)
            return [J[k] / Z for k in range(K + 1)]
        if component == POS:
            if hi <= 0:
                return [mpf(0)] * (K + 1)
            J = _J(dist, max(lo, 0.0), hi, K)
            return [J[k] / Z for k in range(K + 1)]
        if lo >= 0:
            return [mpf(0)] * (K + 1)
        J = _J(dist, lo, min(hi, 0.0), K)
        return [(-1) ** k * J[k] / Z for k in range(K + 1)]


def component_scale(dist, lo, hi, component, k):
    """Upper bound on |component|^k over the range, used for error accounting."""
    if component == POS:
        m = max(hi, 0.0)
    elif component == NEG:
        m = max(-lo, 0.0)
    else:
        m = max(abs(lo), abs(hi))
    return mpf(m) ** k


@lru_cache(maxsize=8192)
def _moment_table(dist, lo, hi, component, K):
    vals = component_moments(dist, lo, hi, component, K)
    scales = [component_scale(dist, lo, hi, component, j) for j in range(K + 1)]
    return tuple(vals), tuple(scales)


def raw_moment(dist: Distribution, rng=None, component: int = ORIG, k: int = 1,
               max_order: int = DEFAULT_MAX_ORDER) -> float:
    """Moment of order ``k`` of x, x+ or x- under ``dist`` re-truncated to ``rng``."""
    if k < 0:
        raise MomentError("negative moment order")
    if k > max_order:
        raise MomentError(f"moment order {k} exceeds the maximum {max_order}")
    lo, hi = rng if rng is not None else (dist.a, dist.b)
    return float(component_moments(dist, lo, hi, component, k)[k])


def subrange_weight(dist: Distribution, lo, hi) -> float:
    return float(mass(dist, lo, hi) / mass(dist, dist.a, dist.b))


def partition_ranges(dist: Distribution, b: int) -> list:
    """Equal-width split of the support into ``b`` sub-ranges."""
    A, B = Fraction(dist.a), Fraction(dist.b)
    edges = [float(A + (B - A) * j / b) for j in range(b + 1)]
    edges[0], edges[-1] = dist.a, dist.b
    return list(zip(edges[:-1], edges[1:]))


def partition_regions(dists: dict, b: int, cap: int = 100_000):
    """Lexicographic enumeration of the b^m cells of an equal-width partition."""
    if b < 1:
        raise ValueError("need at least one partition per variable")
    names = list(dists)
    if b ** len(names) > cap:
        raise RegionCapError(
            f"{b}^{len(names)} sub-regions exceed the cap {cap}; disable range partitioning")
    per_var = []
    for name in names:
        d = dists[name]
        rs = partition_ranges(d, b)
        per_var.append([(name, lo, hi, subrange_weight(d, lo, hi)) for lo, hi in rs])
    for idx in itertools.product(range(b), repeat=len(names)):
        cells = [per_var[v][j] for v, j in enumerate(idx)]
        w = math.prod(c[3] for c in cells)
        yield SubRegion(tuple((n, lo, hi) for n, lo, hi, _ in cells), w,
                        tuple(j + 1 for j in idx))


class RegionCapError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Expectations

def _group(monomial):
    """Per-variable (orig, pos, neg) exponents of a monomial."""
    groups: dict = {}
    for (kind, name, tag), e in monomial:
        if kind != 0:
            raise MomentError("error symbols must be eliminated before taking expectations")
        g = groups.setdefault(name, [0, 0, 0])
        g[tag] += e
    return groups


def _reduce_group(n, m, l):
    """Collapse x^n (x+)^m (x-)^l to (sign, component, power)."""
    if m and l:
        return 0, None, 0
    if m:
        return 1, POS, n + m
    if l:
        return (-1) ** n, NEG, n + l
    return 1, ORIG, n


@lru_cache(maxsize=1 << 16)
def _plan(monomial):
    """Per-variable (name, sign, component, power) factors, or None for a zero term."""
    out = []
    for name, (n, m, l) in sorted(_group(monomial).items()):
        sign, comp, k = _reduce_group(n, m, l)
        if sign == 0:
            return None
        out.append((name, sign, comp, k))
    return tuple(out)


class Expectation:
    """Expectations of polynomials under independent inputs, with error bounds.

    Results are mpf pairs ``(value, err)`` where ``err`` bounds the numerical
    error of ``value``; :meth:`upper` and :meth:`lower` turn them into
    conservative numbers.
    """

    def __init__(self, dists: dict, region: SubRegion | None = None,
                 max_order: int = DEFAULT_MAX_ORDER):
        self.dists = dists
        self.region = region
        self.max_order = max_order
        self._cache: dict = {}

    def _range(self, name):
        d = self.dists[name]
        if self.region is not None:
            r = self.region.range_of(name)
            if r is not None:
                return r
        return d.a, d.b

    def moment(self, name, component, k):
        if k > self.max_order:
            raise MomentError(f"moment order {k} exceeds the maximum {self.max_order}")
        key = (name, component)
        tab = self._cache.get(key)
        if tab is None or len(tab[0]) <= k:
            if name not in self.dists:
                raise MomentError(f"no distribution for variable {name!r}")
            lo, hi = self._range(name)
            tab = _moment_table(self.dists[name], float(lo), float(hi), component, _table_order(k))
            self._cache[key] = tab
        return tab[0][k], tab[1][k]

    def term(self, monomial, coef):
        """(value, magnitude) of E[coef * monomial]."""
        plan = _plan(monomial)
        with mp.workdps(WORK_DPS):
            val = mpf(coef.numerator) / coef.denominator
            if plan is None:
                return mpf(0), mpf(0)
            mag = abs(val)
            for name, sign, comp, k in plan:
                mom, scale = self.moment(name, comp, k)
                val *= mom if sign > 0 else -mom
                mag *= scale
            return val, mag

    def __call__(self, p: Polynomial):
        """(value, error bound) of E[p]."""
        with mp.workdps(WORK_DPS):
            total = mpf(0)
            magnitude = mpf(0)
            for m, c in p.sorted_terms():
                v, mag = self.term(m, c)
                total += v
                magnitude += mag + abs(v)
            err = magnitude * mpf(10) ** (-MOMENT_TOL_DIGITS + 2)
            return total, err

    def value(self, p: Polynomial) -> float:
        return float(self(p)[0])

    def upper(self, p: Polynomial):
        """Conservative upper bound on E[p] (mpf), inflated by 1e-9 relative."""
        v, err = self(p)
        with mp.workdps(WORK_DPS):
            v = v + err
            return v + abs(v) * INFLATION

    def lower(self, p: Polynomial):
        v, err = self(p)
        with mp.workdps(WORK_DPS):
            v = v - err
            return v - abs(v) * INFLATION


def term_expectation(monomial, coef, dists, region=None) -> float:
    return float(Expectation(dists, region).term(monomial, Fraction(coef))[0])


def poly_expectation(p: Polynomial, dists: dict, region: SubRegion | None = None) -> float:
    """E[p] under independent inputs (optionally conditioned on a sub-region)."""
    return Expectation(dists, region).value(p)
