"""Probabilistic first-order thresholds and the end-to-end analysis.

For a division-free expression the first-order error satisfies
F(x, e) <= p(x) * eps with p from the PN decomposition, so
P[F >= u] <= P[K_u >= 0] where K_u = p * eps - u.  For a fraction N/Q the
same holds with K_u = p * eps - B(x) * u, B = |Q| or Q^2.

P[K_u >= 0] is bounded by Markov's inequality on the n-th central moment
of K_u; everything is expressed through the joint moments
M[a][b] = E[(p eps)^a B^b], which are computed once per (sub-)region.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from math import comb

import numpy as np
from mpmath import mp, mpf

from . import expr as ex
from .bounds import Box, IndeterminateDenominator, second_order_bound
from .fpmodel import (derivative_polynomials, fp_transform, fraction_remainder,
                      reduce_common_factor, remainder, scaled_derivatives)
from .moments import (DEFAULT_MAX_ORDER, INFLATION, WORK_DPS, Expectation, MomentError,
                      RegionCapError, partition_regions)
from .poly import DEFAULT_TERM_CAP, ResourceLimitError, Polynomial, expand, pn_decompose, lower_float, powers, signs_of, upper_float
from .runtime import AnalysisTimeout, Deadline

DEFAULT_SWEEP = (2, 4, 6, 8, 10, 12, 18, 24, 30, 36)
MODES = ("nm", "cmb", "div", "auto")
FLAG_DPS = WORK_DPS + 20


class UnsupportedStructure(ValueError):
    """Expression shape or mode the analysis cannot handle."""


class DZError(ArithmeticError):
    """Non-finite or underflowed intermediate; no sound number can be reported."""


class NoFeasibleThreshold(RuntimeError):
    pass


class SweepExhausted(RuntimeError):
    def __init__(self, message, attempts):
        super().__init__(message)
        self.attempts = attempts


@dataclass
class AnalysisConfig:
    eps: Fraction = ex.SINGLE[0]
    delta: Fraction = ex.SINGLE[1]
    confidence: float = 0.99
    order: int = 2
    partitions: int | None = None        # None: size-based default policy
    mode: str = "auto"
    tolerance: float = 1e-3
    right_multiplier: float = 1e5
    timeout: float | None = None        # per analysis order, seconds
    region_cap: int = 100_000
    term_cap: int = DEFAULT_TERM_CAP
    max_order: int = DEFAULT_MAX_ORDER
    max_iterations: int = 60
    force_q2: bool = False

    def __post_init__(self):
        self.eps = Fraction(self.eps)
        self.delta = Fraction(self.delta)
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.eps <= 0 or self.delta < 0:
            raise ValueError("need eps > 0 and delta >= 0")
        if self.order < 1:
            raise ValueError("analysis order must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode in ("cmb", "div") and self.order % 2:
            raise ValueError(f"mode {self.mode} needs an even analysis order")
        if self.partitions is not None and self.partitions < 1:
            raise ValueError("partitions must be >= 1")


def default_partitions(nvars: int, nops: int) -> int:
    """Range partitioning only pays off for small problems."""
    return 8 if nvars < 4 and nops < 10 else 1


def _mpf(q: Fraction):
    return mpf(q.numerator) / q.denominator


def mpf_upper(x) -> float:
    """Smallest float >= x for a finite mpf."""
    if not mp.isfinite(x):
        raise DZError(f"non-finite intermediate {x}")
    man, exp = x.man_exp if x else (0, 0)
    q = Fraction(man) * (Fraction(2) ** exp)
    return upper_float(q) if q > 0 else (0.0 if q == 0 else -upper_float(-q))


# ---------------------------------------------------------------------------
# Flags

_ROUND = 2.0 ** -52


def _float_down(x) -> float:
    return -mpf_upper(-x)


class FlagContext:
    """Everything needed to evaluate flag_u, optionally on sub-regions.

    With A = p and u' = u / eps the feasibility polynomial is
    K = eps * (p - u' B).  For fixed centres a, b (floats near E[p], E[B])
    Markov's inequality gives, whenever m = a - u' b < 0,

        P[K >= 0] <= E[(p - a - u'(B - b))^n] / (-m)^n
                   = sum_i C(n, i) (-u')^i C_i / (-m)^n

    with C_i = E[(p - a)^(n-i) (B - b)^i] independent of u.  The C_i are
    computed once per region in high precision with error bounds; each
    flag is then a cheap vectorised evaluation with directed slack.
    """

    def __init__(self, p: Polynomial, dists: dict, eps: Fraction, n: int,
                 b: Polynomial | None = None, power: int = 0,
                 term_cap: int = DEFAULT_TERM_CAP, max_order: int = DEFAULT_MAX_ORDER,
                 deadline: Deadline | None = None):
        if n % 2:
            raise ValueError("flag needs an even order")
        self.p = p
        self.dists = dists
        self.eps = Fraction(eps)
        self.n = n
        self.b = b if b is not None else Polynomial.const(1)
        self.power = power
        self.max_order = max_order
        self.deadline = deadline or Deadline()
        self._bconst = self.b.is_constant()
        self._pp = powers(p, n, term_cap, self.deadline)
        self._bp = [Polynomial.const(1)] if self._bconst else powers(self.b, n, term_cap, self.deadline)
        self._raw: dict = {}
        self._central: dict = {}
        self._batch = None

    # -- per-region tables -----------------------------------------------
    def raw_moments(self, region=None):
        """{(a, b): (value, err)} for E[p^a B^b], a + b <= n (mpf, eps units)."""
        key = None if region is None else region.index
        tab = self._raw.get(key)
        if tab is not None:
            return tab
        E = Expectation(self.dists, region, self.max_order)
        tab = {}
        with mp.workdps(FLAG_DPS):
            bval = _mpf(self.b.constant_value()) if self._bconst else None
            for a in range(self.n + 1):
                self.deadline.check()
                for j in range(self.n + 1 - a):
                    if self._bconst:
                        if j == 0:
                            tab[(a, 0)] = E(self._pp[a])
                        else:
                            v, e = tab[(a, 0)]
                            tab[(a, j)] = (v * bval ** j, e * abs(bval) ** j)
                    else:
                        tab[(a, j)] = E(self._pp[a] * self._bp[j])
        self._raw[key] = tab
        return tab

    def central(self, region=None):
        """(a, b, C_low[0..n], C_up[0..n]) for one region, all floats."""
        key = None if region is None else region.index
        out = self._central.get(key)
        if out is not None:
            return out
        M = self.raw_moments(region)
        n = self.n
        with mp.workdps(FLAG_DPS):
            a = float(M[(1, 0)][0])
            b = float(M[(0, 1)][0])
            am, bm = mpf(a), mpf(b)
            lo, up = [], []
            for i in range(n + 1):
                if i and self._bconst and mpf(b) == _mpf(self.b.constant_value()):
                    # B - b vanishes identically
                    lo.append(0.0)
                    up.append(0.0)
                    continue
                k = n - i
                v = err = mag = mpf(0)
                for al in range(k + 1):
                    ca = comb(k, al) * (-am) ** (k - al)
                    for be in range(i + 1):
                        c = ca * comb(i, be) * (-bm) ** (i - be)
                        mv, me = M[(al, be)]
                        v += c * mv
                        err += abs(c) * me
                        mag += abs(c * mv)
                err += mag * mpf(10) ** (-(FLAG_DPS - 5))
                lo.append(_float_down(v - err))
                up.append(mpf_upper(v + err))
        out = (a, b, lo, up)
        self._central[key] = out
        return out

    def mean(self, u, region=None):
        """(value, err) of mu = E[K_u] in absolute units."""
        t = self.raw_moments(region)
        with mp.workdps(FLAG_DPS):
            eps = _mpf(self.eps)
            u = mpf(u)
            v = eps * t[(1, 0)][0] - u * t[(0, 1)][0]
            return v, eps * t[(1, 0)][1] + abs(u) * t[(0, 1)][1]

    def _scaled(self, u) -> float:
        """A float u' <= u / eps."""
        return lower_float(Fraction(u) / self.eps)

    def _batch_tables(self, regions):
        ids = tuple(r.index for r in regions)
        if self._batch is not None and self._batch[0] == ids:
            return self._batch[1]
        rows = []
        for r in regions:
            self.deadline.check()
            rows.append(self.central(r))
        A = np.array([row[0] for row in rows])
        B = np.array([row[1] for row in rows])
        lo = np.array([row[2] for row in rows])
        up = np.array([row[3] for row in rows])
        W = np.array([r.weight for r in regions])
        tabs = (A, B, lo, up, W)
        self._batch = (ids, tabs)
        return tabs

    def _local_flags(self, us: float, A, B, lo, up):
        n = self.n
        us = np.float64(us)   # numpy powers overflow to inf instead of raising
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            terms = []
            for i in range(n + 1):
                coef = comb(n, i) * us ** i
                # sound upper bound of (-1)^i C_i
                c = up[:, i] if i % 2 == 0 else -lo[:, i]
                terms.append(coef * c)
            terms = np.array(terms)
            num = terms.sum(axis=0)
            num = num + np.abs(terms).sum(axis=0) * (n + 4) * _ROUND
            num = np.maximum(num, 0.0) * (1 + float(INFLATION))
            ub = us * B
            m = A - ub
            m_err = (np.abs(ub) + np.abs(m) + np.abs(A)) * 2 * _ROUND
            feasible = m + m_err < 0
            mag = np.where(feasible, -m - m_err, 1.0)
            den = mag ** n
            ratio = num / den
        bad = feasible & ~(np.isfinite(ratio) & (den > 0))
        if np.any(bad):
            raise DZError("non-finite or underflowed intermediate while evaluating flag")
        return np.where(feasible, np.minimum(1.0, ratio), 1.0)

    def flag(self, u, region=None) -> float:
        a, b, lo, up = self.central(region)
        f = self._local_flags(self._scaled(u), np.array([a]), np.array([b]),
                              np.array([lo]), np.array([up]))
        return float(f[0])

    def partitioned_flag(self, u, regions) -> float:
        regions = [r for r in regions if r.weight > 0]
        A, B, lo, up, W = self._batch_tables(regions)
        self.deadline.check()
        local = self._local_flags(self._scaled(u), A, B, lo, up)
        return min(1.0, float(np.sum(W * local)))


def flag(u, ctx: FlagContext, region=None) -> float:
    return ctx.flag(u, region)


def partitioned_flag(u, ctx: FlagContext, regions) -> float:
    """sum_i W_i * min(1, flag on region i)."""
    return ctx.partitioned_flag(u, list(regions))


class _Flagger:
    """flag_u over the whole support or a fixed partition."""

    def __init__(self, ctx: FlagContext, regions=None):
        self.ctx = ctx
        self.regions = regions
        self.calls = 0

    def __call__(self, u):
        self.calls += 1
        if self.regions is None:
            return self.ctx.flag(u)
        return self.ctx.partitioned_flag(u, self.regions)


# ---------------------------------------------------------------------------
# Thresholds

def nm_threshold(p: Polynomial, dists: dict, cfg: AnalysisConfig, n: int | None = None,
                 deadline: Deadline | None = None) -> float:
    """eps * (E[p^n] / (1 - c))^(1/n) with a conservative E[p^n]."""
    n = n or cfg.order
    deadline = deadline or Deadline()
    if not p:
        return 0.0
    pn = powers(p, n, cfg.term_cap, deadline)[n]
    deadline.check()
    E = Expectation(dists, None, cfg.max_order)
    with mp.workdps(FLAG_DPS):
        m = E.upper(pn)
        if m <= 0:
            return 0.0
        root = (m / (1 - mpf(cfg.confidence))) ** (mpf(1) / n)
        u = _mpf(cfg.eps) * root
        u += u * mpf(10) ** (-(FLAG_DPS - 10))
        out = mpf_upper(u)
    if out == 0.0 or not math.isfinite(out):
        raise DZError("first-order threshold underflows or overflows binary64")
    return out


@dataclass
class SearchResult:
    u: float
    lower: float
    upper: float
    flag: float
    iterations: int
    note: str = ""


def _bisect(fl, lo, hi, target, cfg, flag_hi):
    """Shrink [lo, hi] keeping hi feasible; returns (hi, flag(hi), iterations)."""
    it = 0
    while it < cfg.max_iterations and (hi - lo) > cfg.tolerance * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f = fl(mid)
        it += 1
        if f <= target:
            hi, flag_hi = mid, f
        else:
            lo = mid
    return hi, flag_hi, it


def cmb_threshold(ctx: FlagContext, cfg: AnalysisConfig, regions=None,
                  r: float | None = None) -> SearchResult:
    """Close-to-minimal feasible u in (l, r] with l = E[p] eps and r the NM value."""
    target = 1 - cfg.confidence
    if r is None:
        r = nm_threshold(ctx.p, ctx.dists, cfg, ctx.n, ctx.deadline)
    with mp.workdps(FLAG_DPS):
        ell = float(ctx.mean(0)[0])
    fl = _Flagger(ctx, regions)
    if r <= 0:
        return SearchResult(0.0, ell, r, 0.0, 0, "zero first-order error")
    fr = fl(r)
    if fr >= target:
        return SearchResult(r, ell, r, fr, 0, "naive Markov endpoint")
    u, f, it = _bisect(fl, ell, r, target, cfg, fr)
    return SearchResult(u, ell, r, f, it)


def frac_threshold(ctx: FlagContext, cfg: AnalysisConfig, regions=None) -> SearchResult:
    """Search for the fractional case: l = E[p] eps / E[B], r = l * multiplier."""
    target = 1 - cfg.confidence
    t = ctx.raw_moments()
    with mp.workdps(FLAG_DPS):
        ell = float(_mpf(ctx.eps) * t[(1, 0)][0] / t[(0, 1)][0])
    if ell <= 0:
        return SearchResult(0.0, 0.0, 0.0, 0.0, 0, "zero first-order error")
    r = ell * cfg.right_multiplier
    fl = _Flagger(ctx, regions)
    fr = fl(r)
    if fr <= target:
        u, f, it = _bisect(fl, ell, r, target, cfg, fr)
        return SearchResult(u, ell, r, f, it)
    # magnitude scan, 10 points per decade
    decades = math.log10(cfg.right_multiplier)
    steps = max(1, int(round(decades * 10)))
    prev = ell
    for j in range(1, steps + 1):
        ctx.deadline.check()
        u = ell * 10 ** (j / 10)
        f = fl(u)
        if f <= target:
            hi, fh, it = _bisect(fl, prev, u, target, cfg, f)
            return SearchResult(hi, ell, r, fh, it + j, "magnitude scan")
        prev = u
    raise NoFeasibleThreshold(f"no feasible threshold in ({ell:.6g}, {r:.6g}]")


# ---------------------------------------------------------------------------
# Pipeline

@dataclass
class ThresholdReport:
    threshold_first_order: float
    threshold_second_order: float
    threshold_total: float
    mode: str
    order: int
    partitions: int
    confidence: float
    eps: float
    delta: float
    flag: float | None = None
    timings: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Prepared:
    """Order-independent part of an analysis (model, p, B, second-order bound)."""

    mode: str
    dists: dict
    p: Polynomial
    b: Polynomial | None
    power: int
    u2: float
    nvars: int
    nops: int
    timings: dict
    diagnostics: dict


def _resolve_mode(mode, form):
    if isinstance(form, ex.Unsupported):
        raise UnsupportedStructure(f"unsupported expression: {form.reason}")
    frac = isinstance(form, ex.TopFraction)
    if mode == "auto":
        return "div" if frac else "cmb"
    if mode == "div" and not frac:
        raise UnsupportedStructure("mode div needs a top-level fraction N/Q")
    if mode in ("nm", "cmb") and frac:
        raise UnsupportedStructure(f"mode {mode} needs a division-free expression; use div")
    return mode


def prepare(problem: ex.ProblemSpec, cfg: AnalysisConfig, deadline: Deadline | None = None,
            debug: bool = False) -> Prepared:
    deadline = deadline or Deadline()
    timings: dict = {}
    diag: dict = {}
    t0 = time.perf_counter()
    dists = problem.used_variables
    form = ex.classify(problem.expr)
    mode = _resolve_mode(cfg.mode, form)
    fexpr = fp_transform(problem.expr)
    box = Box.from_distributions(dists, cfg.eps, cfg.delta)
    if cfg.delta > cfg.eps ** 2:
        diag["warnings"] = ["delta exceeds eps^2; absolute-error terms may dominate the second-order bound"]
    signs = signs_of(dists)
    deadline.check()
    if mode == "div":
        n_expr, q_expr = form.numerator, form.denominator
        sign = ex.check_denominator_sign(q_expr, dists)
        if sign == "indeterminate":
            raise IndeterminateDenominator("cannot certify that the denominator is nonzero on the support")
        gs = scaled_derivatives(fexpr, q_expr)
        qp = expand(q_expr)
        if cfg.force_q2:
            gs_r, power = gs, 2
        else:
            gs_r, power = reduce_common_factor(gs, qp)
        if power == 2:
            b = qp * qp
        else:
            b = qp if sign == "positive" else -qp
        p = pn_decompose(gs_r, signs)
        timings["first_order_model"] = time.perf_counter() - t0
        t1 = time.perf_counter()
        rform = fraction_remainder(fexpr, n_expr, q_expr, gs_r, power)
        diag.update(denominator_sign=sign, denominator_power=power)
    else:
        hs = derivative_polynomials(fexpr)
        p = pn_decompose(hs, signs)
        b, power = None, 0
        timings["first_order_model"] = time.perf_counter() - t0
        t1 = time.perf_counter()
        rform = remainder(fexpr, problem.expr, hs)
    deadline.check()
    u2 = second_order_bound(rform, box)
    timings["second_order"] = time.perf_counter() - t1
    diag["remainder"] = "expanded" if rform.exact else "propagated"
    diag["p_terms"] = len(p)
    if debug:
        diag["debug"] = {"model": ex.pretty(fexpr.tree), "p": str(p),
                         "remainder": str(rform.numerator) if rform.exact else None}
    return Prepared(mode, dists, p, b, power, u2, len(dists), fexpr.k, timings, diag)


def _partitions_for(prep: Prepared, cfg: AnalysisConfig) -> int:
    if prep.mode == "nm":
        return 1
    if cfg.partitions is not None:
        return cfg.partitions
    return default_partitions(prep.nvars, prep.nops)


def _total(u1: float, u2: float) -> float:
    q = Fraction(u1) + Fraction(u2)
    return math.nextafter(upper_float(q), math.inf)


def run_order(prep: Prepared, cfg: AnalysisConfig, n: int,
              deadline: Deadline | None = None) -> ThresholdReport:
    deadline = deadline or Deadline(cfg.timeout)
    deadline.check()
    timings = dict(prep.timings)
    diag = dict(prep.diagnostics)
    t0 = time.perf_counter()
    mode = prep.mode
    b_parts = _partitions_for(prep, cfg)
    flag_val = None
    if mode == "nm":
        u1 = nm_threshold(prep.p, prep.dists, cfg, n, deadline)
    else:
        if n % 2:
            raise ValueError(f"mode {mode} needs an even analysis order")
        ctx = FlagContext(prep.p, prep.dists, cfg.eps, n, prep.b, prep.power,
                          cfg.term_cap, cfg.max_order, deadline)
        regions = None
        if b_parts > 1:
            regions = list(partition_regions(prep.dists, b_parts, cfg.region_cap))
        if mode == "cmb":
            res = cmb_threshold(ctx, cfg, regions)
        else:
            res = frac_threshold(ctx, cfg, regions)
        u1, flag_val = res.u, res.flag
        mu, _ = ctx.mean(u1) if u1 > 0 else (mpf(0), 0)
        diag.update(ell=res.lower, r=res.upper, mu=float(mu),
                    iterations=res.iterations)
        if res.note:
            diag["search"] = res.note
    timings["first_order"] = time.perf_counter() - t0
    if not math.isfinite(u1) or u1 < 0:
        raise DZError("non-finite first-order threshold")
    total = _total(u1, prep.u2)
    return ThresholdReport(u1, prep.u2, total, mode, n, b_parts, cfg.confidence,
                           float(cfg.eps), float(cfg.delta), flag_val, timings, diag)


def analyze(problem: ex.ProblemSpec, cfg: AnalysisConfig, debug: bool = False) -> ThresholdReport:
    deadline = Deadline(cfg.timeout)
    prep = prepare(problem, cfg, deadline, debug)
    return run_order(prep, cfg, cfg.order, deadline)


def order_sweep(problem: ex.ProblemSpec, cfg: AnalysisConfig, orders=DEFAULT_SWEEP,
                debug: bool = False) -> ThresholdReport:
    """Run every order under its own time budget and keep the smallest total."""
    orders = list(orders)
    if not orders:
        raise ValueError("empty sweep")
    t0 = time.perf_counter()
    attempts = {}
    best = None
    prep = None
    for n in orders:
        deadline = Deadline(cfg.timeout)
        try:
            if prep is None:
                prep = prepare(problem, cfg, deadline, debug)
            if prep.mode != "nm" and n % 2:
                attempts[n] = "skipped: odd order"
                continue
            rep = run_order(prep, cfg, n, deadline)
        except AnalysisTimeout:
            attempts[n] = "timeout"
            continue
        except (ResourceLimitError, MomentError, RegionCapError) as e:
            attempts[n] = f"resource: {e}"
            continue
        attempts[n] = rep.threshold_total
        if best is None or rep.threshold_total < best.threshold_total:
            best = rep
    if best is None:
        raise SweepExhausted("every analysis order timed out or hit a resource limit", attempts)
    best.diagnostics["sweep"] = {str(k): v for k, v in attempts.items()}
    best.diagnostics["optimal_order"] = best.order
    best.timings["sweep_total"] = time.perf_counter() - t0
    return best
