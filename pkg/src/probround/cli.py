"""Command-line front end.

Subcommands: analyze, validate, bound, gen-dot.  Reports go to stdout,
diagnostics to stderr.  Exit codes: 0 ok, 2 bad input, 3 unsupported
structure, 4 resource limit, 5 non-finite / no sound threshold,
6 sweep exhausted or timeout.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction

from . import expr as ex
from .bounds import Box, BoundError, IndeterminateDenominator, interval_eval, second_order_bound, struct_bound
from .moments import MomentError, RegionCapError
from .montecarlo import MIN_SAMPLES, violation_rate
from .poly import ResourceLimitError, upper_float
from .runtime import AnalysisTimeout
from .threshold import (DEFAULT_SWEEP, AnalysisConfig, DZError, NoFeasibleThreshold,
                        SweepExhausted, UnsupportedStructure, analyze, order_sweep, prepare)

EXIT_INPUT, EXIT_STRUCTURE, EXIT_RESOURCE, EXIT_DZ, EXIT_SWEEP = 2, 3, 4, 5, 6
SWEEP_TIMEOUT = 90.0   # seconds per order when sweeping, unless overridden


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def gen_dot(length: int) -> str:
    """Problem text for the inner product of two length-L vectors on (0, 1)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    lines = [f"# dot product of length {length}"]
    lines += [f"var a{i} uniform(0, 1)" for i in range(1, length + 1)]
    lines += [f"var b{i} uniform(0, 1)" for i in range(1, length + 1)]
    lines.append("expr " + " + ".join(f"a{i}*b{i}" for i in range(1, length + 1)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------

def _rational(text):
    try:
        return ex.parse_number(text) if "/" not in text else Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None


def _orders(text):
    try:
        out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad order list {text!r}") from None
    if not out or any(n < 1 for n in out):
        raise argparse.ArgumentTypeError("orders must be positive integers")
    return out


def _add_problem_flags(p):
    p.add_argument("problem", help="problem file")
    p.add_argument("--prec", choices=("single", "double"))
    p.add_argument("--eps", type=_rational)
    p.add_argument("--delta", type=_rational)
    p.add_argument("--confidence", type=float)
    p.add_argument("--json", action="store_true", help="machine-readable output")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probround",
                                 description="Probabilistic round-off error thresholds.")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="compute a probabilistic error threshold")
    _add_problem_flags(a)
    a.add_argument("--mode", choices=("nm", "cmb", "div", "auto"), default="auto")
    a.add_argument("--order", type=int, default=2)
    a.add_argument("--sweep", nargs="?", const=",".join(map(str, DEFAULT_SWEEP)), type=str,
                   help="try several orders (default list when no value is given)")
    a.add_argument("--partitions", type=int)
    a.add_argument("--no-partition", action="store_true")
    a.add_argument("--timeout-per-order", type=float, default=None,
                   help=f"seconds per analysis order (default: {SWEEP_TIMEOUT:g} with --sweep, else none)")
    a.add_argument("--force-q2", action="store_true",
                   help="keep the squared denominator for fractions")
    a.add_argument("--tolerance", type=float, default=1e-3)
    a.add_argument("--debug", action="store_true", help="include the model, p and R2 in the report")

    v = sub.add_parser("validate", help="Monte Carlo check of a threshold")
    _add_problem_flags(v)
    v.add_argument("--threshold", type=float)
    v.add_argument("--report", help="JSON report from analyze --json")
    v.add_argument("--samples", type=int, default=10**6)
    v.add_argument("--seed", type=int, default=0)

    b = sub.add_parser("bound", help="deterministic bounds of the expression and of R2")
    _add_problem_flags(b)

    g = sub.add_parser("gen-dot", help="emit a dot-product problem file")
    g.add_argument("length", type=int)
    g.add_argument("-o", "--output")
    return ap


def _load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}", EXIT_INPUT) from None
    try:
        return ex.parse_problem(text)
    except ex.ProblemError as e:
        raise CliError(f"{path}: {e}", EXIT_INPUT) from None


def _precision(args, problem):
    eps, delta = ex.SINGLE
    if problem.eps is not None:
        eps, delta = problem.eps, problem.delta
    if args.prec:
        eps, delta = ex.SINGLE if args.prec == "single" else ex.DOUBLE
    if args.eps is not None:
        eps = args.eps
    if args.delta is not None:
        delta = args.delta
    return eps, delta


def _confidence(args, problem):
    if args.confidence is not None:
        return args.confidence
    return problem.confidence if problem.confidence is not None else 0.99


def _config(args, problem) -> AnalysisConfig:
    eps, delta = _precision(args, problem)
    partitions = 1 if args.no_partition else args.partitions
    timeout = args.timeout_per_order
    if timeout is None and getattr(args, "sweep", None) is not None:
        timeout = SWEEP_TIMEOUT
    try:
        return AnalysisConfig(eps=eps, delta=delta, confidence=_confidence(args, problem),
                              order=args.order, partitions=partitions, mode=args.mode,
                              tolerance=args.tolerance, timeout=timeout,
                              force_q2=args.force_q2)
    except ValueError as e:
        raise CliError(str(e), EXIT_INPUT) from None


def _emit(obj, as_json, text_lines, out):
    if as_json:
        out.write(json.dumps(obj, indent=2, default=_json_default) + "\n")
    else:
        out.write("\n".join(text_lines) + "\n")


def _json_default(o):
    if isinstance(o, Fraction):
        return float(o)
    return str(o)


def _fmt(x):
    return f"{x:.6e}" if isinstance(x, float) else str(x)


def cmd_analyze(args, out):
    problem = _load(args.problem)
    cfg = _config(args, problem)
    if args.sweep is not None:
        try:
            orders = _orders(args.sweep)
        except argparse.ArgumentTypeError as e:
            raise CliError(str(e), EXIT_INPUT) from None
        rep = order_sweep(problem, cfg, orders, debug=args.debug)
    else:
        rep = analyze(problem, cfg, debug=args.debug)
    d = rep.to_dict()
    lines = [
        f"first-order threshold   U1 = {_fmt(rep.threshold_first_order)}",
        f"second-order bound      U2 = {_fmt(rep.threshold_second_order)}",
        f"total threshold         U* = {_fmt(rep.threshold_total)}",
        f"mode {rep.mode}, order {rep.order}, partitions {rep.partitions}, "
        f"confidence {rep.confidence}",
        f"eps {rep.eps!r}, delta {rep.delta!r}",
    ]
    if rep.flag is not None:
        lines.append(f"flag at U1              {rep.flag:.6g}")
    for k in ("ell", "r", "mu", "iterations", "search", "optimal_order"):
        if k in rep.diagnostics:
            lines.append(f"{k:<23} {_fmt(rep.diagnostics[k])}")
    lines.append("timings: " + ", ".join(f"{k} {v:.3f}s" for k, v in rep.timings.items()))
    for w in rep.diagnostics.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    _emit(d, args.json, lines, out)


def _threshold_from(args):
    if args.threshold is not None:
        return args.threshold
    if args.report:
        try:
            with open(args.report, encoding="utf-8") as fh:
                return float(json.load(fh)["threshold_total"])
        except (OSError, ValueError, KeyError) as e:
            raise CliError(f"cannot read a threshold from {args.report}: {e}", EXIT_INPUT) from None
    raise CliError("validate needs --threshold or --report", EXIT_INPUT)


def cmd_validate(args, out):
    problem = _load(args.problem)
    u = _threshold_from(args)
    if math.isnan(u) or u < 0:
        raise CliError("threshold must be a non-negative number", EXIT_INPUT)
    if args.samples < MIN_SAMPLES:
        raise CliError(f"--samples must be at least {MIN_SAMPLES}", EXIT_INPUT)
    conf = _confidence(args, problem)
    if not 0 < conf < 1:
        raise CliError("confidence must lie in (0, 1)", EXIT_INPUT)
    fmt = None
    if args.prec:
        fmt = "binary32" if args.prec == "single" else "binary64"
    run = violation_rate(problem, u, args.samples, args.seed, fmt)
    d = run.to_dict(conf)
    d["confidence"] = conf
    lines = [
        f"threshold {u:.6e}, samples {run.samples}, seed {run.seed}, format {run.fmt}",
        f"violations {run.violations} (excluded {run.excluded}), frequency {run.frequency:.6g} "
        f"+/- {run.half_width:.3g}",
        f"allowed {run.allowance(conf):.6g} -> {'PASS' if run.passes(conf) else 'FAIL'}",
        f"max observed error {run.max_error:.6e}",
    ]
    _emit(d, args.json, lines, out)


def cmd_bound(args, out):
    problem = _load(args.problem)
    eps, delta = _precision(args, problem)
    dists = problem.used_variables
    box = Box.from_distributions(dists, eps, delta)
    d = {}
    try:
        lo, hi = interval_eval(problem.expr, box)
        d["interval"] = [float(lo), float(hi)]
    except IndeterminateDenominator as e:
        d["interval"] = None
        print(f"warning: {e}", file=sys.stderr)
    try:
        d["struct_bound"] = upper_float(struct_bound(problem.expr, box))
    except BoundError:
        d["struct_bound"] = None
    cfg = AnalysisConfig(eps=eps, delta=delta, mode="auto")
    prep = prepare(problem, cfg)
    d["second_order_bound"] = prep.u2
    d["remainder"] = prep.diagnostics.get("remainder")
    lines = [f"interval enclosure  {d['interval']}",
             f"structural bound    {d['struct_bound']}",
             f"second-order bound  {prep.u2:.6e} ({d['remainder']})"]
    _emit(d, args.json, lines, out)


def cmd_gen_dot(args, out):
    if args.length < 1:
        raise CliError("length must be >= 1", EXIT_INPUT)
    text = gen_dot(args.length)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        out.write(text)


COMMANDS = {"analyze": cmd_analyze, "validate": cmd_validate,
            "bound": cmd_bound, "gen-dot": cmd_gen_dot}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else 0
    try:
        COMMANDS[args.command](args, out)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except ex.ProblemError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (UnsupportedStructure, IndeterminateDenominator) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STRUCTURE
    except (ResourceLimitError, RegionCapError, MomentError) as e:
        print(f"error: resource limit: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except (DZError, NoFeasibleThreshold) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DZ
    except SweepExhausted as e:
        print(f"error: {e}", file=sys.stderr)
        for n, status in e.attempts.items():
            print(f"  order {n}: {status}", file=sys.stderr)
        return EXIT_SWEEP
    except AnalysisTimeout as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SWEEP
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
