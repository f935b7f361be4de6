"""Probabilistic round-off error thresholds for arithmetic expressions over random inputs."""
from .expr import (DOUBLE, SINGLE, Distribution, ProblemError, ProblemSpec, classify,
                   check_denominator_sign, parse_expression, parse_problem)
from .montecarlo import SampleRun, violation_rate
from .threshold import (AnalysisConfig, ThresholdReport, analyze, cmb_threshold,
                        frac_threshold, nm_threshold, order_sweep)

__all__ = [
    "DOUBLE", "SINGLE", "Distribution", "ProblemError", "ProblemSpec", "classify",
    "check_denominator_sign", "parse_expression", "parse_problem", "SampleRun",
    "violation_rate", "AnalysisConfig", "ThresholdReport", "analyze", "cmb_threshold",
    "frac_threshold", "nm_threshold", "order_sweep",
]
