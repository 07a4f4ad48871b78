"""Multiscale coefficient fields: expression language, evaluation, lifting
and reperiodization."""

from .expr import CoefficientExpr, ScalarExpr, parse_coefficient, parse_expression
from .multiscale import (
    CheckReport,
    MultiscaleCoefficient,
    ReperiodizationResult,
    check_ellipticity,
    check_periodicity,
    eval_multiscale,
    holder_quotient,
    identity_residual,
    lift_quasiperiodic,
    reperiodize,
)

__all__ = [
    "CheckReport",
    "CoefficientExpr",
    "MultiscaleCoefficient",
    "ReperiodizationResult",
    "ScalarExpr",
    "check_ellipticity",
    "check_periodicity",
    "eval_multiscale",
    "holder_quotient",
    "identity_residual",
    "lift_quasiperiodic",
    "parse_coefficient",
    "parse_expression",
    "reperiodize",
]
