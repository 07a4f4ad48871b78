"""Multiscale elliptic homogenization: reperiodization, cell problems and uniform-estimate harnesses."""

from .cell import (CorrectorField, EffectiveMatrix, ReiteratedTable, reiterated_effective,
                   reiterated_on_lattice, solve_cell_1d, solve_cell_2d)
from .coefficients import (CoefficientExpr, MultiscaleCoefficient, check_ellipticity, check_periodicity,
                           eval_multiscale, lift_quasiperiodic, parse_coefficient, parse_expression, reperiodize)
from .diophantine import RationalApproximation, approx_with_integer_parts, simultaneous_approx, verify_approx
from .elliptic import GridField, default_h, face_gradient, gradient, refine_study, solve_dirichlet
from .errors import *  # noqa: F401,F403
from .operators import Box, Mollifier, average_Mt, inner, layer_norm, lp_norm, mean_square, smooth_partial
from .rates import RateFit, fit_rate
from .reduction import (ReductionReport, corrector_term_U, rate_locally_periodic, reduce_one_scale,
                        reduction_family)

__version__ = "0.1.0"
