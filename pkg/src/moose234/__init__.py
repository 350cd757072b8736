"""Embedded one-solve BDF time stepping: variable-step BDFp, order-raising
filters, the stabilized BDF3 filter and an order 2/3/4 adaptive controller."""
from .coeffs import (
    TimeHistory,
    bdf_and_filter_coefficients,
    backward_differences,
    ratio_coefficients,
)
from .controller import ControllerConfig, IntegrationFailure, IntegrationTrace, integrate
from .gstab import g_matrix, g_stable_interval, is_g_stable, linear_stability_scan
from .newton import NewtonConfig, ProblemDefinition, solve_stage
from .problems import get_problem
from .stepper import (
    DEFAULT_MU,
    StabFilterConfig,
    StepConfig,
    StepFailure,
    bdf_step,
    embedded_step,
    fbdf_step,
    integrate_fixed,
    olm_step,
)

__all__ = [
    "TimeHistory", "bdf_and_filter_coefficients", "backward_differences", "ratio_coefficients",
    "ControllerConfig", "IntegrationFailure", "IntegrationTrace", "integrate",
    "g_matrix", "g_stable_interval", "is_g_stable", "linear_stability_scan",
    "NewtonConfig", "ProblemDefinition", "solve_stage", "get_problem",
    "DEFAULT_MU", "StabFilterConfig", "StepConfig", "StepFailure",
    "bdf_step", "embedded_step", "fbdf_step", "integrate_fixed", "olm_step",
]
