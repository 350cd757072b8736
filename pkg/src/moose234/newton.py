"""Damped Newton iteration for the single implicit stage of a BDF step.

The stage equation is ``w * y + h = f(t, a * y + b)`` with leading weight
``w``, history term ``h``; ``a = 1, b = 0`` for a plain BDF stage, other
values for one-leg forms whose function argument is a blend of states.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

RHS = Callable[[float, np.ndarray], np.ndarray]
JAC = Callable[[float, np.ndarray], np.ndarray]

_SQRT_EPS = math.sqrt(np.finfo(float).eps)


@dataclass
class ProblemDefinition:
    dimension: int
    rhs: RHS
    jacobian: Optional[JAC] = None
    name: str = "problem"
    # evaluation counters; bumped by ``f`` and ``jac``
    n_rhs: int = field(default=0, compare=False)
    n_jac: int = field(default=0, compare=False)

    def f(self, t: float, y: np.ndarray) -> np.ndarray:
        self.n_rhs += 1
        out = np.asarray(self.rhs(t, y), dtype=float).reshape(-1)
        if out.size != self.dimension:
            raise ValueError(
                f"{self.name}: rhs returned {out.size} components, expected {self.dimension}"
            )
        return out

    def jac(self, t: float, y: np.ndarray, fy: Optional[np.ndarray] = None) -> np.ndarray:
        self.n_jac += 1
        if self.jacobian is not None:
            return np.asarray(self.jacobian(t, y), dtype=float).reshape(self.dimension, self.dimension)
        return fd_jacobian(self, t, y, fy)

    def reset_counters(self) -> None:
        self.n_rhs = 0
        self.n_jac = 0


def fd_jacobian(problem: ProblemDefinition, t: float, y: np.ndarray,
                fy: Optional[np.ndarray] = None) -> np.ndarray:
    """Forward-difference Jacobian, increment ``sqrt(eps) * max(|y_i|, 1)``."""
    y = np.asarray(y, dtype=float)
    if fy is None:
        fy = problem.f(t, y)
    J = np.empty((problem.dimension, y.size))
    for i in range(y.size):
        h = _SQRT_EPS * max(abs(y[i]), 1.0)
        yp = y.copy()
        yp[i] += h
        h = yp[i] - y[i]  # exact representable increment
        J[:, i] = (problem.f(t, yp) - fy) / h
    return J


@dataclass(frozen=True)
class NewtonConfig:
    max_iterations: int = 25
    residual_tolerance: float = 1e-12
    step_tolerance: float = 1e-12
    jacobian_reuse: bool = True
    max_halvings: int = 5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not (self.residual_tolerance > 0 and self.step_tolerance > 0):
            raise ValueError("Newton tolerances must be positive")


@dataclass
class NewtonDiagnostics:
    iterations: int
    residual: float
    converged: bool
    jacobian_evaluations: int = 0
    message: str = ""


def solve_stage(
    problem: ProblemDefinition,
    t_new: float,
    leading_weight: float,
    history_term: np.ndarray,
    guess: np.ndarray,
    config: NewtonConfig = NewtonConfig(),
    *,
    arg_scale: float = 1.0,
    arg_shift: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, NewtonDiagnostics]:
    """Solve ``leading_weight * y + history_term = f(t_new, arg_scale * y + arg_shift)``.

    Converged when the residual is at most ``residual_tolerance * (1 + |f|)``
    or the Newton correction is at most ``step_tolerance * (1 + |y|)``.
    Failures (singular iteration matrix, non-finite values, no convergence)
    are reported through ``converged=False`` rather than raised.
    """
    if not leading_weight > 0:
        raise ValueError("leading weight must be positive")
    y = np.array(guess, dtype=float).reshape(-1)
    if not np.all(np.isfinite(y)):
        return y, NewtonDiagnostics(0, math.inf, False, message="non-finite initial guess")
    h = np.asarray(history_term, dtype=float).reshape(-1)
    shift = np.zeros_like(y) if arg_shift is None else np.asarray(arg_shift, dtype=float)
    eye = np.eye(y.size)

    def arg(v):
        return arg_scale * v + shift

    def residual(v):
        fv = problem.f(t_new, arg(v))
        return leading_weight * v + h - fv, fv

    def factor(v, fv):
        J = problem.jac(t_new, arg(v), fv)
        M = leading_weight * eye - arg_scale * J
        if not np.all(np.isfinite(M)):
            return None
        # exact singularity is reported through the zero pivot check below
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
        if np.any(np.diag(lu) == 0.0):
            return None
        return lu, piv

    r, fy = residual(y)
    rnorm = float(np.linalg.norm(r))
    diag = NewtonDiagnostics(0, rnorm, False)
    if not math.isfinite(rnorm):
        diag.message = "non-finite residual"
        return y, diag
    if rnorm <= config.residual_tolerance * (1.0 + np.linalg.norm(fy)):
        diag.converged = True
        return y, diag

    lu = factor(y, fy)
    diag.jacobian_evaluations = 1
    for it in range(1, config.max_iterations + 1):
        if lu is None:
            diag.message = "singular Newton matrix"
            return y, diag
        dy = -scipy.linalg.lu_solve(lu, r, check_finite=False)
        lam = 1.0
        for _ in range(config.max_halvings + 1):
            y_try = y + lam * dy
            r_try, f_try = residual(y_try)
            rn_try = float(np.linalg.norm(r_try))
            if math.isfinite(rn_try) and rn_try <= rnorm:
                break
            lam *= 0.5
        if not math.isfinite(rn_try):
            diag.iterations = it
            diag.message = "non-finite residual"
            return y, diag

        reduction = rn_try / rnorm if rnorm > 0 else 0.0
        step_norm = lam * float(np.linalg.norm(dy))
        y, r, fy, rnorm = y_try, r_try, f_try, rn_try
        diag.iterations = it
        diag.residual = rnorm
        if (rnorm <= config.residual_tolerance * (1.0 + np.linalg.norm(fy))
                or step_norm <= config.step_tolerance * (1.0 + np.linalg.norm(y))):
            diag.converged = True
            return y, diag
        if not config.jacobian_reuse or reduction > 0.5:
            lu = factor(y, fy)
            diag.jacobian_evaluations += 1

    diag.message = "maximum iterations reached"
    return y, diag
