"""Single steps of the filtered BDF family.

The embedded step performs one BDF3 solve and derives three candidates from
it by time filtering:

* ``y2``: BDF3-Stab, ``y3 + (mu / c^(3)_m) * delta^3 y3`` (second order, G-stable);
* ``y3``: the BDF3 solution itself;
* ``y4``: FBDF4, ``y3 - eta^(4) * delta^4 y3``.

Fixed-order FBDF(p+1) steps, the equivalent one-leg form (used as an
independent check of the filter route) and a fixed-step driver for
convergence studies live here as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .coeffs import (
    CoefficientError,
    MAX_ORDER,
    TimeHistory,
    backward_differences,
    bdf_weights,
    extrapolation_weights,
    filter_eta,
)
from .newton import NewtonConfig, NewtonDiagnostics, ProblemDefinition, solve_stage

DEFAULT_MU = 9.0 / 125.0
G_STABLE_MU_RANGE = (0.07143215, 0.14285528)


class StepFailure(RuntimeError):
    """The implicit stage did not converge; carries the Newton diagnostics."""

    def __init__(self, message: str, diagnostics: Optional[NewtonDiagnostics] = None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class StabFilterConfig:
    mu: float = DEFAULT_MU
    require_g_stable: bool = False

    def __post_init__(self):
        lo, hi = G_STABLE_MU_RANGE
        if self.require_g_stable and not lo <= self.mu <= hi:
            raise ValueError(f"mu={self.mu} outside the G-stable range [{lo}, {hi}]")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")


@dataclass(frozen=True)
class StepConfig:
    stab: StabFilterConfig = field(default_factory=StabFilterConfig)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    # "difference" (default) or "jacobian"
    est4_form: str = "difference"
    compute_est4: bool = True
    # "l2" or "wrms"
    norm: str = "l2"

    def __post_init__(self):
        if self.est4_form not in ("difference", "jacobian"):
            raise ValueError(f"unknown est4_form {self.est4_form!r}")
        if self.norm not in ("l2", "wrms"):
            raise ValueError(f"unknown norm {self.norm!r}")


def error_norm(v: np.ndarray, y: Optional[np.ndarray] = None, kind: str = "l2") -> float:
    if kind == "l2":
        return float(np.linalg.norm(v))
    scale = 1.0 + (np.abs(y) if y is not None else 0.0)
    return float(np.sqrt(np.mean((v / scale) ** 2)))


@dataclass
class EmbeddedStepResult:
    t_new: float
    y2: np.ndarray
    y3: np.ndarray
    y4: np.ndarray
    est2: np.ndarray
    est3: np.ndarray
    est4: Optional[np.ndarray]
    est_norms: dict
    newton: NewtonDiagnostics

    def candidate(self, order: int) -> np.ndarray:
        return {2: self.y2, 3: self.y3, 4: self.y4}[order]


@dataclass
class FilteredStep:
    y_low: np.ndarray
    y_high: np.ndarray
    newton: NewtonDiagnostics


def _window(history: TimeHistory, t_new: float) -> tuple[np.ndarray, np.ndarray]:
    times = history.times
    if not t_new > times[-1]:
        raise CoefficientError(f"t_new={t_new!r} must exceed the last history time {times[-1]!r}")
    return np.append(times, t_new), history.values


def _bdf_solve(problem, times, past, alpha, t_new, newton_cfg, guess=None):
    """Solve the BDF stage with weights ``alpha`` over ``times``; ``past`` are
    the stored values for ``times[:-1]``."""
    history_term = alpha[:-1] @ past
    if guess is None:
        guess = extrapolation_weights(times) @ past
    y, diag = solve_stage(problem, t_new, alpha[-1], history_term, guess, newton_cfg)
    if not diag.converged:
        raise StepFailure(f"stage solve failed at t={t_new:.6g}: {diag.message}", diag)
    return y, diag


def _delta(table_row: np.ndarray, past: np.ndarray, y_new: np.ndarray) -> np.ndarray:
    return table_row[:-1] @ past + table_row[-1] * y_new


def embedded_step(
    problem: ProblemDefinition,
    history: TimeHistory,
    t_new: float,
    config: StepConfig = StepConfig(),
    *,
    orders: tuple = (2, 3, 4),
) -> EmbeddedStepResult:
    """One BDF3 solve from a four-point history, then both filters and the
    error estimates.  ``Est4`` is skipped when order 4 is not in ``orders``."""
    if len(history) != 4:
        raise CoefficientError("embedded step needs exactly four history points")
    times, past = _window(history, t_new)
    table = backward_differences(times)
    c = table.coeffs
    alpha3 = bdf_weights(table, 3)

    y3, diag = _bdf_solve(problem, times, past, alpha3, t_new, config.newton)

    d3 = _delta(c[3], past, y3)
    d4 = _delta(c[4], past, y3)
    y2 = y3 + (config.stab.mu / c[3, 4]) * d3
    y4 = y3 - filter_eta(times, 3) * d4

    est2 = y3 - y2
    est3 = y4 - y3
    est4 = None
    if config.compute_est4 and 4 in orders:
        alpha4 = bdf_weights(table, 4)
        fy4 = problem.f(t_new, y4)
        est4 = (alpha4[:-1] @ past + alpha4[-1] * y4 - fy4) / alpha4[-1]
        if config.est4_form == "jacobian":
            est4 = est4 + problem.jac(t_new, y4, fy4) @ est3 / alpha4[-1]

    norms = {
        2: error_norm(est2, y2, config.norm),
        3: error_norm(est3, y3, config.norm),
    }
    if est4 is not None:
        norms[4] = error_norm(est4, y4, config.norm)
    return EmbeddedStepResult(t_new, y2, y3, y4, est2, est3, est4, norms, diag)


def est4_estimate(problem: ProblemDefinition, history: TimeHistory, t_new: float,
                  y4: np.ndarray) -> np.ndarray:
    """Difference-only estimate of the FBDF4 local error: the BDF4 residual
    of ``y4`` divided by the BDF4 leading weight."""
    times, past = _window(history, t_new)
    alpha4 = bdf_weights(backward_differences(times), 4)
    y4 = np.asarray(y4, dtype=float)
    return (alpha4[:-1] @ past + alpha4[-1] * y4 - problem.f(t_new, y4)) / alpha4[-1]


def est4_with_jacobian(problem: ProblemDefinition, history: TimeHistory, t_new: float,
                       y4: np.ndarray, est3: np.ndarray) -> np.ndarray:
    """As :func:`est4_estimate` plus the interpolation-error term ``f_y @ est3``."""
    times, past = _window(history, t_new)
    alpha4 = bdf_weights(backward_differences(times), 4)
    y4 = np.asarray(y4, dtype=float)
    fy4 = problem.f(t_new, y4)
    resid = alpha4[:-1] @ past + alpha4[-1] * y4 - fy4
    return (resid + problem.jac(t_new, y4, fy4) @ np.asarray(est3, dtype=float)) / alpha4[-1]


def _check_order(p: int, history: TimeHistory) -> None:
    if not isinstance(p, (int, np.integer)) or not 1 <= p <= MAX_ORDER:
        raise CoefficientError(f"unsupported order p={p!r}; expected 1..{MAX_ORDER}")
    if len(history) < p + 1:
        raise CoefficientError(f"FBDF{p + 1} needs {p + 1} history points, got {len(history)}")


def bdf_step(problem: ProblemDefinition, history: TimeHistory, t_new: float, p: int,
             config: StepConfig = StepConfig()) -> tuple[np.ndarray, NewtonDiagnostics]:
    """Plain variable-step BDFp using the last ``p`` history points."""
    if not isinstance(p, (int, np.integer)) or not 1 <= p <= MAX_ORDER:
        raise CoefficientError(f"unsupported order p={p!r}; expected 1..{MAX_ORDER}")
    if len(history) < p:
        raise CoefficientError(f"BDF{p} needs {p} history points, got {len(history)}")
    times, past = _window(history, t_new)
    times, past = times[-(p + 1):], past[-p:]
    alpha = bdf_weights(backward_differences(times), p)
    return _bdf_solve(problem, times, past, alpha, t_new, config.newton)


def fbdf_step(problem: ProblemDefinition, history: TimeHistory, t_new: float, p: int,
              config: StepConfig = StepConfig()) -> FilteredStep:
    """BDFp solve followed by the order-raising filter."""
    _check_order(p, history)
    times, past = _window(history, t_new)
    table = backward_differences(times)
    alpha = bdf_weights(table, p)
    y_low, diag = _bdf_solve(problem, times, past, alpha, t_new, config.newton)
    y_high = y_low - filter_eta(times, p) * _delta(table.coeffs[p + 1], past, y_low)
    return FilteredStep(y_low, y_high, diag)


def olm_step(problem: ProblemDefinition, history: TimeHistory, t_new: float, p: int,
             config: StepConfig = StepConfig()) -> tuple[np.ndarray, NewtonDiagnostics]:
    """Solve the one-leg form of FBDF(p+1) directly.

    The left side is BDF(p+1); ``f`` is evaluated at
    ``y + eta / (1 - eta * c_m) * delta^(p+1) y``.
    """
    _check_order(p, history)
    times, past = _window(history, t_new)
    table = backward_differences(times)
    alpha = bdf_weights(table, p + 1)
    row = table.coeffs[p + 1]
    eta = filter_eta(times, p)
    kappa = eta / (1.0 - eta * row[-1])
    arg_scale = 1.0 + kappa * row[-1]
    arg_shift = kappa * (row[:-1] @ past)
    guess = extrapolation_weights(times) @ past
    y, diag = solve_stage(problem, t_new, alpha[-1], alpha[:-1] @ past, guess, config.newton,
                          arg_scale=arg_scale, arg_shift=arg_shift)
    if not diag.converged:
        raise StepFailure(f"one-leg solve failed at t={t_new:.6g}: {diag.message}", diag)
    return y, diag


# --- fixed-step driver -------------------------------------------------------

def _method_spec(method: str) -> tuple[str, int]:
    """Map a method name to (kind, bdf order)."""
    name = method.lower().replace("-", "").replace("_", "")
    if name == "bdf3stab":
        return "stab", 3
    if name.startswith("fbdf") and name[4:].isdigit():
        q = int(name[4:])
        if 2 <= q <= MAX_ORDER + 1:
            return "fbdf", q - 1
    if name.startswith("bdf") and name[3:].isdigit():
        q = int(name[3:])
        if 1 <= q <= MAX_ORDER:
            return "bdf", q
    raise ValueError(f"unknown fixed-step method {method!r}")


def method_window(method: str) -> int:
    """Number of stored past values the method needs."""
    kind, p = _method_spec(method)
    if kind == "bdf":
        return p
    return p + 1


def integrate_fixed(
    problem: ProblemDefinition,
    method: str,
    t0: float,
    t_end: float,
    n_steps: int,
    exact: Callable[[float], np.ndarray],
    config: StepConfig = StepConfig(),
    *,
    path: bool = False,
):
    """Constant-step integration started from exact values; returns y(t_end),
    or ``(times, values)`` for every step when ``path`` is true.

    ``method`` is one of ``bdf1..bdf5``, ``fbdf2..fbdf6`` or ``bdf3stab``.
    """
    kind, p = _method_spec(method)
    k = (t_end - t0) / n_steps
    need = method_window(method)
    if n_steps < need:
        raise ValueError(f"{method} needs at least {need} steps")
    hist = TimeHistory(need)
    ts, ys = [], []
    for i in range(need):
        ti = t0 + i * k
        hist.push(ti, exact(ti))
        ts.append(ti)
        ys.append(hist.last_value)
    for n in range(need, n_steps + 1):
        t_new = t0 + n * k
        if kind == "fbdf":
            y = fbdf_step(problem, hist, t_new, p, config).y_high
        else:
            times, past = _window(hist, t_new)
            table = backward_differences(times)
            y, _ = _bdf_solve(problem, times, past, bdf_weights(table, p), t_new, config.newton)
            if kind == "stab":
                y = y + (config.stab.mu / table.coeffs[3, -1]) * _delta(table.coeffs[3], past, y)
        if not np.all(np.isfinite(y)):
            raise StepFailure(f"non-finite state at t={t_new:.6g}")
        hist.push(t_new, y)
        ts.append(t_new)
        ys.append(y)
    if path:
        return np.array(ts), np.array(ys)
    return hist.last_value


def observed_order(ks, errors) -> float:
    """Least-squares slope of log(error) against log(k)."""
    ks = np.asarray(ks, dtype=float)
    errors = np.asarray(errors, dtype=float)
    ok = np.isfinite(errors) & (errors > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(ks[ok]), np.log(errors[ok]), 1)[0])
