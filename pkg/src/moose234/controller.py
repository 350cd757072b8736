"""Variable-step, variable-order driver around the embedded BDF3 step.

Each attempt does one implicit BDF3 solve.  Among the enabled orders whose
estimate is below the tolerance, the one allowing the largest next step is
accepted; if none qualifies the step is retried with a smaller stepsize.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .coeffs import TimeHistory
from .newton import ProblemDefinition
from .stepper import StepConfig, StepFailure, bdf_step, embedded_step, fbdf_step

EST_FLOOR = 1e-300
ALL_ORDERS = (2, 3, 4)


class IntegrationFailure(RuntimeError):
    def __init__(self, message: str, trace: "IntegrationTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class ControllerConfig:
    epsilon: float = 1e-6
    gamma: float = 0.9
    gamma_tilde: float = 0.7
    ratio_max: float = 2.0
    ratio_min: float = 0.5
    orders_enabled: tuple = ALL_ORDERS
    k_init: float = 1e-3
    k_min: float = 1e-12
    k_max: float = math.inf
    max_rejections: int = 20
    # "ramp" self-starts from y0; "exact" needs an exact-solution callback
    startup: str = "ramp"
    step: StepConfig = field(default_factory=StepConfig)

    def __post_init__(self):
        object.__setattr__(self, "orders_enabled", tuple(sorted(set(self.orders_enabled))))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.gamma_tilde <= self.gamma <= 1:
            raise ValueError("need 0 < gamma_tilde <= gamma <= 1")
        if not 0 < self.ratio_min <= 1 <= self.ratio_max:
            raise ValueError("ratio bounds must bracket 1")
        if not self.orders_enabled or not set(self.orders_enabled) <= set(ALL_ORDERS):
            raise ValueError(f"orders_enabled must be a nonempty subset of {ALL_ORDERS}")
        if not 0 < self.k_min <= self.k_init <= self.k_max:
            raise ValueError("need 0 < k_min <= k_init <= k_max")
        if self.startup not in ("ramp", "exact"):
            raise ValueError(f"unknown startup mode {self.startup!r}")


@dataclass
class StepRecord:
    t: float
    k: float
    order: Optional[int]
    est_norms: dict
    accepted: bool
    newton_iterations: int
    landing: bool = False
    note: str = ""


@dataclass
class IntegrationTrace:
    records: list = field(default_factory=list)
    f_evaluations: int = 0
    jacobian_evaluations: int = 0
    startup_solves: int = 0
    wall_time: float = 0.0
    t0: float = 0.0
    status: str = "running"

    @property
    def accepted(self) -> list:
        return [r for r in self.records if r.accepted]

    @property
    def steps(self) -> int:
        return sum(1 for r in self.records if r.accepted)

    @property
    def rejections(self) -> int:
        return sum(1 for r in self.records if not r.accepted)

    @property
    def stage_solves(self) -> int:
        # one implicit solve per attempt, accepted or not
        return len(self.records)

    @property
    def work(self) -> int:
        return self.steps + self.rejections

    def order_histogram(self) -> dict:
        hist = {}
        for r in self.records:
            if r.accepted:
                hist[r.order] = hist.get(r.order, 0) + 1
        return hist

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "t0": self.t0,
            "steps": self.steps,
            "rejections": self.rejections,
            "stage_solves": self.stage_solves,
            "startup_solves": self.startup_solves,
            "f_evaluations": self.f_evaluations,
            "jacobian_evaluations": self.jacobian_evaluations,
            "wall_time": self.wall_time,
            "order_histogram": {str(k): v for k, v in sorted(self.order_histogram().items())},
            "records": [
                {**asdict(r), "est_norms": {str(k): v for k, v in r.est_norms.items()}}
                for r in self.records
            ],
        }


def _norm_map(est_norms: Union[Mapping[int, float], Sequence[float]]) -> dict:
    if isinstance(est_norms, Mapping):
        return dict(est_norms)
    return {order: v for order, v in zip(ALL_ORDERS, est_norms)}


def _growth(epsilon: float, est: float, order: int) -> float:
    if not math.isfinite(est):
        return 0.0
    return (epsilon / max(est, EST_FLOOR)) ** (1.0 / (order + 1))


def select_order(est_norms, epsilon: float, orders_enabled=ALL_ORDERS) -> Optional[int]:
    """Order with the largest admissible step among those meeting the
    tolerance; ties go to the higher order.  ``None`` if no order qualifies."""
    norms = _norm_map(est_norms)
    best, best_factor = None, -math.inf
    for order in sorted(orders_enabled):
        est = norms.get(order)
        if est is None or not est < epsilon:
            continue
        factor = _growth(epsilon, est, order)
        if factor >= best_factor:
            best, best_factor = order, factor
    return best


def next_stepsize(k: float, est: float, order: int, epsilon: float, gamma: float = 0.9,
                  ratio_min: float = 0.5, ratio_max: float = 2.0,
                  k_min: float = 0.0, k_max: float = math.inf) -> float:
    """Safety-scaled power-law step, clamped to the ratio bounds, then to [k_min, k_max]."""
    raw = gamma * k * _growth(epsilon, est, order)
    k_next = min(max(raw, ratio_min * k), ratio_max * k)
    return min(max(k_next, k_min), k_max)


def reject_and_retry(k: float, est_norms, epsilon: float, gamma_tilde: float = 0.7,
                     orders_enabled=ALL_ORDERS, ratio_min: float = 0.5) -> float:
    """Retry stepsize after a rejection; never below ``ratio_min * k``.

    Callers compare the result against ``k_min``.
    """
    norms = _norm_map(est_norms)
    factors = [_growth(epsilon, norms[j], j) for j in orders_enabled if j in norms]
    best = max(factors, default=0.0)
    return max(gamma_tilde * k * best, ratio_min * k)


def startup(problem: ProblemDefinition, y0, config: ControllerConfig, t0: float = 0.0,
            exact: Optional[Callable[[float], np.ndarray]] = None) -> tuple[TimeHistory, int]:
    """Fill the four-point window.

    ``exact`` mode samples the exact solution at spacing ``k_init``.  ``ramp``
    mode takes Backward Euler at ``k_init/8``, FBDF2 at ``k_init/4`` and BDF3 at
    ``k_init/2``, so the following step of ``k_init`` keeps every ratio at 2.
    Returns the window and the number of stage solves spent.
    """
    k = config.k_init
    y0 = np.array(y0, dtype=float, ndmin=1)
    if not np.all(np.isfinite(y0)):
        raise ValueError("initial state must be finite")
    hist = TimeHistory(4)
    if config.startup == "exact":
        if exact is None:
            raise ValueError("exact startup requires an exact-solution callback")
        for i in range(4):
            hist.push(t0 + i * k, exact(t0 + i * k))
        return hist, 0

    hist.push(t0, y0)
    cfg = config.step
    t1 = t0 + k / 8
    y1, _ = bdf_step(problem, hist, t1, 1, cfg)
    hist.push(t1, y1)
    t2 = t1 + k / 4
    hist.push(t2, fbdf_step(problem, hist, t2, 1, cfg).y_high)
    t3 = t2 + k / 2
    y3, _ = bdf_step(problem, hist, t3, 3, cfg)
    hist.push(t3, y3)
    return hist, 3


def integrate(
    problem: ProblemDefinition,
    y0,
    t_span: tuple,
    config: ControllerConfig,
    exact: Optional[Callable[[float], np.ndarray]] = None,
) -> tuple[np.ndarray, IntegrationTrace]:
    """Advance from ``t_span[0]`` to exactly ``t_span[1]``.

    Raises :class:`IntegrationFailure` (with the partial trace attached) when
    the stepsize falls below ``k_min`` or too many consecutive rejections occur.
    """
    t0, T = map(float, t_span)
    if not T > t0:
        raise ValueError("t_span must be increasing")
    trace = IntegrationTrace(t0=t0)
    problem.reset_counters()
    try:
        hist, trace.startup_solves = startup(problem, y0, config, t0, exact)
    except StepFailure as exc:
        trace.status = "failed"
        raise IntegrationFailure(f"startup failed: {exc}", trace) from exc

    eps = config.epsilon
    orders = config.orders_enabled
    t = hist.last_time
    k = config.k_init
    consecutive = 0
    clock = time.perf_counter()

    def fail(msg):
        trace.status = "failed"
        trace.wall_time = time.perf_counter() - clock
        trace.f_evaluations = problem.n_rhs
        trace.jacobian_evaluations = problem.n_jac
        raise IntegrationFailure(msg, trace)

    while t < T:
        landing = False
        # land exactly on T; absorb a sliver that would otherwise remain
        if t + k * (1.0 + 1e-2) >= T:
            k = T - t
            landing = True
        t_new = T if landing else t + k

        try:
            res = embedded_step(problem, hist, t_new, config.step, orders=orders)
        except StepFailure as exc:
            iters = exc.diagnostics.iterations if exc.diagnostics else 0
            trace.records.append(StepRecord(t_new, k, None, {}, False, iters, landing,
                                            "newton failure"))
            consecutive += 1
            k *= 0.5
            if consecutive > config.max_rejections:
                fail(f"{consecutive} consecutive rejections at t={t:.6g}")
            if k < config.k_min:
                fail(f"stepsize {k:.3e} below k_min after Newton failure at t={t:.6g}")
            continue

        j = select_order(res.est_norms, eps, orders)
        if j is None:
            trace.records.append(StepRecord(t_new, k, None, res.est_norms, False,
                                            res.newton.iterations, landing))
            consecutive += 1
            k = reject_and_retry(k, res.est_norms, eps, config.gamma_tilde, orders,
                                 config.ratio_min)
            if consecutive > config.max_rejections:
                fail(f"{consecutive} consecutive rejections at t={t:.6g}")
            if k < config.k_min:
                fail(f"stepsize {k:.3e} below k_min at t={t:.6g}")
            continue

        y_new = res.candidate(j)
        if not np.all(np.isfinite(y_new)):
            fail(f"non-finite state at t={t_new:.6g}")
        hist.push(t_new, y_new)
        trace.records.append(StepRecord(t_new, k, j, res.est_norms, True,
                                        res.newton.iterations, landing))
        consecutive = 0
        t = t_new
        k = next_stepsize(k, res.est_norms[j], j, eps, config.gamma, config.ratio_min,
                          config.ratio_max, config.k_min, config.k_max)

    trace.wall_time = time.perf_counter() - clock
    trace.f_evaluations = problem.n_rhs
    trace.jacobian_evaluations = problem.n_jac
    trace.status = "ok"
    return hist.last_value.copy(), trace
