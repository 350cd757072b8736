"""Stepsize-dependent coefficients for variable-step BDF methods and time filters.

Two independent routes are provided:

* the divided-difference route (:func:`backward_differences`,
  :func:`bdf_and_filter_coefficients`), valid for any window length and any
  order ``p <= 5``; this is the one the integrators use;
* the closed-form stepsize-ratio route (:func:`ratio_coefficients`) for the
  BDF3/BDF4 pair and its two filters, kept as a cross-check.

Everything is recomputed from the current time window on each call.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

MAX_ORDER = 5


class CoefficientError(ValueError):
    """Raised for invalid time windows or unsupported orders."""


def _as_times(times: Iterable[float], min_len: int = 2) -> np.ndarray:
    t = np.asarray(list(times) if not isinstance(times, np.ndarray) else times, dtype=float)
    if t.ndim != 1 or t.size < min_len:
        raise CoefficientError(f"need at least {min_len} time points, got {t.size}")
    if not np.all(np.isfinite(t)):
        raise CoefficientError("time points must be finite")
    if np.any(np.diff(t) <= 0.0):
        raise CoefficientError("time points must be strictly increasing")
    return t


class TimeHistory:
    """Sliding window of accepted ``(t, y)`` pairs, oldest first."""

    def __init__(self, capacity: int, times: Sequence[float] = (), values: Sequence = ()):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._t: deque[float] = deque(maxlen=capacity)
        self._y: deque[np.ndarray] = deque(maxlen=capacity)
        for t, y in zip(times, values):
            self.push(t, y)

    def push(self, t: float, y) -> None:
        y = np.array(y, dtype=float, ndmin=1)
        if self._t:
            if not t > self._t[-1]:
                raise CoefficientError(f"time {t!r} does not advance past {self._t[-1]!r}")
            if y.shape != self._y[-1].shape:
                raise CoefficientError("state dimension changed within the history window")
        self._t.append(float(t))
        self._y.append(y)

    def copy(self) -> "TimeHistory":
        return TimeHistory(self.capacity, list(self._t), list(self._y))

    def __len__(self) -> int:
        return len(self._t)

    @property
    def full(self) -> bool:
        return len(self._t) == self.capacity

    @property
    def times(self) -> np.ndarray:
        return np.fromiter(self._t, dtype=float, count=len(self._t))

    @property
    def values(self) -> np.ndarray:
        return np.array(self._y)

    @property
    def last_time(self) -> float:
        return self._t[-1]

    @property
    def last_value(self) -> np.ndarray:
        return self._y[-1]

    @property
    def steps(self) -> np.ndarray:
        """Stepsizes ``k_i = t_{i+1} - t_i``."""
        return np.diff(self.times)

    @property
    def ratios(self) -> np.ndarray:
        """Stepsize ratios ``tau_{i+1} = k_{i+1} / k_i``."""
        k = self.steps
        return k[1:] / k[:-1]


@dataclass(frozen=True)
class DividedDifferenceTable:
    """Row ``j`` of ``coeffs`` expands the j-th backward divided difference
    over the window, ``delta^j phi = sum_i coeffs[j, i] * phi_i``."""

    times: np.ndarray
    coeffs: np.ndarray

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    def apply(self, j: int, values) -> np.ndarray:
        return np.tensordot(self.coeffs[j], np.asarray(values, dtype=float), axes=1)


@dataclass(frozen=True)
class StepCoefficients:
    """BDFp weights over the full window (zeros for unused old points), the
    order-raising filter scalar ``eta`` and the scaled BDF3-Stab factor."""

    p: int
    alpha_bar: np.ndarray
    table: DividedDifferenceTable
    eta: Optional[float] = None
    mu_scaled: Optional[float] = None

    @property
    def leading(self) -> float:
        return float(self.alpha_bar[-1])


def backward_differences(times: Iterable[float]) -> DividedDifferenceTable:
    """Divided-difference coefficients for the window ``t_0 < ... < t_m``.

    Row ``q`` holds the weights of ``phi[t_m, t_{m-1}, ..., t_{m-q}]``; the
    nested loop updates the differences in place, newest node first.
    """
    t = _as_times(times)
    m = t.size - 1
    d = np.zeros((m + 1, m + 1))
    for j in range(m + 1):
        d[j, m - j] = 1.0
    c = np.zeros((m + 1, m + 1))
    c[0] = d[0]
    for q in range(1, m + 1):
        for j in range(m - q + 1):
            d[j] = (d[j] - d[j + 1]) / (t[m - j] - t[m - q - j])
        c[q] = d[0]
    return DividedDifferenceTable(times=t, coeffs=c)


def bdf_and_filter_coefficients(
    times: Iterable[float],
    p: int,
    *,
    with_eta: Optional[bool] = None,
    mu: Optional[float] = None,
) -> StepCoefficients:
    """BDFp weights on the window ending at the new time ``t_m``.

    ``eta`` (the FBDF(p+1) filter scalar) is computed whenever the window has
    at least ``p + 2`` points, or required if ``with_eta`` is true.  When ``mu``
    is given the BDF3-Stab factor ``mu / c^(3)_m`` is attached as well.
    """
    if not isinstance(p, (int, np.integer)) or not 1 <= p <= MAX_ORDER:
        raise CoefficientError(f"unsupported order p={p!r}; expected 1..{MAX_ORDER}")
    t = _as_times(times)
    m = t.size - 1
    if m < p:
        raise CoefficientError(f"BDF{p} needs {p + 1} time points, got {m + 1}")
    if with_eta and m < p + 1:
        raise CoefficientError(f"filter for BDF{p} needs {p + 2} time points, got {m + 1}")

    table = backward_differences(t)
    alpha = bdf_weights(table, p)

    eta = None
    if with_eta is not False and m >= p + 1:
        eta = filter_eta(t, p)

    mu_scaled = None
    if mu is not None:
        if m < 3:
            raise CoefficientError("BDF3-Stab scaling needs 4 time points")
        mu_scaled = float(mu / table.coeffs[3, m])

    return StepCoefficients(p=int(p), alpha_bar=alpha, table=table, eta=eta, mu_scaled=mu_scaled)


def bdf_weights(table: DividedDifferenceTable, p: int) -> np.ndarray:
    """``alpha_bar^(p)`` from an existing table (no validation)."""
    t = table.times
    m = t.size - 1
    alpha = np.zeros(m + 1)
    scale = 1.0
    for j in range(1, p + 1):
        alpha += scale * table.coeffs[j]
        scale *= t[m] - t[m - j]
    return alpha


def filter_eta(times: np.ndarray, p: int) -> float:
    """Scalar weight of ``delta^(p+1)`` in the FBDF(p+1) filter."""
    m = times.size - 1
    back = times[m] - times[m - np.arange(1, p + 2)]
    return float(np.prod(back[:p]) / np.sum(1.0 / back))


def extrapolation_weights(times: Iterable[float]) -> np.ndarray:
    """Weights ``w`` with ``sum_i w_i y_i`` equal to the value at ``times[-1]``
    of the polynomial interpolating ``y`` at ``times[:-1]``.

    Uses that the top divided difference of a degree-(m-1) interpolant vanishes.
    """
    c = backward_differences(times).coeffs[-1]
    return -c[:-1] / c[-1]


@dataclass(frozen=True)
class RatioCoefficients:
    """Closed-form coefficients for the BDF3/BDF4 step from ``t_{n+3}`` to
    ``t_{n+4}``, scaled by ``k_{n+3}``.  Index ``i`` refers to ``y_{n+i}``."""

    tau: tuple
    mu: float
    alpha3: np.ndarray
    alpha4: np.ndarray
    C: np.ndarray
    D: np.ndarray
    gammas: np.ndarray


def ratio_coefficients(tau: Sequence[float], mu: float) -> RatioCoefficients:
    """Coefficients in terms of stepsize ratios ``tau = (tau_{n+1}, tau_{n+2},
    tau_{n+3})`` with ``tau_i = k_i / k_{i-1}``."""
    if len(tau) != 3:
        raise CoefficientError("expected three stepsize ratios")
    t1, t2, t3 = (float(x) for x in tau)
    if not all(np.isfinite(x) and x > 0.0 for x in (t1, t2, t3)):
        raise CoefficientError(f"stepsize ratios must be positive and finite, got {tau!r}")
    if mu < 0:
        raise CoefficientError("mu must be nonnegative")

    a3 = np.array([
        0.0,
        -(t2**3 * t3**2 * (1 + t3)) / ((1 + t2) * (1 + t2 * (1 + t3))),
        t2 * t3**2 + t3**2 / (1 + t3),
        -1 - t3 - t2 * t3 * (1 + t3) / (1 + t2),
        1 + t3 / (1 + t3) + t2 * t3 / (1 + t2 * (1 + t3)),
    ])

    a4 = np.array([
        (t1**4 * t2**3 * t3**2 * (1 + t3) * (1 + t2 * (1 + t3)))
        / ((1 + t1) * (1 + t1 * (1 + t2)) * (1 + t1 * (1 + t2 * (1 + t3)))),
        -(t1 * t2**3 * t3**2 * (1 + t3)) / (1 + t2)
        - (t2**3 * t3**2 * (1 + t3)) / ((1 + t2) * (1 + t2 * (1 + t3))),
        t2 * t3**2 + t3**2 / (1 + t3) + t1 * t2 * t3**2 * (1 + t2 * (1 + t3)) / (1 + t1),
        -1 - t3 - t2 * t3 * (1 + t3) / (1 + t2)
        - t1 * t2 * t3 * (1 + t3) * (1 + t2 * (1 + t3)) / ((1 + t2) * (1 + t1 * (1 + t2))),
        1 + t3 * (1 / (1 + t3) + t2 / (1 + t2 * (1 + t3)))
        + t1 * t2 * t3 / (1 + t1 * (1 + t2 * (1 + t3))),
    ])

    C = np.array([
        0.0,
        -mu * t2**2 * t3 * (1 + t3) / (1 + t2),
        mu * t3 * (1 + t2 * (1 + t3)),
        -mu * (1 + t3) * (1 + t2 * (1 + t3)) / (1 + t2),
        mu,
    ])

    gammas = (a3 - a4) / a3[4]
    D = np.empty(5)
    D[4] = gammas[4] / (1 - gammas[4])
    D[:4] = gammas[:4] * (1 + D[4])

    return RatioCoefficients(
        tau=(t1, t2, t3), mu=float(mu), alpha3=a3, alpha4=a4, C=C, D=D, gammas=gammas
    )


def ratios_from_times(times: Sequence[float]) -> tuple:
    """``(tau_{n+1}, tau_{n+2}, tau_{n+3})`` for a five-point window."""
    k = np.diff(_as_times(times, min_len=5)[-5:])
    return tuple(k[1:] / k[:-1])
