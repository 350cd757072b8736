import numpy as np
import pytest

from moose234.coeffs import TimeHistory
from moose234.newton import ProblemDefinition


def history_from(func, times, capacity=None):
    """Window filled with exact samples ``func(t)``."""
    h = TimeHistory(capacity or len(times))
    for t in times:
        h.push(t, np.atleast_1d(func(t)))
    return h


def times_from_ratios(k0, ratios, t0=0.0):
    ks = [k0]
    for r in ratios:
        ks.append(ks[-1] * r)
    return t0 + np.concatenate([[0.0], np.cumsum(ks)])


def forcing_problem(dydt, dim=1, name="forced"):
    """``y' = dydt(t)``, independent of ``y``."""
    return ProblemDefinition(
        dim, lambda t, y: np.atleast_1d(np.asarray(dydt(t), dtype=float)) * np.ones(dim),
        lambda t, y: np.zeros((dim, dim)), name=name)


def linear_problem(A, b=None, name="linear"):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
    return ProblemDefinition(A.shape[0], lambda t, y: A @ y + b, lambda t, y: A, name=name)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
