"""Built-in test problems, addressable by name."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .newton import ProblemDefinition


@dataclass
class ProblemSpec:
    definition: ProblemDefinition
    default_span: tuple
    default_y0: np.ndarray
    exact: Optional[Callable[[float], np.ndarray]] = None
    stiffness_note: str = ""

    @property
    def name(self) -> str:
        return self.definition.name


def van_der_pol(mu_bar: float = 1000.0) -> ProblemSpec:
    """``y1' = y2, y2' = mu_bar (1 - y1^2) y2 - y1`` started at (2, 0)."""
    if not mu_bar > 0:
        raise ValueError("mu_bar must be positive")

    def rhs(t, y):
        return np.array([y[1], mu_bar * (1.0 - y[0] * y[0]) * y[1] - y[0]])

    def jac(t, y):
        return np.array([[0.0, 1.0],
                         [-2.0 * mu_bar * y[0] * y[1] - 1.0, mu_bar * (1.0 - y[0] * y[0])]])

    return ProblemSpec(
        definition=ProblemDefinition(2, rhs, jac, name="vdp"),
        default_span=(0.0, 3000.0),
        default_y0=np.array([2.0, 0.0]),
        stiffness_note=f"stiff relaxation oscillator, mu_bar={mu_bar:g}; y0=(2,0) is assumed",
    )


def dahlquist(lam: float = -1.0) -> ProblemSpec:
    def rhs(t, y):
        return lam * y

    def jac(t, y):
        return np.array([[lam]])

    return ProblemSpec(
        definition=ProblemDefinition(1, rhs, jac, name="dahlquist"),
        default_span=(0.0, 1.0),
        default_y0=np.array([1.0]),
        exact=lambda t: np.array([np.exp(lam * t)]),
        stiffness_note=f"linear test equation, lambda={lam:g}",
    )


def manufactured_smooth() -> ProblemSpec:
    """``y' = -y + sin t + cos t`` with solution ``sin t``."""

    def rhs(t, y):
        return -y + np.sin(t) + np.cos(t)

    def jac(t, y):
        return np.array([[-1.0]])

    return ProblemSpec(
        definition=ProblemDefinition(1, rhs, jac, name="manufactured"),
        default_span=(0.0, 5.0),
        default_y0=np.array([0.0]),
        exact=lambda t: np.array([np.sin(t)]),
        stiffness_note="smooth, mildly damped",
    )


REGISTRY: dict[str, Callable[[], ProblemSpec]] = {
    "vdp": van_der_pol,
    "van_der_pol": van_der_pol,
    "dahlquist": dahlquist,
    "manufactured": manufactured_smooth,
    "manufactured_smooth": manufactured_smooth,
}


def get_problem(name: str) -> ProblemSpec:
    try:
        factory = REGISTRY[name.lower()]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(set(REGISTRY))}") from None
    return factory()


def exact_problems() -> list[ProblemSpec]:
    """One instance of every registered problem that has an exact solution."""
    seen, out = set(), []
    for factory in REGISTRY.values():
        if factory in seen:
            continue
        seen.add(factory)
        spec = factory()
        if spec.exact is not None:
            out.append(spec)
    return out


def load_reference(name: str = "vdp") -> dict:
    """Stored high-accuracy reference state for problems without an exact solution."""
    text = resources.files(__package__).joinpath("data").joinpath(f"{name}_reference.json").read_text()
    ref = json.loads(text)
    ref["y_ref"] = np.asarray(ref["y_ref"], dtype=float)
    return ref


def vdp_reference(mu_bar: float = 1000.0, t_end: float = 3000.0, rtol: float = 1e-13,
                  atol: float = 1e-14) -> np.ndarray:
    """Recompute the Van der Pol reference with scipy's Radau IIA solver."""
    from scipy.integrate import solve_ivp

    spec = van_der_pol(mu_bar)
    d = spec.definition
    sol = solve_ivp(d.rhs, (0.0, t_end), spec.default_y0, method="Radau", jac=d.jacobian,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[:, -1]
