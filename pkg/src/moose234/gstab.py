"""G-stability certificate and linear stability data for BDF3-Stab.

The constant-step method, scaled by 6k/11, is the one-leg method
``rho(E) y_n = (6/11) k f(sigma(E) y_n)`` with

    rho(r)   = r^3/(1+mu) + (3mu/(1+mu) - 18/11) r^2 + (9/11 - 3mu/(1+mu)) r + (mu/(1+mu) - 2/11)
    sigma(r) = (r^3 + 3mu r^2 - 3mu r + mu) / (1+mu)

G-stability asks for a symmetric positive definite G and a vector a with
``rho * sigma = |Y_{n+1}|_G^2 - |Y_n|_G^2 + |a . y|^2`` coefficientwise.
The closed forms for G and a are evaluated in complex arithmetic; realness,
the coefficient matching residual and Sylvester minors decide the verdict.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# bracket used for the removable 0/0 in a3, a2, a1 at mu = 1/10
_SINGULAR_BAND = 1e-4


@dataclass(frozen=True)
class GStabCertificate:
    mu: float
    g: dict
    a: tuple
    minors: tuple
    residual: float
    max_imag: float
    is_g_stable: bool

    @property
    def matrix(self) -> np.ndarray:
        g = self.g
        return np.array([[g["g33"], g["g32"], g["g31"]],
                         [g["g32"], g["g22"], g["g21"]],
                         [g["g31"], g["g21"], g["g11"]]])


def _closed_forms(mu: float) -> tuple[dict, tuple]:
    mu = complex(mu)
    q = (mu + 1) ** 2
    root = np.sqrt(3) * np.sqrt((7 * mu - 1) * (6 * mu - 5) * (14 * mu - 1) * (mu + 1) ** 5)
    P = (mu + root + 41 * mu**2 + 83 * mu**3 + 42 * mu**4 + 1) / (
        44 * (mu**4 + 4 * mu**3 + 6 * mu**2 + 4 * mu + 1))

    g = {
        "g33": P + (-42 * mu**2 + mu + 21) / (22 * q),
        "g32": (42 * mu**2 + 13 * mu - 7) / (11 * q) - 2 * P,
        "g31": P - (21 * mu**2 + 8 * mu - 2) / (11 * q),
        "g22": 4 * P - (120 * mu**2 + 23 * mu - 9) / (22 * q),
        "g21": (51 * mu**2 + 5 * mu - 2) / (22 * q) - 2 * P,
        "g11": (-9 * mu**2 + 2 * mu) / (11 * q) + P,
    }

    s = np.sqrt(P)
    s3 = P * s
    a0 = -s
    if abs(20 * mu - 2) > _SINGULAR_BAND:
        base = 22 * mu**2 * s3 - 42 * mu**2 * s + 44 * mu * s3 + 22 * s3
        a3 = (base + mu * s - s) / (20 * mu - 2)
        a2 = -(base + 11 * mu * s - 2 * s) / (10 * mu - 1)
        a1 = (base + 41 * mu * s - 5 * s) / (20 * mu - 2)
    else:
        # the closed forms are 0/0 here; use the matching equations that are
        # linear in a3, a2, a1 given a0 and G instead
        d = 11 * q
        a3 = (20 * mu - 2) / d / (2 * a0)
        a2 = ((42 * mu**2 - 24 * mu) / d + 2 * g["g31"]) / (2 * a0)
        a1 = ((-51 * mu**2 + 15 * mu) / d + 2 * g["g21"]) / (2 * a0)
    return g, (a3, a2, a1, a0)


def matching_residuals(mu: float, g: dict, a: tuple) -> np.ndarray:
    """Defects of the ten coefficient-matching equations."""
    a3, a2, a1, a0 = a
    d = 11 * (1 + mu) ** 2
    return np.array([
        g["g33"] + a3**2 - 1 / (1 + mu) ** 2,
        g["g22"] - g["g33"] + a2**2 - (45 * mu**2 - 54 * mu) / d,
        g["g11"] - g["g22"] + a1**2 - (72 * mu**2 - 27 * mu) / d,
        a0**2 - g["g11"] - (9 * mu**2 - 2 * mu) / d,
        2 * g["g32"] + 2 * a3 * a2 - (48 * mu - 18) / d,
        2 * g["g31"] + 2 * a3 * a1 - (-57 * mu + 9) / d,
        2 * a3 * a0 - (20 * mu - 2) / d,
        2 * g["g21"] - 2 * g["g32"] + 2 * a2 * a1 - (-117 * mu**2 + 81 * mu) / d,
        -2 * g["g31"] + 2 * a2 * a0 - (42 * mu**2 - 24 * mu) / d,
        -2 * g["g21"] + 2 * a1 * a0 - (-51 * mu**2 + 15 * mu) / d,
    ])


def leading_minors(g: dict) -> tuple:
    g1 = g["g33"]
    g2 = g["g33"] * g["g22"] - g["g32"] ** 2
    g3 = (g["g33"] * (g["g22"] * g["g11"] - g["g21"] ** 2)
          - g["g32"] * (g["g32"] * g["g11"] - g["g21"] * g["g31"])
          + g["g31"] * (g["g32"] * g["g21"] - g["g22"] * g["g31"]))
    return g1, g2, g3


def g_matrix(mu: float, *, imag_tol: float = 1e-12, residual_tol: float = 1e-9) -> GStabCertificate:
    g_c, a_c = _closed_forms(mu)
    vals = list(g_c.values()) + list(a_c)
    max_imag = max(abs(complex(v).imag) for v in vals)
    residual = float(np.max(np.abs(matching_residuals(mu, g_c, a_c))))
    g = {k: float(complex(v).real) for k, v in g_c.items()}
    a = tuple(float(complex(v).real) for v in a_c)
    minors = leading_minors(g)
    real = max_imag <= imag_tol * (1.0 + max(abs(complex(v)) for v in vals))
    ok = real and residual < residual_tol and all(m > 0 for m in minors)
    return GStabCertificate(float(mu), g, a, minors, residual, max_imag, bool(ok))


def is_g_stable(mu: float) -> bool:
    return g_matrix(mu).is_g_stable


def g_stable_interval(tolerance: float = 1e-8, inside: float = 0.1,
                      outside_lo: float = 0.05, outside_hi: float = 0.2) -> tuple:
    """Bisect the G-stability predicate for both endpoints of the interval
    around ``inside``.  Each returned endpoint lies inside the interval and
    within ``tolerance`` of the boundary."""
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    if not is_g_stable(inside):
        raise ValueError(f"seed mu={inside} is not G-stable")
    for seed in (outside_lo, outside_hi):
        if is_g_stable(seed):
            raise ValueError(f"seed mu={seed} is unexpectedly G-stable; widen the bracket")

    def bisect(good, bad):
        while abs(good - bad) > tolerance:
            mid = 0.5 * (good + bad)
            if is_g_stable(mid):
                good = mid
            else:
                bad = mid
        return good

    return bisect(inside, outside_lo), bisect(inside, outside_hi)


def error_constant_bdf3stab(mu: float) -> float:
    """Magnitude of the leading local error constant, ``(11/6) mu / (1 + mu)``."""
    if not mu > -1:
        raise ValueError("mu must exceed -1")
    return 11.0 / 6.0 * mu / (1.0 + mu)


def characteristic_polynomials(mu: float) -> tuple[np.ndarray, np.ndarray]:
    """``(rho, sigma)`` of the unscaled constant-step one-leg form, highest
    power first, so that ``rho(r) - h*lambda*sigma(r)`` is the characteristic
    polynomial for ``y' = lambda y``."""
    w = mu / (1.0 + mu)
    diff3 = np.array([1.0, -3.0, 3.0, -1.0])
    rho = np.array([11.0, -18.0, 9.0, -2.0]) / 6.0 - 11.0 / 6.0 * w * diff3
    sigma = np.array([1.0, 0.0, 0.0, 0.0]) - w * diff3
    return rho, sigma


def stability_roots(mu: float, z: complex) -> np.ndarray:
    rho, sigma = characteristic_polynomials(mu)
    poly = rho.astype(complex) - z * sigma
    if abs(poly[0]) == 0:
        raise ZeroDivisionError("degenerate leading coefficient")
    # companion-matrix eigenvalues
    return np.roots(poly)


def linear_stability_scan(mu: float, z_values) -> np.ndarray:
    """Largest root magnitude for each ``z = h*lambda``; NaN marks a failed point."""
    z_values = np.atleast_1d(np.asarray(z_values, dtype=complex))
    out = np.empty(z_values.size)
    for i, z in enumerate(z_values):
        try:
            roots = stability_roots(mu, complex(z))
            out[i] = np.max(np.abs(roots)) if roots.size else math.nan
        except (np.linalg.LinAlgError, ZeroDivisionError):
            out[i] = math.nan
    return out


def left_half_plane_samples(n: int = 500, r_max: float = 1e6) -> np.ndarray:
    """Deterministic sample of ``Re z <= 0``: imaginary axis, negative real
    axis and a log-polar interior grid, always including ``|z| = r_max``."""
    n_axis = n // 5
    imag = 1j * np.concatenate([np.logspace(-4, math.log10(r_max), n_axis // 2),
                                -np.logspace(-4, math.log10(r_max), n_axis - n_axis // 2)])
    real = -np.logspace(-4, math.log10(r_max), n_axis)
    rest = n - imag.size - real.size - 2
    radii = np.logspace(-3, math.log10(r_max), max(rest, 1))
    angles = np.linspace(math.pi / 2, 3 * math.pi / 2, max(rest, 1) + 2)[1:-1]
    rng_free = np.roll(angles, 7)  # decorrelate radius and angle without randomness
    interior = radii * np.exp(1j * rng_free)
    pts = np.concatenate([[0.0, -r_max], imag, real, interior[:rest]])
    return pts[:n]
