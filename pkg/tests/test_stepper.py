import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moose234.coeffs import CoefficientError, TimeHistory, backward_differences, bdf_weights
from moose234.gstab import characteristic_polynomials
from moose234.newton import ProblemDefinition
from moose234.problems import dahlquist, manufactured_smooth
from moose234.stepper import (
    DEFAULT_MU,
    StabFilterConfig,
    StepConfig,
    bdf_step,
    embedded_step,
    est4_estimate,
    est4_with_jacobian,
    fbdf_step,
    integrate_fixed,
    method_window,
    observed_order,
    olm_step,
)

from conftest import forcing_problem, history_from, linear_problem, times_from_ratios

MU = DEFAULT_MU


def poly_setup(coeffs, times):
    """History sampled from a polynomial and the matching ``y' = p'(t)`` problem."""
    der = np.polyder(coeffs)
    return (forcing_problem(lambda t: np.polyval(der, t)),
            history_from(lambda t: np.polyval(coeffs, t), times))


class TestEmbeddedStep:
    def test_quadratic_is_exact(self):
        k = 0.1
        prob, hist = poly_setup([1.0, 0.0, 0.0], k * np.arange(4))
        res = embedded_step(prob, hist, 4 * k)
        exact = (4 * k) ** 2
        assert res.y3[0] == pytest.approx(exact, abs=1e-14)
        assert res.y4[0] == pytest.approx(exact, abs=1e-14)
        assert res.est_norms[3] < 1e-14 and res.est_norms[4] < 1e-13

    @pytest.mark.parametrize("k", [0.5, 0.1, 0.02])
    def test_cubic_stab_estimate(self, k):
        prob, hist = poly_setup([1.0, 0.0, 0.0, 0.0], k * np.arange(4))
        res = embedded_step(prob, hist, 4 * k)
        assert res.y3[0] == pytest.approx((4 * k) ** 3, abs=1e-13)
        # the stab filter sees the binomial third difference 6 k^3
        assert res.est_norms[2] == pytest.approx(6 * MU * k**3, rel=1e-9)
        np.testing.assert_array_equal(res.est2, res.y3 - res.y2)
        np.testing.assert_array_equal(res.est3, res.y4 - res.y3)

    def test_est4_vanishes_on_cubics(self):
        t = times_from_ratios(0.1, [1.3, 0.8])
        prob, hist = poly_setup([0.5, -1.0, 2.0, 1.0], t)
        t_new = t[-1] + 0.09
        res = embedded_step(prob, hist, t_new)
        assert res.est_norms[4] < 1e-11

    def test_orders_without_four_skip_est4(self):
        prob, hist = poly_setup([1.0, 0.0], 0.1 * np.arange(4))
        prob.reset_counters()
        res = embedded_step(prob, hist, 0.4, orders=(2, 3))
        assert res.est4 is None and 4 not in res.est_norms
        full = embedded_step(prob, hist, 0.4)
        assert 4 in full.est_norms

    def test_needs_four_points(self):
        prob, hist = poly_setup([1.0, 0.0], 0.1 * np.arange(3))
        with pytest.raises(CoefficientError):
            embedded_step(prob, hist, 0.3)

    def test_t_new_must_advance(self):
        prob, hist = poly_setup([1.0, 0.0], 0.1 * np.arange(4))
        with pytest.raises(CoefficientError):
            embedded_step(prob, hist, 0.3)

    def test_fbdf4_branch_matches_fbdf_step(self):
        prob = ProblemDefinition(1, lambda t, y: -y**3 + np.sin(t))
        hist = history_from(lambda t: np.array([np.cos(t)]), times_from_ratios(0.05, [1.2, 0.7]))
        t_new = hist.last_time + 0.04
        a = embedded_step(prob, hist, t_new)
        b = fbdf_step(prob, hist, t_new, 3)
        np.testing.assert_allclose(a.y4, b.y_high, rtol=1e-14)
        np.testing.assert_allclose(a.y3, b.y_low, rtol=1e-14)


class TestEst4:
    def test_linear_in_y4(self):
        zero = ProblemDefinition(2, lambda t, y: np.zeros(2), lambda t, y: np.zeros((2, 2)))
        hist = history_from(lambda t: np.array([t, 1 - t]), times_from_ratios(0.1, [0.9, 1.4]))
        t_new = hist.last_time + 0.1
        y4 = np.array([0.3, -0.2])
        base = est4_estimate(zero, hist, t_new, y4)
        bumped = est4_estimate(zero, hist, t_new, y4 + np.array([1.0, 0.0]))
        np.testing.assert_allclose(bumped - base, [1.0, 0.0], atol=1e-12)

    def test_jacobian_form_zero_rhs(self):
        zero = ProblemDefinition(1, lambda t, y: np.zeros(1), lambda t, y: np.zeros((1, 1)))
        hist = history_from(lambda t: np.array([t**2]), 0.1 * np.arange(4))
        y4, e3 = np.array([0.17]), np.array([0.01])
        np.testing.assert_array_equal(est4_estimate(zero, hist, 0.4, y4),
                                      est4_with_jacobian(zero, hist, 0.4, y4, e3))

    def test_jacobian_form_linear_difference(self, rng):
        A = rng.normal(size=(3, 3))
        prob = linear_problem(A)
        times = times_from_ratios(0.2, [1.1, 0.6])
        hist = history_from(lambda t: np.array([np.sin(t), np.cos(t), t]), times)
        t_new = times[-1] + 0.15
        y4, e3 = rng.normal(size=3), rng.normal(size=3)
        alpha4 = bdf_weights(backward_differences(np.append(times, t_new)), 4)
        diff = est4_with_jacobian(prob, hist, t_new, y4, e3) - est4_estimate(prob, hist, t_new, y4)
        np.testing.assert_allclose(diff, A @ e3 / alpha4[-1], rtol=1e-12, atol=1e-15)

    def test_embedded_jacobian_option(self):
        prob = dahlquist(-3.0)
        hist = history_from(prob.exact, 0.05 * np.arange(4))
        d = embedded_step(prob.definition, hist, 0.2)
        j = embedded_step(prob.definition, hist, 0.2, StepConfig(est4_form="jacobian"))
        alpha4 = bdf_weights(backward_differences(0.05 * np.arange(5)), 4)
        np.testing.assert_allclose(j.est4 - d.est4, -3.0 * d.est3 / alpha4[-1], rtol=1e-10)

    def test_decay_rates(self):
        # the BDF4 residual is O(k^4); scaled by 1/alpha_m it estimates an O(k^5) local error
        spec = dahlquist(-1.0)
        ks = 0.1 / 2.0 ** np.arange(5)
        resid, est = [], []
        for k in ks:
            hist = history_from(spec.exact, k * np.arange(4))
            e = est4_estimate(spec.definition, hist, 4 * k, spec.exact(4 * k))
            lead = bdf_weights(backward_differences(k * np.arange(5)), 4)[-1]
            est.append(np.linalg.norm(e))
            resid.append(np.linalg.norm(e * lead))
        assert observed_order(ks, resid) == pytest.approx(4.0, abs=0.2)
        assert observed_order(ks, est) == pytest.approx(5.0, abs=0.2)


class TestFbdf:
    def test_fbdf2_constant_filter(self):
        prob = ProblemDefinition(1, lambda t, y: -y + t)
        k = 0.1
        hist = history_from(lambda t: np.array([np.exp(-t)]), [0.0, k])
        out = fbdf_step(prob, hist, 2 * k, 1)
        y1, yn, ynm1 = out.y_low, hist.values[1], hist.values[0]
        np.testing.assert_allclose(out.y_high, y1 - (y1 - 2 * yn + ynm1) / 3, rtol=1e-14)

    @pytest.mark.parametrize("tau", [0.5, 0.8, 1.7, 2.0])
    def test_fbdf2_variable_filter(self, tau):
        prob = ProblemDefinition(1, lambda t, y: np.cos(y) - t)
        k0 = 0.1
        hist = history_from(lambda t: np.array([1 + t]), [0.0, k0])
        out = fbdf_step(prob, hist, k0 + tau * k0, 1)
        y1 = out.y_low
        yn1, yn = hist.values[1], hist.values[0]
        w = tau * (1 + tau) / (1 + 2 * tau)
        expected = y1 - w * (y1 / (1 + tau) - yn1 + tau / (1 + tau) * yn)
        np.testing.assert_allclose(out.y_high, expected, rtol=1e-14)

    @pytest.mark.parametrize("p", [1, 2, 3, 4, 5])
    def test_polynomial_degree_p_plus_one_exact(self, p):
        coeffs = np.arange(1.0, p + 3)
        t = times_from_ratios(0.1, np.linspace(0.7, 1.4, p))
        prob, hist = poly_setup(coeffs, t)
        t_new = t[-1] + 0.08
        out = fbdf_step(prob, hist, t_new, p)
        assert out.y_high[0] == pytest.approx(np.polyval(coeffs, t_new), rel=1e-10)

    def test_order_and_window_checks(self):
        prob, hist = poly_setup([1.0], 0.1 * np.arange(2))
        with pytest.raises(CoefficientError):
            fbdf_step(prob, hist, 1.0, 6)
        with pytest.raises(CoefficientError):
            fbdf_step(prob, hist, 1.0, 2)
        with pytest.raises(CoefficientError):
            bdf_step(prob, hist, 1.0, 0)


class TestOneLeg:
    def test_linear_agreement(self, rng):
        A = rng.normal(size=(3, 3)) - 2 * np.eye(3)
        prob = linear_problem(A)
        times = times_from_ratios(0.1, [1.5, 0.6, 1.1])
        hist = history_from(lambda t: np.array([np.sin(t), t, 1.0]), times)
        t_new = times[-1] + 0.12
        y_olm, _ = olm_step(prob, hist, t_new, 3)
        np.testing.assert_allclose(y_olm, fbdf_step(prob, hist, t_new, 3).y_high, rtol=1e-12)

    def test_cubic_constant_step_exact(self):
        prob, hist = poly_setup([2.0, -1.0, 0.5, 3.0], 0.1 * np.arange(5))
        y, _ = olm_step(prob, hist, 0.5, 3)
        assert y[0] == pytest.approx(np.polyval([2.0, -1.0, 0.5, 3.0], 0.5), rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.lists(st.floats(0.5, 2.0), min_size=5, max_size=5),
           st.floats(0.2, 2.0))
    def test_nonlinear_agreement(self, p, ratios, c):
        prob = ProblemDefinition(2, lambda t, y: np.array([-c * y[0] ** 3 + y[1], np.sin(t) - y[1]]))
        times = times_from_ratios(0.05, ratios[:p])
        hist = history_from(lambda t: np.array([np.cos(t), np.exp(-t)]), times)
        t_new = times[-1] + 0.05 * ratios[p]
        y_olm, _ = olm_step(prob, hist, t_new, p)
        y_fb = fbdf_step(prob, hist, t_new, p).y_high
        assert np.linalg.norm(y_olm - y_fb) <= 1e-10 * (1 + np.linalg.norm(y_fb))


class TestStabLocalError:
    @pytest.mark.parametrize("mu", [MU, 0.1, 0.14])
    def test_leading_error_term_on_cubic(self, mu):
        # one-step defect of the constant-step one-leg form, divided by k^2
        k = 0.05
        prob, hist = poly_setup([1.0, 0.0, 0.0, 0.0], k * np.arange(4))
        cfg = StepConfig(stab=StabFilterConfig(mu=mu))
        y2 = embedded_step(prob, hist, 4 * k, cfg).y2[0]
        rho_lead = characteristic_polynomials(mu)[0][0]
        defect = rho_lead * (y2 - (4 * k) ** 3) / k
        assert defect / k**2 == pytest.approx(11 / 6 * mu / (1 + mu) * 6.0, rel=1e-3)

    def test_g_stable_requirement(self):
        with pytest.raises(ValueError):
            StabFilterConfig(mu=0.05, require_g_stable=True)
        StabFilterConfig(mu=0.1, require_g_stable=True)
        with pytest.raises(ValueError):
            StabFilterConfig(mu=-0.1)


class TestFixedStep:
    @pytest.mark.parametrize("method,order", [("fbdf2", 2), ("bdf3", 3), ("bdf3stab", 2),
                                              ("fbdf4", 4)])
    def test_orders_on_dahlquist(self, method, order):
        spec = dahlquist(-1.0)
        ks, errs = [], []
        for level in range(5):
            n = 10 * 2**level
            ts, ys = integrate_fixed(spec.definition, method, 0.0, 1.0, n, spec.exact, path=True)
            errs.append(max(np.linalg.norm(y - spec.exact(t)) for t, y in zip(ts, ys)))
            ks.append(1.0 / n)
        assert observed_order(ks, errs) == pytest.approx(order, abs=0.2)

    def test_unknown_method(self):
        spec = manufactured_smooth()
        with pytest.raises(ValueError):
            integrate_fixed(spec.definition, "rk4", 0.0, 1.0, 10, spec.exact)

    def test_windows(self):
        assert method_window("bdf3") == 3
        assert method_window("fbdf4") == 4
        assert method_window("bdf3stab") == 4

    def test_observed_order_ignores_failed_levels(self):
        assert observed_order([1, 0.5, 0.25], [1, np.nan, 1 / 16]) == pytest.approx(2.0)
        assert np.isnan(observed_order([1, 0.5], [1, np.nan]))
