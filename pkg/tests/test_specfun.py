import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dosebounds import specfun
from dosebounds.specfun import (
    DomainError,
    NumericError,
    QuadratureSpec,
    digamma,
    erf,
    hyp1f1,
    integrate,
    log_gamma,
    reg_inc_beta,
)


def beta_pdf(tau, a, b):
    lnb = log_gamma(a) + log_gamma(b) - log_gamma(a + b)
    return np.exp((a - 1.0) * np.log(tau) + (b - 1.0) * np.log1p(-tau) - lnb)


class TestIntegrate:
    """Adaptive Gauss-Kronrod integration on finite and infinite ranges."""

    def test_cubic_is_exact(self):
        value = integrate(lambda tau: tau**3, 0.0, 1.0)
        assert value == pytest.approx(0.25, abs=1e-14)

    def test_exponential_tail(self):
        value = integrate(lambda tau: np.exp(-tau), 0.0, np.inf)
        assert value == pytest.approx(1.0, abs=1e-9)

    def test_standard_normal_mass(self):
        value = integrate(
            lambda tau: np.exp(-0.5 * tau * tau) / math.sqrt(2.0 * math.pi),
            -np.inf,
            np.inf,
        )
        assert value == pytest.approx(1.0, abs=1e-9)

    def test_left_tail(self):
        value = integrate(lambda tau: np.exp(tau), -np.inf, 0.0)
        assert value == pytest.approx(1.0, abs=1e-9)

    def test_scalar_integrand_fallback(self):
        value = integrate(lambda tau: math.sin(tau), 0.0, math.pi)
        assert value == pytest.approx(2.0, abs=1e-10)

    def test_oscillatory(self):
        value = integrate(lambda tau: np.cos(40.0 * tau), 0.0, 1.0)
        assert value == pytest.approx(math.sin(40.0) / 40.0, abs=1e-10)

    def test_integrable_endpoint_singularity(self):
        value = integrate(lambda tau: 1.0 / np.sqrt(tau), 0.0, 1.0)
        assert value == pytest.approx(2.0, rel=1e-8)

    def test_budget_exhaustion_reports_partial(self):
        spec = QuadratureSpec(abs_tol=1e-13, rel_tol=1e-13, max_subdivisions=3)
        with pytest.raises(NumericError) as excinfo:
            integrate(lambda tau: 1.0 / np.sqrt(tau), 0.0, 1.0, spec)
        assert excinfo.value.value == pytest.approx(2.0, rel=1e-2)
        assert excinfo.value.error is not None

    def test_bad_bounds(self):
        with pytest.raises(DomainError):
            integrate(lambda tau: tau, 1.0, 0.0)
        with pytest.raises(DomainError):
            integrate(lambda tau: tau, math.nan, 1.0)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            QuadratureSpec(abs_tol=0.0)
        with pytest.raises(ValueError):
            QuadratureSpec(max_subdivisions=0)


class TestLogGamma:
    def test_factorial_anchor(self):
        assert log_gamma(5.0) == pytest.approx(math.log(24.0), rel=1e-14)

    def test_half(self):
        assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-14)

    def test_domain(self):
        for bad in (0.0, -1.5, math.nan):
            with pytest.raises(DomainError):
                log_gamma(bad)

    def test_array_input(self):
        xs = np.array([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_allclose(log_gamma(xs), [0.0, 0.0, math.log(2.0), math.log(6.0)], atol=1e-14)


class TestDigamma:
    def test_euler_mascheroni(self):
        assert digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-12)

    def test_recurrence(self):
        x = 3.7
        assert digamma(x + 1.0) - digamma(x) == pytest.approx(1.0 / x, abs=1e-12)

    def test_matches_log_gamma_slope(self):
        # central finite difference of log_gamma is the independent oracle
        step = 1e-5
        for x in np.geomspace(0.1, 100.0, 37):
            slope = (log_gamma(x + step) - log_gamma(x - step)) / (2.0 * step)
            assert digamma(x) == pytest.approx(slope, abs=1e-6)

    def test_domain(self):
        with pytest.raises(DomainError):
            digamma(0.0)
        with pytest.raises(DomainError):
            digamma(-3.0)


class TestErf:
    def test_quadrature_anchor(self):
        oracle = 2.0 / math.sqrt(math.pi) * integrate(lambda u: np.exp(-u * u), 0.0, 1.0)
        assert erf(1.0) == pytest.approx(oracle, abs=1e-10)

    @given(st.floats(-6.0, 6.0))
    @settings(max_examples=60, deadline=None)
    def test_odd_and_bounded(self, x):
        assert erf(-x) == pytest.approx(-erf(x), abs=1e-15)
        assert abs(erf(x)) <= 1.0

    def test_domain(self):
        with pytest.raises(DomainError):
            erf(math.inf)


class TestHyp1F1:
    def test_at_zero(self):
        assert hyp1f1(2.5, 6.0, 0.0) == 1.0

    def test_exponential_special_case(self):
        # 1F1(1; 2; z) = (e^z - 1) / z
        z = 0.8
        assert hyp1f1(1.0, 2.0, z) == pytest.approx((math.exp(z) - 1.0) / z, rel=1e-12)

    def test_beta_mgf_anchor(self):
        oracle = integrate(lambda tau: np.exp(0.7 * tau) * beta_pdf(tau, 2.5, 3.5), 0.0, 1.0)
        assert hyp1f1(2.5, 6.0, 0.7) == pytest.approx(oracle, abs=1e-8)

    def test_kummer_reflection_consistency(self):
        a, b, z = 1.7, 4.2, 1.1
        assert hyp1f1(a, b, -z) == pytest.approx(math.exp(-z) * hyp1f1(b - a, b, z), rel=1e-12)

    def test_beta_mgf_random_parameters(self):
        # moment generating function of Beta(A, B) equals 1F1(A; A+B; z)
        rng = np.random.default_rng(42)
        for _ in range(40):
            a = rng.uniform(0.5, 50.0)
            b = rng.uniform(0.5, 50.0)
            z = rng.uniform(-math.log(2.5), math.log(2.5))
            oracle = integrate(lambda tau: np.exp(z * tau) * beta_pdf(tau, a, b), 0.0, 1.0)
            assert hyp1f1(a, a + b, z) == pytest.approx(oracle, rel=1e-7)

    def test_array_broadcast(self):
        a = np.array([1.0, 2.0, 3.0])
        out = hyp1f1(a, a + 1.0, 0.3)
        expected = [hyp1f1(float(ai), float(ai) + 1.0, 0.3) for ai in a]
        np.testing.assert_allclose(out, expected, rtol=1e-14)

    def test_domain(self):
        with pytest.raises(DomainError):
            hyp1f1(1.0, 0.0, 0.5)
        with pytest.raises(DomainError):
            hyp1f1(1.0, -2.0, 0.5)


class TestRegIncBeta:
    def test_quadrature_anchor(self):
        oracle = integrate(lambda tau: beta_pdf(tau, 2.0, 5.0), 0.0, 0.4)
        assert reg_inc_beta(2.0, 5.0, 0.4) == pytest.approx(oracle, abs=1e-9)

    def test_endpoints(self):
        assert reg_inc_beta(3.0, 4.0, 0.0) == 0.0
        assert reg_inc_beta(3.0, 4.0, 1.0) == 1.0

    def test_uniform_case(self):
        assert reg_inc_beta(1.0, 1.0, 0.37) == pytest.approx(0.37, rel=1e-12)

    @given(
        st.floats(0.5, 20.0),
        st.floats(0.5, 20.0),
        st.floats(0.01, 0.99),
    )
    @settings(max_examples=60, deadline=None)
    def test_complement_identity(self, a, b, x):
        lhs = reg_inc_beta(a, b, x)
        rhs = 1.0 - reg_inc_beta(b, a, 1.0 - x)
        assert lhs == pytest.approx(rhs, abs=1e-12)
        assert 0.0 <= lhs <= 1.0

    def test_monotone_in_x(self):
        xs = np.linspace(0.0, 1.0, 21)
        vals = reg_inc_beta(3.3, 1.7, xs)
        assert np.all(np.diff(vals) >= 0.0)

    def test_domain(self):
        with pytest.raises(DomainError):
            reg_inc_beta(0.0, 1.0, 0.5)
        with pytest.raises(DomainError):
            reg_inc_beta(1.0, 1.0, 1.5)


class TestDefaults:
    def test_quadrature_defaults(self):
        spec = specfun.DEFAULT_QUADRATURE
        assert spec.abs_tol == 1e-10
        assert spec.rel_tol == 1e-9
        assert spec.max_subdivisions == 2000
