import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import hermite as npherm
from scipy import integrate, special

from epglm.special import (
    hermite,
    lambert_w,
    lambert_w_exp,
    laplace_lognormal_asmussen,
    log_norm_cdf,
    rossberg_coefficients,
    rossberg_g,
    zeta1,
    zeta2,
)

# Frozen from 30-digit mpmath evaluations (log(ncdf), npdf/ncdf, lambertw, quad).
LOG_PHI_M10 = -53.23128515051247
ZETA1_M10 = 10.098093233962512
W_ONE = 0.5671432904097838
A1 = 0.5772156649015329
A2 = 0.9890559953279726
A3 = 0.9074790760808863
# mpmath quad of rho e^{rho x'} exp(-e^{rho x'}) Phi(x') at rho=8
G_RHO8_X0 = 0.4718893277980292


class TestLogNormCdf:
    def test_zero(self):
        assert log_norm_cdf(0.0) == pytest.approx(math.log(0.5), rel=1e-15)

    def test_saturates(self):
        assert abs(log_norm_cdf(40.0)) <= 1e-15

    def test_deep_left_tail(self):
        np.testing.assert_allclose(log_norm_cdf(-10.0), LOG_PHI_M10, rtol=1e-12)

    def test_matches_scipy_on_range(self):
        xs = np.linspace(-37.0, 8.0, 901)
        ours = np.array([log_norm_cdf(x) for x in xs])
        np.testing.assert_allclose(ours, special.log_ndtr(xs), rtol=1e-12)
        assert np.all(np.isfinite(ours))

    def test_monotone(self):
        xs = np.linspace(-37.0, 8.0, 2001)
        assert np.all(np.diff([log_norm_cdf(x) for x in xs]) >= 0)


class TestZeta:
    def test_zeta1_zero(self):
        assert zeta1(0.0) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-14)

    def test_zeta2_zero(self):
        assert zeta2(0.0) == pytest.approx(-2 / math.pi, rel=1e-14)

    def test_zeta1_tail(self):
        np.testing.assert_allclose(zeta1(-10.0), ZETA1_M10, rtol=1e-12)

    @given(st.floats(-60.0, 30.0))
    def test_mills_positivity(self, x):
        z = zeta1(x)
        assert z > 0.0
        assert z + x > 0.0

    @given(st.floats(-60.0, 30.0))
    def test_zeta2_bounds(self, x):
        assert -1.0 < zeta2(x) < 0.0


class TestLambertW:
    @pytest.mark.parametrize("x, w", [(0.0, 0.0), (math.e, 1.0), (1.0, W_ONE)])
    def test_values(self, x, w):
        assert lambert_w(x) == pytest.approx(w, abs=1e-14)

    @given(st.floats(0.0, 1e300))
    def test_round_trip(self, x):
        w = lambert_w(x)
        # compare in log form where w e^w would overflow
        if w < 700:
            assert abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, x)
        else:
            assert abs(math.log(w) + w - math.log(x)) <= 1e-12 * w

    def test_increasing(self):
        xs = np.geomspace(1e-10, 1e10, 500)
        assert np.all(np.diff([lambert_w(x) for x in xs]) > 0)

    @pytest.mark.parametrize("x", [-1e-3, -1.0, math.inf, math.nan])
    def test_rejects_outside_principal_branch(self, x):
        with pytest.raises(ValueError):
            lambert_w(x)

    def test_exp_argument_matches_direct(self):
        for log_x in (-5.0, 0.0, 10.0, 499.0):
            assert lambert_w_exp(log_x) == pytest.approx(lambert_w(math.exp(log_x)), rel=1e-14)
        w = lambert_w_exp(1e4)
        assert w + math.log(w) == pytest.approx(1e4, rel=1e-15)


class TestHermite:
    def test_low_orders(self):
        assert hermite(0, 3.7) == 1.0
        assert hermite(2, 1.0) == 2.0

    @pytest.mark.parametrize("m", range(17))
    def test_matches_coefficient_expansion(self, m):
        for x in (0.5, -1.3, 2.2):
            coef = np.zeros(m + 1)
            coef[m] = 1.0
            np.testing.assert_allclose(hermite(m, x), npherm.hermval(x, coef), rtol=1e-12, atol=1e-12)

    def test_order_six_half(self):
        assert hermite(6, 0.5) == pytest.approx(31.0, rel=1e-12)

    def test_order_limit(self):
        with pytest.raises(ValueError):
            hermite(17, 0.0)


class TestRossbergCoefficients:
    def test_leading_values(self):
        a = rossberg_coefficients(6)
        assert a[0] == 1.0
        np.testing.assert_allclose([a[1], a[2], a[3]], [A1, A2, A3], atol=1e-10)

    def test_closed_form_second(self):
        gamma = 0.5772156649015329
        assert rossberg_coefficients(2)[2] == pytest.approx((gamma**2 + math.pi**2 / 6) / 2, abs=1e-12)

    def test_cached_and_deterministic(self):
        assert rossberg_coefficients(10) is rossberg_coefficients(10)
        a = rossberg_coefficients(10)
        assert a.order == 10
        assert all(math.isfinite(v) for v in a.a)

    @pytest.mark.parametrize("M", [0, 11])
    def test_order_limits(self, M):
        with pytest.raises(ValueError):
            rossberg_coefficients(M)


def _lognormal_laplace(s, rho2):
    f = lambda x: np.exp(-s * np.exp(x) - 0.5 * x * x / rho2)
    sd = math.sqrt(rho2)
    val, _ = integrate.quad(f, -12 * sd, 12 * sd, epsabs=1e-13, limit=200)
    return val / math.sqrt(2 * math.pi * rho2)


class TestAsmussen:
    def test_small_s_limit(self):
        assert laplace_lognormal_asmussen(1e-300, 1.0) == pytest.approx(1.0, abs=1e-10)

    def test_hand_value(self):
        # W(e) = 1: exp(-1 - 1/2) / sqrt(2)
        assert laplace_lognormal_asmussen(math.e, 1.0) == pytest.approx(
            math.exp(-1.5) / math.sqrt(2), rel=1e-14
        )

    def test_against_quadrature(self):
        ref = _lognormal_laplace(1.0, 0.25)
        assert laplace_lognormal_asmussen(1.0, 0.25) == pytest.approx(ref, rel=0.01)

    def test_decreasing_in_s(self):
        s = np.geomspace(1e-6, 1e6, 50)
        vals = [laplace_lognormal_asmussen(v, 0.7) for v in s]
        assert np.all(np.diff(vals) < 0)
        assert all(0 < v <= 1 for v in vals)


class TestRossbergG:
    def test_derivatives_match_finite_differences(self):
        h = 1e-5
        g, g1, g2 = rossberg_g(0.0, 2.0, 6)
        gp, _, _ = rossberg_g(h, 2.0, 6)
        gm, _, _ = rossberg_g(-h, 2.0, 6)
        _, g1p, _ = rossberg_g(h, 2.0, 6)
        _, g1m, _ = rossberg_g(-h, 2.0, 6)
        assert g1 == pytest.approx((gp - gm) / (2 * h), abs=1e-6)
        assert g2 == pytest.approx((g1p - g1m) / (2 * h), abs=1e-6)

    def test_against_quadrature_large_rho(self):
        g, _, _ = rossberg_g(0.0, 8.0, 6)
        assert g == pytest.approx(G_RHO8_X0, abs=1e-4)

    @pytest.mark.parametrize("x", [20.0, 40.0])
    def test_saturates(self, x):
        g, g1, g2 = rossberg_g(x, 2.0, 6)
        assert g == pytest.approx(1.0, abs=1e-6)
        assert math.isfinite(g1) and math.isfinite(g2)

    def test_in_unit_interval_where_valid(self):
        for x in np.linspace(-3, 3, 13):
            for rho in (1.0, 2.0, 5.0):
                g, _, _ = rossberg_g(x, rho, 6)
                assert 0.0 < g < 1.0

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            rossberg_g(0.0, 0.0)
        with pytest.raises(ValueError):
            rossberg_g(0.0, 1.0, 1)
