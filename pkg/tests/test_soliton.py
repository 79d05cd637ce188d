import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import beta as beta_fn

from gkdv_control.grid import DomainError, GridFunction, spectral_derivative
from gkdv_control.soliton import (
    SolitonParams,
    energy,
    eval_LambdaQc,
    eval_Q,
    eval_Q_deriv,
    eval_Qc,
    eval_Qc_deriv,
    h1_norm,
    is_adequately_resolved,
    mass,
    quadrature_constants,
    soliton_grid,
    soliton_ode_residual,
)

ps = st.sampled_from([2, 3, 4])
speeds = st.floats(0.3, 3.0)


def beta_oracle(p, k):
    """Closed form of int Q^k via int sech^{2a}(b s) ds = B(a, 1/2)/b."""
    a = k / (p - 1)
    return (0.5 * (p + 1)) ** a * 2.0 / (p - 1) * beta_fn(a, 0.5)


class TestGrid:
    def test_rejects_non_power_of_two(self):
        with pytest.raises(DomainError):
            GridFunction(10.0, 100, np.zeros(100))

    def test_rejects_non_finite(self):
        s = np.zeros(16)
        s[3] = np.nan
        with pytest.raises(DomainError):
            GridFunction(10.0, 16, s)

    def test_spectral_derivative_of_sine(self):
        g = GridFunction.from_function(np.sin, 2 * np.pi, 64)
        assert np.max(np.abs(g.derivative(1) - np.cos(g.x))) < 1e-13
        assert np.max(np.abs(g.derivative(3) + np.cos(g.x))) < 1e-11

    def test_odd_derivative_is_real_for_nyquist(self):
        n = 32
        x = np.arange(n) * (2 * np.pi / n)
        d = spectral_derivative(np.cos(16 * x), 2 * np.pi / n, 1)
        assert np.max(np.abs(d)) < 1e-12


class TestProfiles:
    def test_center_values(self):
        assert eval_Q(2, 0.0) == pytest.approx(1.5, abs=1e-15)
        assert eval_Q(3, 0.0) == pytest.approx(math.sqrt(2), abs=1e-15)
        assert eval_Qc(SolitonParams(2, 1.0), 0.0) == pytest.approx(1.5, abs=1e-15)
        assert eval_Qc(SolitonParams(2, 4.0), 0.0) == pytest.approx(6.0, abs=1e-14)

    def test_exponential_tail(self):
        assert eval_Q(2, 10.0) == pytest.approx(6 * math.exp(-10), rel=1e-3)

    def test_composition_by_hand(self):
        # p=4, c=2 at y=1: 2^{1/3} * [5/(2 cosh^2(1.5 sqrt 2))]^{1/3}
        expected = 2 ** (1 / 3) * (2.5 / math.cosh(1.5 * math.sqrt(2)) ** 2) ** (1 / 3)
        assert eval_Qc(SolitonParams(4, 2.0), 1.0) == pytest.approx(expected, rel=1e-14)

    def test_lambda_q_at_center(self):
        assert eval_LambdaQc(SolitonParams(2, 1.0), 0.0) == pytest.approx(1.5, abs=1e-15)
        assert eval_LambdaQc(SolitonParams(3, 1.0), 0.0) == pytest.approx(math.sqrt(2) / 2, abs=1e-15)

    def test_invalid_arguments(self):
        with pytest.raises(DomainError):
            eval_Q(5, 0.0)
        with pytest.raises(DomainError):
            SolitonParams(2, 0.0)
        with pytest.raises(DomainError):
            SolitonParams(2, -1.0)

    @given(ps, speeds, st.floats(-30, 30))
    def test_even_and_positive(self, p, c, y):
        s = SolitonParams(p, c)
        assert eval_Qc(s, y) == eval_Qc(s, -y)
        if abs(y) < 20:
            assert eval_Qc(s, y) > 0

    @given(ps, speeds)
    @settings(max_examples=30)
    def test_lambda_q_matches_difference_in_c(self, p, c):
        y = np.linspace(-20, 20, 801)
        h = 1e-5
        fd = (eval_Qc(SolitonParams(p, c + h), y) - eval_Qc(SolitonParams(p, c - h), y)) / (2 * h)
        assert np.max(np.abs(eval_LambdaQc(SolitonParams(p, c), y) - fd)) < 1e-8

    @given(ps, st.integers(1, 3))
    @settings(max_examples=20)
    def test_derivatives_match_spectral(self, p, k):
        g = GridFunction.from_function(lambda x: eval_Q(p, x), 80.0, 2048)
        assert np.max(np.abs(eval_Q_deriv(p, g.x, k) - g.derivative(k))) < 1e-9

    @given(ps, speeds)
    @settings(max_examples=20)
    def test_scaled_derivative(self, p, c):
        s = SolitonParams(p, c)
        g = GridFunction.from_function(lambda x: eval_Qc(s, x), 100.0, 4096)
        assert np.max(np.abs(eval_Qc_deriv(s, g.x, 1) - g.derivative(1))) < 1e-9


class TestOdeResidual:
    def test_resolved(self):
        g = GridFunction(100.0, 2048, np.zeros(2048))
        assert soliton_ode_residual(SolitonParams(2, 1.0), g) < 1e-8
        g = GridFunction(200.0, 4096, np.zeros(4096))
        assert soliton_ode_residual(SolitonParams(3, 0.5), g) < 1e-8

    def test_under_resolved_grid_is_detected(self):
        g = GridFunction(100.0, 64, np.zeros(64))
        assert soliton_ode_residual(SolitonParams(2, 1.0), g) > 1e-4
        assert not is_adequately_resolved(SolitonParams(2, 1.0), g)

    @pytest.mark.parametrize("p", [2, 3, 4])
    @pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
    def test_all_cells(self, p, c):
        g = GridFunction(160.0 / math.sqrt(c), 4096, np.zeros(4096))
        s = SolitonParams(p, c, 1.3)
        assert is_adequately_resolved(s, g)
        assert soliton_ode_residual(s, g) < 1e-8


class TestQuadrature:
    @pytest.mark.parametrize("p", [2, 3, 4])
    def test_against_beta_function(self, p):
        q = quadrature_constants(p)
        for k in (1, 2, 3):
            assert q.int_Q_power(k) == pytest.approx(beta_oracle(p, k), rel=1e-12)

    def test_quadratic_case_identities(self):
        q = quadrature_constants(2)
        assert abs(q.intQ - 6) < 1e-10
        assert abs(q.intQ2 - 6) < 1e-10
        assert abs(q.intQ3 - 36 / 5) < 1e-10
        assert abs(q.intQ - q.intQ2) < 1e-10
        assert abs(q.lambda_p - 8 / 5) < 1e-10

    def test_cubic_case_against_adaptive_quadrature(self):
        q = quadrature_constants(3)
        # even integrands: twice the half-line integral, truncated where Q^2 < 1e-30
        i2 = 2 * integrate.quad(lambda s: eval_Q(3, s) ** 2, 0, 40, epsabs=1e-15, limit=200)[0]
        i3 = 2 * integrate.quad(lambda s: eval_Q(3, s) ** 3, 0, 40, epsabs=1e-15, limit=200)[0]
        assert abs(q.intQ2 / q.intQ3 - i2 / i3) < 1e-10

    @pytest.mark.parametrize("p", [2, 3, 4])
    def test_lambda_relation(self, p):
        q = quadrature_constants(p)
        assert min(q.intQ, q.intQ2, q.intQ3, q.lambda_p) > 0
        assert q.lambda_p == pytest.approx(4 * (p - 1) / (5 - p) * q.intQ3 / q.intQ2, rel=1e-12)


class TestFunctionals:
    def test_zero(self):
        z = GridFunction(10.0, 64, np.zeros(64))
        assert mass(z) == 0 and energy(z, 2) == 0 and h1_norm(z) == 0

    def test_soliton_mass(self):
        g = soliton_grid(SolitonParams(2, 1.0), 100.0, 2048)
        assert mass(g) == pytest.approx(3.0, abs=1e-10)

    @pytest.mark.parametrize("p", [2, 3, 4])
    def test_energy_by_pohozaev(self, p):
        # E(Q) = -(5-p)/(2(p+3)) int Q^2 for the unit-speed soliton
        g = soliton_grid(SolitonParams(p, 1.0), 100.0, 2048)
        expected = -(5 - p) / (2 * (p + 3)) * quadrature_constants(p).intQ2
        assert energy(g, p) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("p", [2, 3, 4])
    def test_h1_norm_small_speed_scaling(self, p):
        theta = (5 - p) / (4 * (p - 1))
        cs = np.array([1e-4, 1e-3, 1e-2])
        norms = []
        for c in cs:
            length = 120.0 / math.sqrt(c)
            norms.append(h1_norm(soliton_grid(SolitonParams(p, c), length, 1 << 14)))
        slope = np.polyfit(np.log(cs), np.log(norms), 1)[0]
        assert slope == pytest.approx(theta, rel=0.05)
        ratios = np.array(norms) / cs**theta
        assert np.ptp(ratios) / ratios.min() < 0.01

    def test_h1_ratio_is_not_constant_up_to_unit_speed(self):
        # the derivative part scales with an extra sqrt(c): visible at c = 1
        p, theta = 2, 3 / 4
        r = [h1_norm(soliton_grid(SolitonParams(p, c), 120 / math.sqrt(c), 1 << 14)) / c**theta for c in (0.01, 1.0)]
        assert r[1] / r[0] > 1.05
