import math
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from nonlocal_fk import (
    DomainError,
    Field,
    Gaussian,
    Grid,
    InvalidRateFunction,
    build_kernel,
    cn_coefficients,
    decay_envelope,
    generating_function,
    k1_decay_check,
    logistic_closed_form,
    logistic_decay_rate,
    solve_logistic,
    solve_taylor_hierarchy,
    taylor_bound_check,
)
from nonlocal_fk.stability import fit_log_slope, generating_radius, logistic_rate_fn

# exact rational recursion values, computed once with sympy and frozen here
CN_B1_G2 = [0, 1, 2, 7, 41, 346, 3797, 51157, 816356, 15050581, 314726117, 7359554632, 190283748371]
CN_B1_G4 = [
    0, 1, Fraction(3, 2), Fraction(13, 4), Fraction(87, 8), Fraction(841, 16), Fraction(10683, 32),
    Fraction(167413, 64), Fraction(3113967, 128), Fraction(66991441, 256), Fraction(1635760563, 512),
    Fraction(44683635613, 1024), Fraction(1350018280647, 2048),
]
CN_B1_G1 = [0, 1, 3, 19, 207, 3211, 64383, 1581259, 45948927, 1541641771, 58645296063, 2494091717899, 117258952478847]


class TestEnvelope:
    def test_zero_rate_gives_constants(self):
        env = decay_envelope(-0.3, 0.7, lambda c, d: 0.0, 1.0, 5)
        assert np.all(env.c_seq == -0.3) and np.all(env.d_seq == 0.7)
        assert env.cross_bounds_ok

    def test_one_step_hand_value(self, params):
        env = decay_envelope(-0.5, 0.5, logistic_rate_fn(params), 1.0, 1)
        assert env.rates[0] == pytest.approx(0.5)
        assert env.c_seq[1] == pytest.approx(-0.5 * math.exp(-0.5), abs=1e-15)
        assert env.d_seq[1] == pytest.approx(0.30327, abs=1e-5)

    def test_long_run_rate(self, params):
        env = decay_envelope(-0.5, 0.5, logistic_rate_fn(params), 1.0, 40)
        n = np.arange(41)
        m = np.maximum(np.abs(env.c_seq), env.d_seq)
        assert np.all(m <= 0.5 * np.exp(-n * 0.5) * (1 + 1e-12))
        assert env.limit_rate() == pytest.approx(-params.beta, abs=1e-6)
        assert env.cross_bounds_ok
        assert env.to_dict()["p_at_origin"] == params.kappa_minus * params.theta

    def test_monotone_sequences(self, params):
        env = decay_envelope(-0.8, 2.0, logistic_rate_fn(params), 0.5, 30)
        assert np.all(np.diff(env.c_seq) >= 0) and np.all(np.diff(env.d_seq) <= 0)
        assert np.all(np.diff(env.rates) >= 0)

    def test_decreasing_rate_rejected(self):
        with pytest.raises(InvalidRateFunction):
            decay_envelope(-0.5, 0.5, lambda c, d: 1.0 - c, 1.0, 3)

    def test_negative_rate_rejected(self):
        with pytest.raises(InvalidRateFunction):
            decay_envelope(-0.5, 0.5, lambda c, d: -1.0, 1.0, 3)

    def test_sign_preconditions(self):
        with pytest.raises(DomainError):
            decay_envelope(0.1, 0.5, lambda c, d: 1.0, 1.0, 3)

    def test_bounds_interpolate_between_blocks(self, params):
        env = decay_envelope(-0.5, 0.5, logistic_rate_fn(params), 1.0, 3)
        lo, hi = env.bounds(np.array([0.0, 1.0, 1.5]))
        assert lo[1] == env.c_seq[1] and hi[1] == env.d_seq[1]
        assert hi[2] == pytest.approx(env.d_seq[1] * math.exp(-0.5 * env.rates[1]))


class TestDecayRate:
    def test_constant_data_slope_tends_to_minus_beta(self, grid64, params, kernel64):
        u = solve_logistic(Field.constant(grid64, 0.4), params, kernel64, kernel64, 12.0, 0.01, store_every=10)
        early = logistic_decay_rate(u, params, window=(1.0, 4.0))
        late = logistic_decay_rate(u, params, window=(8.0, 12.0))
        assert abs(late.slope + params.beta) < abs(early.slope + params.beta)
        assert late.slope == pytest.approx(-params.beta, abs=1e-3)

    def test_closed_form_slope_oracle(self, params):
        t = np.linspace(10, 20, 51)
        dev = params.theta - logistic_closed_form(0.4, params, t)
        assert fit_log_slope(t, dev, (10, 20)).slope == pytest.approx(-params.beta, abs=1e-3)

    def test_stationary(self, grid64, params, kernel64):
        u = solve_logistic(Field.constant(grid64, params.theta), params, kernel64, kernel64, 2.0, 0.01)
        fit = logistic_decay_rate(u, params)
        assert fit.status == "stationary" and fit.passed

    def test_generic_data_meets_rate(self, grid64, params, kernel64, J_theta64):
        u0 = Field.from_function(grid64, lambda x: 1 + 0.6 * np.cos(2 * np.pi * x / 20))
        u = solve_logistic(u0, params, kernel64, kernel64, 10.0, 0.01, store_every=10)
        fit = logistic_decay_rate(u, params, J_theta=J_theta64, u0=u0)
        assert fit.hypotheses == {"J_theta_nonneg": True, "u0_separated_from_zero": True}
        assert fit.passed

    def test_floor_truncates_window(self):
        t = np.linspace(0, 10, 11)
        norms = np.exp(-5 * t)
        fit = fit_log_slope(t, norms, (0, 10))
        assert fit.times[-1] < 7
        assert fit.slope == pytest.approx(-5.0)


class TestCoefficients:
    def test_first(self):
        assert cn_coefficients(1.0, 2.0, 1)[1] == 1.0

    @pytest.mark.parametrize("gamma,frozen", [(2.0, CN_B1_G2), (4.0, CN_B1_G4), (1.0, CN_B1_G1)])
    def test_frozen_exact_values(self, gamma, frozen):
        C = cn_coefficients(1.0, gamma, 12)
        for n in range(13):
            assert C[n] == pytest.approx(float(frozen[n]), rel=1e-14)

    def test_hand_values(self):
        C = cn_coefficients(1.0, 2.0, 3)
        assert C[2] == 2.0 and C[3] == 7.0

    def test_increasing(self):
        C = cn_coefficients(0.7, 1.3, 20)
        assert np.all(C[1:] >= 1) and np.all(np.diff(C[1:]) > 0)

    def test_domain(self):
        with pytest.raises(DomainError):
            cn_coefficients(1.0, 0.0, 3)
        with pytest.raises(DomainError):
            cn_coefficients(1.0, 1.0, 31)


class TestGeneratingFunction:
    def test_zero(self):
        assert generating_function(0.0, 1.0, 2.0) == 0.0

    def test_closed_form_value(self):
        # beta=1, gamma=4: H = 2 - sqrt(4 - 4 (e^x - 1)); radius ln 2
        assert generating_radius(1.0, 4.0) == pytest.approx(math.log(2.0))
        assert generating_function(0.5, 1.0, 4.0) == pytest.approx(0.814624566983318, abs=1e-14)

    @pytest.mark.parametrize("beta,gamma", [(1.0, 4.0), (1.0, 1.0), (0.5, 3.0)])
    def test_functional_identity(self, beta, gamma):
        for frac in (0.1, 0.5, 0.9):
            x = frac * generating_radius(beta, gamma)
            H = generating_function(x, beta, gamma)
            assert abs(H - (math.expm1(x) + beta / gamma * H * H)) < 1e-12

    def test_series_at_small_x(self):
        C = cn_coefficients(1.0, 2.0, 12)
        series = sum(C[n] * 0.1**n / math.factorial(n) for n in range(13))
        assert series == pytest.approx(generating_function(0.1, 1.0, 2.0), abs=1e-8)

    def test_taylor_coefficients_from_sympy(self):
        beta, gamma = 1, 4
        x = sp.symbols("x")
        H = sp.Rational(gamma, 2 * beta) - sp.sqrt(sp.Rational(gamma**2, 4 * beta**2) - (sp.exp(x) - 1) * sp.Rational(gamma, beta))
        poly = sp.series(H, x, 0, 11).removeO()
        C = cn_coefficients(beta, gamma, 10)
        for n in range(1, 11):
            coeff = float(poly.coeff(x, n))
            assert C[n] / math.factorial(n) == pytest.approx(coeff, rel=1e-12)

    def test_tail_bound_at_half_radius(self):
        beta, gamma = 1.0, 2.0
        x = 0.5 * generating_radius(beta, gamma)
        C = cn_coefficients(beta, gamma, 13)
        terms = C * x ** np.arange(14) / np.array([math.factorial(n) for n in range(14)])
        # coefficients behave like R^-n n^-3/2, so term ratios increase towards x/R
        ratio = x / generating_radius(beta, gamma)
        assert terms[13] / terms[12] < ratio
        gap = abs(terms[:13].sum() - generating_function(x, beta, gamma))
        assert gap <= terms[13] / (1 - ratio)

    def test_radius(self):
        with pytest.raises(DomainError, match="ln"):
            generating_function(math.log(2.0), 1.0, 4.0)


class TestTaylorBound:
    def test_lambda_zero(self, grid64, params, kernel64, J_theta64):
        u = solve_logistic(Field.constant(grid64, params.theta), params, kernel64, kernel64, 1.0, 0.01)
        rep = taylor_bound_check(u, Field.constant(grid64, 1.0), 0.0, params, params.gamma(J_theta64))
        assert rep.passed and np.all(rep.bound == 0.0)

    def test_constant_xi_against_closed_form(self, grid64, params, kernel64, J_theta64):
        gamma = params.gamma(J_theta64)
        lam = 0.2
        q0 = params.theta * math.exp(lam)
        u = solve_logistic(Field.constant(grid64, q0), params, kernel64, kernel64, 5.0, 0.01, store_every=10)
        rep = taylor_bound_check(u, Field.constant(grid64, 1.0), lam, params, gamma, solver_tol=1e-4)
        exact = np.abs(logistic_closed_form(q0, params, rep.times) - params.theta)
        assert np.all(exact <= rep.bound)
        assert rep.passed

    def test_generic_xi_at_half_radius(self, grid64, params, kernel64, J_theta64):
        gamma = params.gamma(J_theta64)
        assert abs(gamma - params.beta) < 1e-12
        xi = Field.from_function(grid64, lambda x: np.cos(2 * np.pi * x / 20) + 0.5 * np.sin(6 * np.pi * x / 20))
        lam = 0.5 * generating_radius(params.beta, gamma) / xi.sup_norm()
        u0 = Field(grid64, params.theta * np.exp(lam * xi.values))
        u = solve_logistic(u0, params, kernel64, kernel64, 10.0, 0.01, store_every=10)
        rep = taylor_bound_check(u, xi, lam, params, gamma, solver_tol=5e-4)
        assert rep.passed and rep.violations == []

    def test_outside_radius(self, grid64, params, kernel64):
        u = solve_logistic(Field.constant(grid64, 1.0), params, kernel64, kernel64, 0.1, 0.01)
        with pytest.raises(DomainError):
            taylor_bound_check(u, Field.constant(grid64, 1.0), 1.0, params, 1.0)


class TestK1:
    def test_constant_xi_equality(self, grid64, params, kernel64, J_theta64):
        gamma = params.gamma(J_theta64)
        ks = solve_taylor_hierarchy(Field.constant(grid64, 1.0), params, kernel64, kernel64, 1, 4.0, 0.01)
        rep = k1_decay_check(ks[1], gamma)
        assert rep.passed
        assert np.max(np.abs(rep.observed - rep.bound)) < 1e-10
        assert rep.info["fitted_slope"] == pytest.approx(-gamma, abs=1e-8)

    def test_spike_is_strict(self, grid64, params, kernel64, J_theta64):
        gamma = params.gamma(J_theta64)
        xi = Field(grid64, np.eye(1, 64, 20)[0])
        ks = solve_taylor_hierarchy(xi, params, kernel64, kernel64, 1, 2.0, 0.01, store_every=10)
        rep = k1_decay_check(ks[1], gamma)
        assert rep.passed
        assert np.all(rep.observed[1:] < rep.bound[1:])

    def test_zero_xi(self, grid64, params, kernel64):
        ks = solve_taylor_hierarchy(Field.constant(grid64, 0.0), params, kernel64, kernel64, 1, 1.0, 0.01)
        assert k1_decay_check(ks[1], 1.0).passed

    def test_distinct_kernels_decay_at_gamma(self, params):
        g = Grid(1, 20.0, 64)
        ap, am = build_kernel(Gaussian(1.5), g), build_kernel(Gaussian(1.0), g)
        from nonlocal_fk import combined_kernel

        J = combined_kernel(params, ap, am, params.theta)
        gamma = params.gamma(J)
        ks = solve_taylor_hierarchy(Field.constant(g, 1.0), params, ap, am, 1, 4.0, 0.01, store_every=20)
        rep = k1_decay_check(ks[1], gamma)
        assert rep.info["fitted_slope"] == pytest.approx(-gamma, abs=1e-8)
