"""Closed forms: coefficient variance, joint law, divergence and convergence."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from airfl.aircomp import PowerConfig, compensation_lambda
from airfl.analysis import (
    ClosedFormReport,
    LearningConstants,
    closed_form_report,
    conditional_second_moment,
    convergence_bound,
    divergence_bound,
    divergence_exact,
    joint_cdf_xy,
    joint_pdf_xy,
    xi_mean_offset,
    xi_variance,
)

POWER = PowerConfig(p_max=0.1, sigma2=1e-7, g_bound=1.0, d_max_alpha=oracles.D500_POW_22)

gammas = st.floats(min_value=1e-3, max_value=10.0)
rhos = st.floats(min_value=0.05, max_value=0.999)


class TestXiVariance:
    def test_reference_values(self):
        assert abs(xi_variance(0.5, 0.8) - oracles.XI_VAR_G05_R08) < 1e-14
        assert abs(xi_variance(0.5, 1.0) - oracles.XI_VAR_G05_R1) < 1e-16

    def test_grid_against_oracle(self):
        for g in (0.01, 0.1, 0.5, 1.0, 2.0, 5.0):
            for r in (0.3, 0.5, 0.8, 0.95, 1.0):
                got = xi_variance(g, r)
                want = oracles.xi_variance_ref(g, r)
                assert abs(got - want) < 1e-13 * abs(want), (g, r)

    def test_perfect_csi_reduces_to_expm1(self):
        assert xi_variance(0.7, 1.0) == math.expm1(0.7)

    @given(gammas)
    def test_increasing_in_gamma_under_perfect_csi(self, g):
        # only rho = 1 is monotone; with CSI error the variance dips to an
        # interior minimum first, which is what threshold optimization exploits
        assert xi_variance(g * 1.5, 1.0) > xi_variance(g, 1.0)

    def test_interior_minimum_with_csi_error(self):
        v = [xi_variance(g, 0.5) for g in (0.01, 0.7, 8.0)]
        assert v[1] < v[0] and v[1] < v[2]

    @given(gammas, rhos)
    def test_positive(self, g, r):
        assert xi_variance(g, r) > 0.0

    @given(gammas, rhos)
    def test_decreasing_in_rho(self, g, r):
        assert xi_variance(g, r) > xi_variance(g, min(r * 1.2, 1.0))

    def test_rho_sweep_matches_reference_order(self):
        # fixed threshold, improving CSI shrinks the variance monotonically
        vals = [xi_variance(0.5, r) for r in (0.5, 0.7, 0.9, 1.0)]
        assert vals == sorted(vals, reverse=True)

    @pytest.mark.parametrize("g, r", [(0.0, 0.8), (-1.0, 0.8), (0.5, 0.0), (0.5, 1.5)])
    def test_rejects_bad_arguments(self, g, r):
        with pytest.raises(ValueError):
            xi_variance(g, r)


class TestOffsetAndConditionalMoment:
    def test_offset_formula(self):
        for g in (0.1, 0.5, 2.0):
            for r in (0.3, 0.8, 0.99):
                want = oracles.xi_mean_offset_ref(g, r)
                assert abs(xi_mean_offset(g, r) - want) < 1e-13 * max(abs(want), 1.0)

    def test_offset_undefined_at_perfect_csi(self):
        with pytest.raises(ValueError):
            xi_mean_offset(0.5, 1.0)

    def test_conditional_moment_reference(self):
        assert abs(conditional_second_moment(1.0, 0.0) - oracles.COND_M2_G1_C0) < 1e-15

    def test_conditional_moment_shifts_by_c_squared(self):
        base = conditional_second_moment(0.7, 0.0)
        assert abs(conditional_second_moment(0.7, 2.0) - (base + 4.0)) < 1e-14

    def test_variance_assembles_from_conditional_moment(self):
        # Var[xi] = e^-g lam^2 (1-rho^2) (E[(x-c)^2 | act] - c^2 + rho^2/(1-rho^2)) - 1
        # ties the three public pieces together for rho < 1
        for g in (0.1, 0.5, 1.5):
            for r in (0.4, 0.8, 0.95):
                lam = compensation_lambda(g, r)
                c = xi_mean_offset(g, r)
                x2 = conditional_second_moment(g, c) - c * c
                assembled = (
                    math.exp(-g) * lam * lam * (1 - r * r) * (x2 + r * r / (1 - r * r)) - 1.0
                )
                assert abs(assembled - xi_variance(g, r)) < 1e-12, (g, r)

    def test_rejects_nonfinite_c(self):
        with pytest.raises(ValueError):
            conditional_second_moment(0.5, math.inf)


class TestJointLaw:
    def test_cdf_matches_oracle_on_grid(self):
        for t in (-3.0, -0.7, 0.0, 0.4, 2.5):
            for g in (-4.0, -1.0, -0.1, 0.0, 2.0):
                got = joint_cdf_xy(t, g)
                want = oracles.joint_cdf_ref(t, g)
                assert abs(got - want) < 1e-13, (t, g)

    def test_nonnegative_gamma_is_the_x_marginal(self):
        t = 0.8
        want = 0.5 + t / (2.0 * math.sqrt(1.0 + t * t))
        assert joint_cdf_xy(t, 0.0) == want
        assert joint_cdf_xy(t, 50.0) == want

    def test_continuous_at_gamma_zero(self):
        assert abs(joint_cdf_xy(0.8, -1e-12) - joint_cdf_xy(0.8, 0.0)) < 1e-6

    def test_large_t_recovers_y_marginal(self):
        # F(t -> inf, g) = Pr{y < g} = e^g for g < 0
        for g in (-2.0, -0.5, -0.1):
            assert abs(joint_cdf_xy(60.0, g) - math.exp(g)) < 1e-10

    def test_x_marginal_saturates_slowly(self):
        # the x marginal has Cauchy-like tails: even at t = 50 about 1e-4 of
        # the mass is still outside, so the CDF sits measurably below 1
        val = joint_cdf_xy(50.0, 50.0)
        assert 0.999 < val < 1.0 - 1e-5

    @given(
        st.floats(min_value=-20.0, max_value=20.0),
        st.floats(min_value=-6.0, max_value=-1e-3),
    )
    def test_monotone_in_both_arguments(self, t, g):
        assert joint_cdf_xy(t + 0.5, g) >= joint_cdf_xy(t, g)
        assert joint_cdf_xy(t, g + (-g) / 2) >= joint_cdf_xy(t, g)

    def test_pdf_zero_outside_support(self):
        assert joint_pdf_xy(0.3, 0.0) == 0.0
        assert joint_pdf_xy(0.3, 1.0) == 0.0

    def test_pdf_matches_oracle(self):
        for t in (-2.0, 0.0, 1.3):
            for g in (-3.0, -0.5, -0.01):
                assert abs(joint_pdf_xy(t, g) - oracles.joint_pdf_ref(t, g)) < 1e-15

    def test_pdf_is_mixed_derivative_of_cdf(self):
        step = 1e-4
        for t, g in ((-1.0, -2.0), (0.5, -0.3), (2.0, -1.5)):
            fd = (
                joint_cdf_xy(t + step, g + step)
                - joint_cdf_xy(t - step, g + step)
                - joint_cdf_xy(t + step, g - step)
                + joint_cdf_xy(t - step, g - step)
            ) / (4.0 * step * step)
            assert abs(fd - joint_pdf_xy(t, g)) < 1e-6

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            joint_cdf_xy(math.nan, -1.0)
        with pytest.raises(ValueError):
            joint_pdf_xy(0.0, math.inf)


class TestDivergence:
    def test_bound_reference_value(self):
        got = divergence_bound(10, 0.5, 0.8, POWER)
        assert abs(got - oracles.DIV_BOUND_DEFAULTS_G1) < 1e-13 * oracles.DIV_BOUND_DEFAULTS_G1

    def test_bound_scales_as_inverse_k_squared(self):
        b10 = divergence_bound(10, 0.5, 0.8, POWER)
        b20 = divergence_bound(20, 0.5, 0.8, POWER)
        assert abs(b10 / b20 - 4.0) < 1e-12

    def test_bound_noise_floor_in_p_max(self):
        # P_max -> inf leaves only the CSI-error floor (G^2/K^2) Var[xi]
        rich = PowerConfig(p_max=1e12, sigma2=1e-7, g_bound=1.0, d_max_alpha=oracles.D500_POW_22)
        floor = xi_variance(0.5, 0.8) / 100.0
        assert abs(divergence_bound(10, 0.5, 0.8, rich) - floor) < 1e-12

    def test_exact_formula_by_hand(self):
        energies = [1.0, 4.0, 0.25]
        got = divergence_exact(energies, 3, 0.5, 0.8, POWER, d_model=7)
        from airfl.aircomp import scaling_zeta

        zeta = scaling_zeta(3, 0.8, POWER, 0.5)
        want = xi_variance(0.5, 0.8) * sum(energies) / 9 + 7 * 1e-7 / (2 * zeta * zeta)
        assert abs(got - want) < 1e-15 * want

    def test_exact_noise_term_scales_with_dimension(self):
        energies = [1.0] * 5
        d1 = divergence_exact(energies, 5, 0.5, 0.8, POWER, d_model=1)
        d11 = divergence_exact(energies, 5, 0.5, 0.8, POWER, d_model=11)
        from airfl.aircomp import scaling_zeta

        zeta = scaling_zeta(5, 0.8, POWER, 0.5)
        noise1 = 1e-7 / (2 * zeta * zeta)
        assert abs((d11 - d1) - 10 * noise1) < 1e-15

    def test_exact_validation(self):
        with pytest.raises(ValueError):
            divergence_exact([1.0, 2.0], 3, 0.5, 0.8, POWER, 4)
        with pytest.raises(ValueError):
            divergence_exact([1.0, -2.0], 2, 0.5, 0.8, POWER, 4)
        with pytest.raises(ValueError):
            divergence_exact([1.0], 1, 0.5, 0.8, POWER, 0)


class TestConvergence:
    def test_hand_example(self):
        lc = LearningConstants(
            lipschitz_l=1.0,
            eta=0.5,
            delta2=0.0,
            g_bound2=1.0,
            rounds_m=10,
            f0_minus_fstar=1.0,
        )
        # 1/(10 (0.5 - 0.125)) + 0.5/(2 - 0.5) = 4/15 + 5/15
        assert abs(convergence_bound(lc, 1.0) - 0.6) < 1e-15

    def test_more_rounds_tighten_the_first_term(self):
        kw = dict(lipschitz_l=1.0, eta=0.5, delta2=0.0, g_bound2=1.0, f0_minus_fstar=1.0)
        few = convergence_bound(LearningConstants(rounds_m=10, **kw), 0.5)
        many = convergence_bound(LearningConstants(rounds_m=1000, **kw), 0.5)
        assert many < few

    def test_eta_domain_enforced(self):
        with pytest.raises(ValueError):
            LearningConstants(
                lipschitz_l=1.0, eta=2.0, delta2=0.0, g_bound2=1.0, rounds_m=10, f0_minus_fstar=1.0
            )

    @pytest.mark.parametrize(
        "kw",
        [
            {"lipschitz_l": 0.0},
            {"delta2": -1.0},
            {"g_bound2": 0.0},
            {"rounds_m": 0},
            {"f0_minus_fstar": -0.1},
        ],
    )
    def test_rejects_bad_constants(self, kw):
        base = dict(
            lipschitz_l=1.0, eta=0.5, delta2=0.0, g_bound2=1.0, rounds_m=10, f0_minus_fstar=1.0
        )
        with pytest.raises(ValueError):
            LearningConstants(**{**base, **kw})

    def test_rejects_bad_delta2_total(self):
        lc = LearningConstants(
            lipschitz_l=1.0, eta=0.5, delta2=0.0, g_bound2=1.0, rounds_m=10, f0_minus_fstar=1.0
        )
        with pytest.raises(ValueError):
            convergence_bound(lc, -1.0)


class TestClosedFormReport:
    def test_consistent_with_parts(self):
        rep = closed_form_report(10, 0.5, 0.8, POWER, d_model=10)
        assert rep.lam == compensation_lambda(0.5, 0.8)
        assert rep.xi_var == xi_variance(0.5, 0.8)
        assert rep.divergence_bound == divergence_bound(10, 0.5, 0.8, POWER)
        assert rep.divergence_exact == divergence_exact(
            [1.0] * 10, 10, 0.5, 0.8, POWER, 10
        )
        assert rep.convergence_bound is None

    def test_exact_exceeds_bound_flag(self):
        # at the default geometry the exact expression (1/K scaling) sits
        # above the printed bound (1/K^2 scaling) once noise is small
        rep = closed_form_report(10, 0.5, 0.8, POWER, d_model=10)
        assert rep.exact_exceeds_bound == (rep.divergence_exact > rep.divergence_bound)
        assert rep.exact_exceeds_bound

    def test_scalar_noise_variant(self):
        rep = closed_form_report(10, 0.5, 0.8, POWER, d_model=10)
        assert rep.divergence_exact_scalar_noise == divergence_exact(
            [1.0] * 10, 10, 0.5, 0.8, POWER, 1
        )

    def test_with_learning_constants(self):
        lc = LearningConstants(
            lipschitz_l=1.0, eta=0.5, delta2=0.25, g_bound2=1.0, rounds_m=10, f0_minus_fstar=1.0
        )
        rep = closed_form_report(10, 0.5, 0.8, POWER, d_model=10, lc=lc)
        assert rep.convergence_bound == convergence_bound(lc, rep.divergence_exact + 0.25)
