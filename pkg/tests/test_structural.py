import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from gradbound.coefficients import Box, CoefficientField
from gradbound.errors import InfeasibleExponentsError, InputDomainError
from gradbound.integrands import (
    default_h_profile,
    h_exp_sq,
    h_linear_minus_sqrt,
    h_quadratic,
    h_tlog,
    make_builtin,
)
from gradbound.structural import (
    PhiBranch,
    PhiFamily,
    SamplingPlan,
    StructuralParams,
    admissible_window_search,
    check_h_growth,
    check_main_assumptions,
    exponents,
    g_function,
    moser_schedule,
    phi_eval,
    sobolev_exponent,
    structural_rows,
)


# --- exponents -------------------------------------------------------------------

def test_sobolev_exponent():
    assert sobolev_exponent(3) == 6
    assert sobolev_exponent(4) == 4
    assert sobolev_exponent(2) == 10
    assert sobolev_exponent(2, 7) == 7
    with pytest.raises(InputDomainError):
        sobolev_exponent(2, 2)


def test_identity_theta_gives_unit_tau():
    assert exponents(3, 1, Fr(1, 2)).tau == 1


def test_exponent_gate_between_theta_values():
    ok = exponents(3, Fr(6, 5), Fr(2, 5))
    assert ok.tau == Fr(42, 25) and ok.two_star == 6
    assert ok.feasible
    assert ok.lhs_exponent == Fr(3, 25)  # (1 - 0.4 - 0.56) * 3 = 0.12
    bad = exponents(3, Fr(13, 10), Fr(2, 5))
    assert bad.tau == Fr(52, 25) and not bad.feasible


def test_rhs_exponent():
    e = exponents(2, 1, Fr(1, 2), epsilon=Fr(1, 10))
    assert e.rhs_exponent == Fr(21, 10)


@given(st.integers(2, 8), st.floats(1.0, 3.0), st.floats(0.0, 1.0))
def test_feasible_means_unit_interval_lhs(n, theta, u):
    beta = 1 / n + u / n
    assume(1 / n < beta < 2 / n)
    e = exponents(n, theta, beta)
    if e.feasible:
        assert 0 < e.lhs_exponent < 1


def test_params_violations():
    assert StructuralParams(1.0, 0.6, 1.2, n=3).violations() == []
    msgs = StructuralParams(1.0, 0.9, 1.2, n=3).violations()
    assert any("1/n < beta < 2/n" in m for m in msgs)
    with pytest.raises(InputDomainError):
        StructuralParams(1.0, 0.6, 2.0, n=3).validate()


# --- Moser schedule ----------------------------------------------------------------

def test_first_step_and_limit():
    s = moser_schedule(3, Fr(1, 2), 1, 0.25, 0.5, 5)
    assert s.gamma_seq[0] == 0.0
    assert s.gamma_seq[1] == 1.0
    assert s.limit_exponent == 0.5


def test_schedule_rejects_infeasible():
    with pytest.raises(InfeasibleExponentsError):
        moser_schedule(3, Fr(1, 2), 2, 0.25, 0.5, 5)
    with pytest.raises(InputDomainError):
        moser_schedule(3, Fr(1, 2), 1, 0.5, 0.25, 5)


@st.composite
def admissible(draw):
    n = draw(st.integers(2, 8))
    ts = sobolev_exponent(n)
    beta = Fr(1, n) + Fr(draw(st.integers(1, 99)), 100 * n)
    cap = (1 - beta) * ts / 2
    tau = 1 + (cap - 1) * Fr(draw(st.integers(0, 99)), 100)
    assume(tau < cap)
    return n, beta, tau


@given(admissible())
def test_recurrence_matches_closed_form(params):
    n, beta, tau = params
    s = moser_schedule(n, beta, tau, 0.25, 0.5, 40)
    np.testing.assert_allclose(s.gamma_seq[1:], s.gamma_closed[1:], rtol=1e-9)
    assert np.all(np.diff(s.radii) < 0) and s.radii[-1] > 0.25
    q = float(sobolev_exponent(n)) / 2
    gap = s.limit_exponent - s.k_seq
    expected = s.limit_exponent * q ** -(np.arange(len(gap)) + 1.0)
    np.testing.assert_allclose(gap, expected, rtol=1e-6, atol=1e-15)
    assert np.all(s.gamma_seq[1:] > 0)


@given(admissible())
def test_limit_is_dimension_times_c(params):
    n, beta, tau = params
    s = moser_schedule(n, beta, tau, 0.25, 0.5, 3)
    ts = sobolev_exponent(n)
    d = n if n >= 3 else Fr(ts) / (Fr(ts) / 2 - 1)
    assert s.limit_exponent == float((1 - beta - 2 * tau / ts) * d)


# --- Phi and G ----------------------------------------------------------------------

def test_phi_examples():
    phi, dphi = phi_eval(PhiFamily.of(2), 3.0)
    assert (float(phi), float(dphi)) == (4.0, 4.0)
    phi, _ = phi_eval(PhiFamily.of(0.5), 2.0)
    assert float(phi) == pytest.approx(2 ** -1.5, rel=1e-15)
    for g in (0.0, 0.5, 2.0, 7.5):
        assert phi_eval(PhiFamily.of(g), 0.5) == (0.0, 0.0)


def test_phi_family_branch():
    assert PhiFamily.of(1.0).branch is PhiBranch.QUADRATIC
    assert PhiFamily.of(1.5).branch is PhiBranch.POWER
    assert PhiFamily.of(3.0).c_phi == 8.0
    with pytest.raises(InputDomainError):
        PhiFamily.of(-1.0)


@given(st.floats(0, 10), st.floats(0, 1e3))
def test_phi_final_form(gamma, t):
    phi, dphi = phi_eval(PhiFamily.of(gamma), t)
    lhs, rhs = float(dphi) * t, (2 * gamma + 2) * (1 + float(phi))
    assert lhs - rhs <= 1e-12 * max(1.0, abs(rhs))


def test_g_function_examples():
    h = h_quadratic()
    assert g_function(h, PhiFamily.of(2), 3.0) == pytest.approx(3.0, abs=1e-10)
    assert g_function(h, PhiFamily.of(2), 1.0) == 1.0
    assert g_function(h_exp_sq(), PhiFamily.of(0.3), 0.2) == 1.0


def test_g_function_slow_growth_monotone_and_resolved():
    h = h_linear_minus_sqrt()
    fam = PhiFamily.of(0.0)
    ts = [1.5, 2.0, 4.0, 8.0, 16.0, 64.0]
    vals = [g_function(h, fam, t) for t in ts]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    fine = [g_function(h, fam, t, tol=1e-13) for t in ts]
    np.testing.assert_allclose(vals, fine, rtol=1e-8)


@given(st.floats(0, 6), st.floats(1.0, 20.0), st.floats(0.0, 5.0))
def test_g_nondecreasing_and_at_least_one(gamma, t, dt):
    h = h_tlog()
    fam = PhiFamily.of(gamma)
    a, b = g_function(h, fam, t), g_function(h, fam, t + dt)
    assert a >= 1.0 and b >= a - 1e-12


# --- main assumptions --------------------------------------------------------------

def test_slow_growth_certified_at_natural_theta():
    spec = make_builtin("LinearMinusSqrt", {"a": 1.0})
    rep = check_main_assumptions(spec, h_linear_minus_sqrt(), StructuralParams(1, Fr(7, 12), Fr(6, 5), n=3))
    assert rep.certified
    assert rep.entry("mixed").constant == 0.0


def test_exponential_theta_three_halves():
    spec = make_builtin("Exponential", {"a": 1.0})
    rep = check_main_assumptions(spec, h_exp_sq(), StructuralParams(1.5, 0.5, 1.2, n=3))
    assert rep.certified
    # sup of h'^(1 - theta) t^(theta - 1) sits at t = 1: (2e)^(-1/2)
    assert rep.entry("g_t upper").constant == pytest.approx((2 * math.e) ** -0.5, rel=1e-12)
    assert rep.entry("g_tt upper").constant == pytest.approx((6 * math.e) ** -0.5, rel=1e-12)
    a_m, theta = 1.0, 1.5
    assert rep.M_theta <= max(theta * (2 * a_m) ** (1 - theta), theta**2 * (2 * a_m) ** (1 - theta))


def test_x_independent_mixed_quotient_is_zero():
    spec = make_builtin("VariableExponent", {"p": 1.5})
    rep = check_main_assumptions(spec, default_h_profile(spec), StructuralParams(1, 0.7, 1.5))
    assert rep.entry("mixed").certified and rep.entry("mixed").quotient == 0.0


def test_lipschitz_coefficient_gives_positive_mixed_quotient():
    spec = make_builtin("Exponential", {"a": CoefficientField.affine(1.0, (0.5, 0.0))})
    rep = check_main_assumptions(spec, default_h_profile(spec), StructuralParams(1.5, 0.5, 1.2, n=3),
                                 SamplingPlan(grid_x=16, grid_t=32, quasi_random=2**10))
    assert rep.entry("mixed").constant > 0


def test_mismatched_t0_rejected():
    spec = make_builtin("Quadratic", {}, t0=2.0)
    with pytest.raises(InputDomainError):
        check_main_assumptions(spec, h_quadratic(), StructuralParams(1, 0.7, 1.5, t0=2.0))


def test_natural_theta_fails_for_exponential_against_wrong_profile():
    # e^{t^2} is not controlled by a quadratic profile with theta = 1
    spec = make_builtin("Exponential", {"a": 1.0})
    rep = check_main_assumptions(spec, h_quadratic(), StructuralParams(1, 0.5, 1.2, n=3))
    assert not rep.certified
    assert rep.failures()


# --- h growth ------------------------------------------------------------------------

def test_slow_growth_lower_bound_exactly_at_seven_twelfths():
    rep = check_h_growth(h_linear_minus_sqrt(), Fr(7, 12), Fr(6, 5), 1.0, 1e3, n=3)
    assert rep.certified
    below = check_h_growth(h_linear_minus_sqrt(), Fr(7, 12) - Fr(1, 100), Fr(6, 5), 1.0, 1e3, n=3)
    assert not below.entry("h lower").certified


def test_tlog_growth_in_the_plane():
    assert check_h_growth(h_tlog(), 0.6, 1.5, 1.0, 1e3, n=2).certified


def test_quadratic_growth_constants():
    rep = check_h_growth(h_quadratic(), 0.7, 1.5, 1.0, 1e3, n=2)
    assert rep.certified
    # h'' t^(2 beta) / 2 is smallest at t = 1; h'' / (1 + 1) = 1/2 everywhere
    assert rep.m_beta == pytest.approx(0.5, rel=1e-12)
    assert rep.M_alpha == pytest.approx(0.5, rel=1e-12)
    names = {e.name for e in rep.entries}
    assert {"h(0) = 0", "h' nondecreasing", "h'' >= 0", "K_m <= K_M"} <= names


def test_h_growth_rejects_bad_beta():
    with pytest.raises(InputDomainError):
        check_h_growth(h_quadratic(), 1.5, 1.5, 1.0, 1e3, n=2)


# --- window search ---------------------------------------------------------------------

@pytest.mark.parametrize("n, interval", [(2, "[3/4, 4/5)"), (3, "[7/12, 2/3)")])
def test_slow_growth_windows(n, interval):
    spec = make_builtin("LinearMinusSqrt", {"a": 1.0})
    w = admissible_window_search(spec, default_h_profile(spec), n)
    assert w.feasible and w.beta_interval() == interval
    assert w.beta_lo == Fr(1, 4) + Fr(1, n)
    p = w.params()
    assert p.violations() == []


def test_slow_growth_infeasible_in_four_dimensions():
    spec = make_builtin("LinearMinusSqrt", {"a": 1.0})
    w = admissible_window_search(spec, default_h_profile(spec), 4)
    assert not w.feasible
    assert w.failing.startswith("infeasible: beta window empty")
    with pytest.raises(InfeasibleExponentsError):
        w.params()


def test_exponential_window_in_three_dimensions():
    spec = make_builtin("Exponential", {"a": 1.0})
    w = admissible_window_search(spec, default_h_profile(spec), 3)
    assert w.feasible and w.fast_growth
    assert w.beta == Fr(1, 2)
    # (2 theta - 1) theta < (n - 3/2)/(n - 2) = 3/2
    assert w.theta_sup == pytest.approx((1 + math.sqrt(13)) / 4, rel=1e-12)
    assert (2 * w.theta_hi - 1) * w.theta_hi < 1.5


def test_structural_rows_flatten_reports():
    spec = make_builtin("Quadratic", {})
    main = check_main_assumptions(spec, h_quadratic(), StructuralParams(1, 0.7, 1.5))
    growth = check_h_growth(h_quadratic(), 0.7, 1.5, 1.0, 1e3)
    rows = structural_rows(main, growth)
    assert len(rows) == len(main.entries) + len(growth.entries)
    assert set(rows[0]) == {"name", "certified", "constant", "worst_x", "worst_t", "quotient"}
    assert all(r["certified"] == 1 for r in rows)


def test_subdomain_limits_sampling():
    spec = make_builtin("Exponential", {"a": CoefficientField.affine(1.0, (1.0, 0.0))})
    sub = Box((0.0, 0.0), (0.2, 1.0))
    rep = check_main_assumptions(spec, h_exp_sq(1.0), StructuralParams(1.5, 0.5, 1.2, n=3, subdomain=sub),
                                 SamplingPlan(grid_x=8, grid_t=16, quasi_random=2**8))
    worst = rep.entry("g_t lower").worst_x
    assert worst is not None and worst[0] <= 0.2 + 1e-12
