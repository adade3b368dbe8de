import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gradbound.coefficients import Box, CoefficientField
from gradbound.errors import ConvexityError, InputDomainError, IntegrandRangeError
from gradbound.integrands import (
    Family,
    RegularizationClamp,
    clamp_regularize,
    default_h_profile,
    ellipticity_bounds,
    eval_all,
    h_exp_sq,
    h_linear_minus_sqrt,
    h_power,
    h_quadratic,
    h_tlog,
    hessian_quadratic_form,
    make_builtin,
)
from gradbound.structural import spec_representable_limit

from helpers import constant_family_specs, varying_family_specs

E = math.e
X = np.array([0.5, 0.5])


def one(spec, t, x=X):
    return eval_all(spec, x, np.float64(t))


# --- closed-form examples -------------------------------------------------

def test_exponential_value_and_slope_at_one():
    spec = make_builtin("Exponential", {"a": 1.0})
    v = one(spec, 1.0)
    assert float(v.g) == pytest.approx(1.7182818284590452, rel=1e-14)
    assert float(v.g_t) == pytest.approx(5.4365636569180905, rel=1e-14)


@pytest.mark.parametrize("name", list(constant_family_specs()))
def test_normalization_at_origin(name):
    spec = constant_family_specs()[name]
    v = eval_all(spec, np.random.default_rng(0).uniform(size=(20, 2)), np.zeros(20))
    assert np.all(v.g == 0.0) and np.all(v.g_t == 0.0)


def test_linear_minus_sqrt_at_four():
    spec = make_builtin("LinearMinusSqrt", {"a": 1.0})
    v = one(spec, 4.0)
    assert float(v.g_t) == pytest.approx(0.75, rel=1e-14)
    assert 4.0 * float(v.g_tt) == pytest.approx(0.125, rel=1e-14)
    assert min(float(v.g_t), 4.0 * float(v.g_tt)) == pytest.approx(0.125, rel=1e-14)


def test_ellipticity_bounds_examples():
    quad = make_builtin("Quadratic", {})
    lo, hi = ellipticity_bounds(quad, X, 3.0)
    assert (float(lo), float(hi)) == pytest.approx((1.0, 1.0))
    lms = make_builtin("LinearMinusSqrt", {"a": 1.0})
    lo, hi = ellipticity_bounds(lms, X, 4.0)
    # g_tt = a t^(-3/2) / 4 = 1/32 and g_t / t = (1 - 1/4) / 4 = 3/16
    assert float(lo) == pytest.approx(0.03125, rel=1e-14)
    assert float(hi) == pytest.approx(0.1875, rel=1e-14)
    expo = make_builtin("Exponential", {"a": 1.0})
    lo, hi = ellipticity_bounds(expo, X, 1.0)
    assert float(lo) == pytest.approx(2 * E, rel=1e-14)
    assert float(hi) == pytest.approx(6 * E, rel=1e-14)


def test_ellipticity_bounds_reject_zero():
    with pytest.raises(InputDomainError):
        ellipticity_bounds(make_builtin("Quadratic", {}), X, 0.0)


def test_hessian_form_examples(rng):
    quad = make_builtin("Quadratic", {})
    xi = rng.normal(size=(50, 2, 2))
    lam = rng.normal(size=(50, 2, 2))
    form = hessian_quadratic_form(quad, X, xi, lam)
    np.testing.assert_allclose(form, np.sum(lam * lam, axis=(1, 2)), rtol=1e-13)
    expo = make_builtin("Exponential", {"a": 1.0})
    t = np.sqrt(np.sum(xi * xi, axis=(1, 2)))
    radial = xi / t[:, None, None]
    np.testing.assert_allclose(hessian_quadratic_form(expo, X, xi, radial), one(expo, t).g_tt, rtol=1e-12)
    with pytest.raises(InputDomainError):
        hessian_quadratic_form(quad, X, np.zeros((2, 2)), lam[0])


def test_hessian_form_matches_dense_finite_differences(rng):
    spec = make_builtin("Exponential", {"a": 1.0})
    for _ in range(20):
        xi = rng.normal(size=(2, 2)) * 0.6
        lam = rng.normal(size=(2, 2))
        f = lambda z: float(one(spec, np.sqrt(np.sum(z * z))).g)
        eps = 1e-4
        flat = xi.ravel()
        H = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                ei, ej = np.eye(4)[i] * eps, np.eye(4)[j] * eps
                H[i, j] = (f((flat + ei + ej).reshape(2, 2)) - f((flat + ei - ej).reshape(2, 2))
                           - f((flat - ei + ej).reshape(2, 2)) + f((flat - ei - ej).reshape(2, 2))) / (4 * eps * eps)
        fd = lam.ravel() @ H @ lam.ravel()
        assert float(hessian_quadratic_form(spec, X, xi, lam)) == pytest.approx(fd, rel=1e-5)


# --- clamp -----------------------------------------------------------------

def test_clamp_inside_band_is_identity():
    quad = make_builtin("Quadratic", {})
    c = clamp_regularize(quad, RegularizationClamp(0.5, 2.0))
    t = np.linspace(0.0, 50.0, 101)
    a, b = one(quad, t), one(c, t)
    np.testing.assert_allclose(b.g, a.g, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(b.g_t, a.g_t, rtol=1e-12, atol=1e-14)


def test_constant_clamp_from_above():
    four = make_builtin("Quadratic", {"a": 4.0})
    c = clamp_regularize(four, RegularizationClamp(0.5, 2.0))
    t = np.linspace(0.0, 20.0, 41)
    v = one(c, t)
    np.testing.assert_allclose(v.g_tt, 2.0)
    np.testing.assert_allclose(v.g_t, 2.0 * t, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(v.g, t * t, rtol=1e-12, atol=1e-14)


def test_exponential_clamp_at_two():
    expo = make_builtin("Exponential", {"a": 1.0})
    raw = float(expo.raw(X, 2.0).g_tt)
    assert raw == pytest.approx(18 * math.exp(4.0), rel=1e-14)
    c = clamp_regularize(expo, RegularizationClamp(1e-3, 10.0))
    assert float(one(c, 2.0).g_tt) == 10.0


@pytest.mark.parametrize("name", list(varying_family_specs()))
def test_clamped_band_invariant(name, rng):
    spec = varying_family_specs()[name]
    cl = RegularizationClamp(0.05, 20.0)
    c = clamp_regularize(spec, cl)
    x = rng.uniform(size=(200, 2))
    t = np.exp(rng.uniform(math.log(1e-3), math.log(50.0), 200))
    v = one(c, t, x)
    assert np.all(v.g_tt >= cl.N) and np.all(v.g_tt <= cl.M)
    q = v.g_t / t
    assert np.all(q >= cl.N * (1 - 1e-12)) and np.all(q <= cl.M * (1 + 1e-12))


def test_clamp_validation():
    with pytest.raises(InputDomainError):
        RegularizationClamp(2.0, 1.0)
    with pytest.raises(InputDomainError):
        RegularizationClamp(0.0, 1.0)
    c = clamp_regularize(make_builtin("Quadratic", {}), RegularizationClamp(0.5, 2.0))
    with pytest.raises(InputDomainError):
        clamp_regularize(c, RegularizationClamp(0.5, 2.0))


# --- errors ----------------------------------------------------------------

def test_domain_errors():
    spec = make_builtin("Quadratic", {})
    with pytest.raises(InputDomainError):
        eval_all(spec, X, -1.0)
    with pytest.raises(InputDomainError):
        eval_all(spec, np.array([1.5, 0.5]), 1.0)


def test_exponential_overflow_is_range_error():
    with pytest.raises(IntegrandRangeError):
        eval_all(make_builtin("Exponential", {"a": 1.0}), X, 40.0)


def test_variable_exponent_rejects_p_at_most_one():
    with pytest.raises(InputDomainError):
        make_builtin("VariableExponent", {"p": CoefficientField.affine(1.0, (0.5, 0.0))})


def test_nonpositive_coefficient_rejected():
    with pytest.raises(InputDomainError):
        make_builtin("Exponential", {"a": CoefficientField.affine(-0.1, (1.0, 0.0))})


def test_unknown_family_and_parameter():
    with pytest.raises(InputDomainError):
        make_builtin("Cubic", {})
    with pytest.raises(InputDomainError):
        make_builtin("Quadratic", {"zeta": 1.0})


def test_family_aliases():
    assert Family.parse("LinearMinusSqrt") is Family.LINEAR_MINUS_SQRT
    assert Family.parse("exp") is Family.EXPONENTIAL


# --- invariants over many samples -------------------------------------------

@pytest.mark.parametrize("name", list(varying_family_specs()))
def test_monotone_convex_on_many_samples(name):
    spec = varying_family_specs()[name]
    rng = np.random.default_rng(7)
    T = spec_representable_limit(spec, spec.t_max, cap=1e250)
    count = 100_000
    x = rng.uniform(size=(count, 2))
    t = rng.uniform(0.0, T, count)
    t[:50] = 0.0
    v = eval_all(spec, x, t)
    assert np.all(v.g_tt >= -1e-12)
    assert np.all(v.g_t >= -1e-12)
    assert np.all(v.g[:50] == 0.0) and np.all(v.g_t[:50] == 0.0)


def _away_from_knots(spec, t):
    return np.all([np.abs(t - k) > 1e-2 for k in spec.knots], axis=0) if spec.knots else np.ones(t.shape, bool)


@pytest.mark.parametrize("name", list(varying_family_specs()))
def test_derivatives_match_finite_differences(name):
    spec = varying_family_specs()[name]
    rng = np.random.default_rng(3)
    x = rng.uniform(0.1, 0.9, size=(300, 2))
    T = min(spec_representable_limit(spec, spec.t_max, cap=1e100), 30.0)
    t = rng.uniform(0.05, T, 300)
    keep = _away_from_knots(spec, t)
    x, t = x[keep], t[keep]
    v = eval_all(spec, x, t)
    # step shrinks like 1/t beyond 1 so that exp(t^2) stays in its Taylor regime
    h = 1e-4 * np.minimum(t, 1.0 / np.maximum(t, 1.0))
    vp, vm = eval_all(spec, x, t + h), eval_all(spec, x, t - h)
    np.testing.assert_allclose(v.g_t, (vp.g - vm.g) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(v.g_tt, (vp.g_t - vm.g_t) / (2 * h), rtol=1e-6)
    e = 1e-5
    for k in range(2):
        d = np.zeros(2)
        d[k] = e
        fd = (eval_all(spec, x + d, t).g_t - eval_all(spec, x - d, t).g_t) / (2 * e)
        np.testing.assert_allclose(v.g_tx[:, k], fd, rtol=1e-6, atol=1e-9 * np.max(np.abs(v.g_t)))


@pytest.mark.parametrize("a", [0.5, 1.0, 1.9])
def test_linear_minus_sqrt_smoothing(a):
    spec = make_builtin("LinearMinusSqrt", {"a": a})
    left, right = one(spec, 1.0 - 1e-13), one(spec, 1.0)
    assert abs(float(left.g_t) - float(right.g_t)) <= 1e-12
    assert abs(float(left.g) - float(right.g)) <= 1e-12
    t = np.linspace(0.0, 1.0, 1001)
    v = one(spec, t)
    assert v.g_t[0] == 0.0
    assert np.all(v.g_tt >= 0.0)


def test_convexity_error_for_concave_text():
    from gradbound.dsl import to_integrand

    spec = to_integrand("sqrt(1 + t) - 1", extension="never")
    assert any("not convex" in w for w in spec.warnings)
    with pytest.raises(ConvexityError):
        from gradbound.integrands import assert_convex

        assert_convex(spec)


# --- comparison profiles -----------------------------------------------------

PROFILES = {
    "exp_sq": h_exp_sq(1.0),
    "power": h_power(1.5),
    "power_kappa": h_power(1.5, 1.0),
    "tlog": h_tlog(1.0),
    "quadratic": h_quadratic(),
    "linear_minus_sqrt": h_linear_minus_sqrt(),
}


@pytest.mark.parametrize("name", list(PROFILES))
def test_profile_invariants(name):
    h = PROFILES[name]
    t = np.geomspace(1e-3, 20.0 if h.exp_like else 1e4, 400)
    hv, d1, d2 = h.values(t)
    assert float(h.values(np.array([0.0]))[0][0]) == 0.0
    assert np.all(np.diff(d1) >= -1e-12 * np.abs(d1[1:]))
    assert np.all(d2 >= 0)
    big = t >= h.t0
    assert np.all(h.K_m(t[big]) <= h.K_M(t[big]))


@pytest.mark.parametrize("name", ["exp_sq", "power", "tlog", "quadratic"])
def test_profile_derivatives_match_finite_differences(name):
    h = PROFILES[name]
    t = np.linspace(1.1, 4.0, 40)
    e = 1e-5
    hp, hm = h.values(t + e), h.values(t - e)
    _, d1, d2 = h.values(t)
    np.testing.assert_allclose(d1, (hp[0] - hm[0]) / (2 * e), rtol=1e-7)
    np.testing.assert_allclose(d2, (hp[1] - hm[1]) / (2 * e), rtol=1e-7)


def test_tlog_second_derivative_at_two():
    assert float(h_tlog(1.0).values(np.array([2.0]))[2][0]) == pytest.approx(4.0 / 9.0, rel=1e-14)


def test_default_profiles_follow_family():
    specs = constant_family_specs()
    assert default_h_profile(specs["exponential"]).exp_like
    lms = default_h_profile(specs["linear_minus_sqrt"])
    _, d1, _ = lms.values(np.array([4.0]))
    assert float(d1[0]) == pytest.approx(0.75)


@given(st.floats(0.2, 3.0), st.floats(1e-3, 5.0))
def test_exponential_closed_form(a, t):
    spec = make_builtin("Exponential", {"a": a})
    v = one(spec, t)
    assert float(v.g) == pytest.approx(math.expm1(a * t * t), rel=1e-12)
    assert float(v.g_tt) == pytest.approx((2 * a + 4 * a * a * t * t) * math.exp(a * t * t), rel=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.01, 30.0))
def test_clamped_exponential_band(x1, x2, t):
    c = clamp_regularize(make_builtin("Exponential", {"a": 1.0}), RegularizationClamp(0.1, 50.0))
    v = one(c, t, np.array([x1, x2]))
    assert 0.1 <= float(v.g_tt) <= 50.0
    assert 0.1 * (1 - 1e-12) <= float(v.g_t) / t <= 50.0 * (1 + 1e-12)


def test_box_declared_by_spec():
    box = Box((-1.0, -1.0), (1.0, 1.0))
    spec = make_builtin("Quadratic", {}, box=box)
    assert float(eval_all(spec, np.array([-0.9, 0.9]), 2.0).g) == pytest.approx(2.0)


@pytest.mark.parametrize("name", ["exponential", "orlicz_log", "linear_minus_sqrt"])
def test_clamped_slope_matches_quadrature_of_clipped_curvature(name):
    from gradbound.quadrature import adaptive_simpson

    base = constant_family_specs()[name]
    clamp = RegularizationClamp(0.05, 8.0)
    spec = clamp_regularize(base, clamp)
    clipped = lambda s: float(np.clip(one(base, s).g_tt, clamp.N, clamp.M)) if s > 0 else float(
        np.clip(one(base, 1e-300).g_tt, clamp.N, clamp.M))
    for t in (0.3, 1.0, 2.5):
        g_t, _ = adaptive_simpson(clipped, 0.0, t, tol=1e-11)
        # g(t) = int_0^t (t - s) g~_tt(s) ds, since g and g_t vanish at 0
        g, _ = adaptive_simpson(lambda s: (t - s) * clipped(s), 0.0, t, tol=1e-11)
        v = one(spec, t)
        assert float(v.g_t) == pytest.approx(g_t, rel=1e-8, abs=1e-10)
        assert float(v.g) == pytest.approx(g, rel=1e-7, abs=1e-9)
