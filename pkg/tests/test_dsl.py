import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gradbound.coefficients import CoefficientField
from gradbound.dsl import (
    BinOp,
    Call,
    Coef,
    EvalDomainError,
    Num,
    ParseError,
    Var,
    coefficient_names,
    eval_dual2,
    parse,
    scalar_eval,
    to_integrand,
    to_text,
)
from gradbound.errors import InputDomainError
from gradbound.integrands import eval_all, make_builtin

from helpers import varying_family_specs

E = math.e
X = np.array([0.5, 0.5])


# --- parsing -----------------------------------------------------------------

def test_half_t_squared_shape():
    assert parse("t^2 / 2") == BinOp("/", BinOp("^", Var("t"), Num(2.0)), Num(2.0))


def test_coefficient_call_shape():
    e = parse("exp(a(x) * t^2) - 1")
    assert e == BinOp("-", Call("exp", (BinOp("*", Coef("a"), BinOp("^", Var("t"), Num(2.0))),)), Num(1.0))
    assert coefficient_names(e) == {"a"}


def test_trailing_operator_offset():
    with pytest.raises(ParseError) as info:
        parse("t +")
    assert info.value.offset == 3
    assert str(info.value).startswith("1:4:")


def test_power_is_right_associative_and_binds_tighter_than_minus():
    assert parse("2^3^2") == BinOp("^", Num(2.0), BinOp("^", Num(3.0), Num(2.0)))
    assert float(scalar_eval(parse("-t^2"), X, 3.0)) == -9.0


@pytest.mark.parametrize("bad", ["", "t *", "(t", "foo(t)", "t t", "exp()", "2..3", "abs(t)", "t $ 2"])
def test_syntax_errors(bad):
    with pytest.raises(ParseError):
        parse(bad)


def test_unbound_coefficient_rejected():
    with pytest.raises(InputDomainError):
        to_integrand("a(x) * t^2")


def test_log_domain_error():
    with pytest.raises(EvalDomainError):
        scalar_eval(parse("log(t - 5)"), X, 1.0)


# --- derivatives -------------------------------------------------------------

def test_polynomial_derivatives():
    d = eval_dual2(parse("t^2/2"), X, 3.0)
    assert (float(d.value), float(d.d_t), float(d.d_tt)) == (4.5, 3.0, 1.0)
    np.testing.assert_array_equal(d.d_xk_t, 0.0)


def test_exponential_derivatives_at_one():
    d = eval_dual2(parse("exp(t^2)-1"), X, 1.0)
    assert float(d.d_t) == pytest.approx(2 * E, rel=1e-14)
    assert float(d.d_tt) == pytest.approx(6 * E, rel=1e-14)


def test_mixed_derivative_of_product():
    a = CoefficientField.affine(1.0, (1.0, 0.0))
    d = eval_dual2(parse("a(x)*t"), X, 2.0, {"a": a})
    np.testing.assert_allclose(d.d_xk_t, [1.0, 0.0])
    np.testing.assert_allclose(d.d_x, [2.0, 0.0])


def test_spatial_variables():
    d = eval_dual2(parse("x1 * t^2 + sin(x2)"), np.array([0.3, 0.7]), 2.0)
    assert float(d.value) == pytest.approx(1.2 + math.sin(0.7))
    np.testing.assert_allclose(d.d_x, [4.0, math.cos(0.7)])
    np.testing.assert_allclose(d.d_xt, [4.0, 0.0])


EXPRESSIONS = [
    "exp(a(x)*t^2) - 1",
    "a(x)*(1 + t^2)^(p(x)/2)",
    "t^p(x)*log(1 + t)",
    "b(x)*sin(t)*cos(x1) + t/(1 + t)",
    "sqrt(1 + a(x)*t^2)",
    "abs_smooth(t - 1, 0.01)^3",
]


@pytest.mark.parametrize("text", EXPRESSIONS)
def test_dual_numbers_match_central_differences(text):
    coeffs = {
        "a": CoefficientField.affine(1.0, (0.3, -0.2)),
        "b": CoefficientField.periodic(1.0, 0.3, (1.0, 1.0), 0.2),
        "p": CoefficientField.affine(1.7, (0.1, 0.2)),
    }
    e = parse(text)
    rng = np.random.default_rng(11)
    x = rng.uniform(0.1, 0.9, size=(500, 2))
    t = rng.uniform(0.2, 2.5, 500)
    d = eval_dual2(e, x, t, coeffs)
    f = lambda xx, tt: scalar_eval(e, xx, tt, coeffs)
    h = 1e-4
    close(d.d_t, (f(x, t + h) - f(x, t - h)) / (2 * h))
    close(d.d_tt, (f(x, t + h) - 2 * f(x, t) + f(x, t - h)) / h**2)
    for k in range(2):
        dx = np.zeros(2)
        dx[k] = h
        close(d.d_x[:, k], (f(x + dx, t) - f(x - dx, t)) / (2 * h))
        gt = lambda xx: eval_dual2(e, xx, t, coeffs).d_t
        close(d.d_xt[:, k], (gt(x + dx) - gt(x - dx)) / (2 * h))


def close(actual, fd, tol=1e-6):
    """Relative error with a unit floor, so sign changes of the derivative do not divide by zero."""
    err = np.abs(actual - fd) / np.maximum(np.abs(fd), 1.0)
    assert np.max(err) <= tol, float(np.max(err))


# --- wrapping ------------------------------------------------------------------

def test_half_square_equals_builtin_quadratic():
    rng = np.random.default_rng(5)
    x = rng.uniform(size=(1000, 2))
    t = rng.uniform(0, 50, 1000)
    a = eval_all(to_integrand("t^2/2"), x, t)
    b = eval_all(make_builtin("Quadratic", {}), x, t)
    for f in ("g", "g_t", "g_tt"):
        assert np.max(np.abs(getattr(a, f) - getattr(b, f))) <= 1e-12


def test_t_log_one_plus_t():
    spec = to_integrand("t*log(1+t)")
    v = eval_all(spec, X, 2.0)
    assert float(v.g_tt) == pytest.approx(4.0 / 9.0, rel=1e-14)


def test_linear_minus_sqrt_text_is_smoothed():
    spec = to_integrand("t - sqrt(t)", t0=1.0)
    assert spec.knots == (1.0,)
    left, right = eval_all(spec, X, 1.0 - 1e-12), eval_all(spec, X, 1.0 + 1e-12)
    assert abs(float(left.g_t) - float(right.g_t)) <= 1e-9
    assert float(eval_all(spec, X, 0.0).g_t) == 0.0


@pytest.mark.parametrize("name", list(varying_family_specs()))
def test_text_of_each_builtin_reproduces_it(name):
    spec = varying_family_specs()[name]
    text_spec = to_integrand(spec.text, spec.coefficients, spec.t0, spec.box, spec.t_max)
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(1000, 2))
    T = 4.0 if spec.t_max <= 30 else 200.0
    t = rng.uniform(0, T, 1000)
    a, b = eval_all(spec, x, t), eval_all(text_spec, x, t)
    for f in ("g", "g_t", "g_tt"):
        u, v = getattr(a, f), getattr(b, f)
        assert np.all(np.abs(u - v) <= 1e-10 * np.maximum(np.abs(u), 1e-300) + 1e-14), f


# --- round trip on generated grammar --------------------------------------------

leaves = st.one_of(
    st.floats(0, 100, allow_nan=False).map(lambda v: Num(float(v))),
    st.sampled_from([Var("t"), Var("x1"), Var("x2"), Coef("a"), Coef("p")]),
)


def _tree(children):
    return st.one_of(
        st.builds(lambda o: BinOp("+", *o), st.tuples(children, children)),
        st.builds(lambda o: BinOp("-", *o), st.tuples(children, children)),
        st.builds(lambda o: BinOp("*", *o), st.tuples(children, children)),
        st.builds(lambda o: BinOp("/", *o), st.tuples(children, children)),
        st.builds(lambda o: BinOp("^", *o), st.tuples(children, children)),
        st.builds(lambda c: Call("exp", (c,)), children),
        st.builds(lambda c: Call("abs_smooth", (c,)), children),
        st.builds(lambda a, b: Call("abs_smooth", (a, b)), children, children),
        st.builds(lambda c: _neg(c), children),
    )


def _neg(c):
    from gradbound.dsl import Neg

    return Neg(c)


@given(st.recursive(leaves, _tree, max_leaves=12))
def test_print_parse_round_trip(ast):
    assert parse(to_text(ast)) == ast
