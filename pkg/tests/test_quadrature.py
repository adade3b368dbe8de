import math

import pytest
from hypothesis import given, strategies as st

from gradbound.errors import NumericError
from gradbound.quadrature import adaptive_simpson


def test_polynomial_is_exact():
    val, err = adaptive_simpson(lambda s: 3 * s * s, 0.0, 2.0)
    assert val == pytest.approx(8.0, abs=1e-13)
    assert err <= 1e-10


def test_reversed_limits_flip_sign():
    a, _ = adaptive_simpson(math.exp, 0.0, 1.0)
    b, _ = adaptive_simpson(math.exp, 1.0, 0.0)
    assert a == pytest.approx(math.e - 1, rel=1e-12)
    assert b == pytest.approx(-a, rel=1e-15)


def test_empty_interval():
    assert adaptive_simpson(math.sin, 1.5, 1.5) == (0.0, 0.0)


def test_kinked_integrand():
    val, _ = adaptive_simpson(lambda s: abs(s - 0.3), 0.0, 1.0, tol=1e-12)
    assert val == pytest.approx(0.5 * 0.3**2 + 0.5 * 0.7**2, abs=1e-11)


def test_sqrt_singular_derivative():
    val, _ = adaptive_simpson(math.sqrt, 0.0, 1.0, tol=1e-10)
    assert val == pytest.approx(2.0 / 3.0, abs=1e-9)


def test_nonfinite_integrand_raises():
    with pytest.raises(NumericError):
        adaptive_simpson(lambda s: 1.0 / s if s > 0 else math.inf, 0.0, 1.0)


def test_depth_limit_raises():
    with pytest.raises(NumericError):
        adaptive_simpson(lambda s: math.sin(1.0 / s) if s > 0 else 0.0, 0.0, 1.0, tol=1e-14, max_depth=8)


@given(st.floats(-3, 3), st.floats(0.1, 4), st.integers(0, 6))
def test_monomials_match_antiderivative(a, width, k):
    b = a + width
    val, _ = adaptive_simpson(lambda s: s**k, a, b, tol=1e-11)
    exact = (b ** (k + 1) - a ** (k + 1)) / (k + 1)
    assert val == pytest.approx(exact, rel=1e-9, abs=1e-9)
