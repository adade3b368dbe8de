"""Shared builders for the test suite."""

from gradbound.coefficients import Box, CoefficientField
from gradbound.integrands import make_builtin

UNIT = Box.unit(2)


def constant_family_specs():
    """Every builtin family with constant coefficients, keyed by a short name."""
    return {
        "exponential": make_builtin("Exponential", {"a": 1.0, "b": 1.0}),
        "variable_exponent": make_builtin("VariableExponent", {"a": 1.0, "p": 1.5}),
        "orlicz_log": make_builtin("OrliczLog", {"a": 1.0, "p": 1.0}),
        "composed_tlog": make_builtin("ComposedH", {"a": 1.0, "b": 1.0, "profile": "tlog"}),
        "linear_minus_sqrt": make_builtin("LinearMinusSqrt", {"a": 1.0}),
        "quadratic": make_builtin("Quadratic", {"a": 1.0}),
    }


def varying_family_specs():
    """Every builtin family with x-dependent coefficients."""
    aff = CoefficientField.affine(1.0, (0.2, -0.1))
    per = CoefficientField.periodic(1.0, 0.2, (1.0, 0.5), 0.3)
    return {
        "exponential": make_builtin("Exponential", {"a": aff, "b": per}),
        "variable_exponent": make_builtin("VariableExponent", {"a": per, "p": CoefficientField.affine(1.6, (0.2, 0.1))}),
        "orlicz_log": make_builtin("OrliczLog", {"a": aff, "p": CoefficientField.affine(1.2, (0.1, 0.1))}),
        "composed_power": make_builtin("ComposedH", {"a": aff, "b": per, "profile": "power", "q": 3.0}),
        "composed_exp": make_builtin("ComposedH", {"a": CoefficientField.affine(0.8, (0.1, 0.1)), "b": per}),
        "linear_minus_sqrt": make_builtin("LinearMinusSqrt", {"a": per}),
        "quadratic": make_builtin("Quadratic", {"a": aff}),
    }
