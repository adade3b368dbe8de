"""Adaptive Simpson quadrature."""

from __future__ import annotations

import math
from typing import Callable

from .errors import NumericError


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-10,
    max_depth: int = 60,
) -> tuple[float, float]:
    """Integrate a scalar function with adaptive Simpson and Richardson correction.

    The interval is bisected until the local error estimate |S2 - S1| / 15 falls
    below the tolerance share of the subinterval.  An explicit stack replaces
    recursion so that deep refinement near a kink cannot hit the interpreter limit.

    Args:
        f: integrand, called with Python floats.
        a: lower limit.
        b: upper limit.
        tol: absolute tolerance for the whole integral.
        max_depth: maximal number of bisections of any subinterval.

    Returns:
        (value, error_estimate).

    Raises:
        NumericError: if a subinterval reaches ``max_depth`` without meeting its
            tolerance, or if the integrand returns a non-finite value.
    """
    if a == b:
        return 0.0, 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0

    def call(x):
        y = float(f(x))
        if not math.isfinite(y):
            raise NumericError(f"integrand is not finite at s={x!r}")
        return y

    fa, fm, fb = call(a), call(0.5 * (a + b)), call(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    err = 0.0
    while stack:
        lo, hi, flo, fmid, fhi, s, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = call(lm), call(rm)
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        delta = left + right - s
        if abs(delta) <= 15.0 * eps or hi - lo <= 4.0 * math.ulp(max(abs(lo), abs(hi))):
            total += left + right + delta / 15.0
            err += abs(delta) / 15.0
            continue
        if depth >= max_depth:
            raise NumericError(
                f"adaptive Simpson did not converge on [{lo!r}, {hi!r}] "
                f"(local error {abs(delta) / 15.0:.3e} > {eps:.3e})"
            )
        stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
        stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
    return sign * total, err
