"""Integrand families g(x, t) with exact derivatives.

Every integrand is evaluated through a vectorized ``evaluator(x, t)`` where ``x``
has shape ``(..., n)`` and ``t`` has shape ``(...)``.  The evaluator returns an
:class:`IntegrandValues` with ``g``, ``g_t``, ``g_tt`` and the mixed/spatial
derivatives ``g_tx`` and ``g_x`` of shape ``(..., n)``.

Raw evaluators never raise on overflow; :meth:`IntegrandSpec.evaluate` performs
the domain and range checks.
"""

from __future__ import annotations

import enum
import hashlib
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy.stats import qmc

from .coefficients import Box, CoefficientField, as_field
from .errors import ConvexityError, InputDomainError, IntegrandRangeError

T_MAX_POLYNOMIAL = 1e3
T_MAX_EXPONENTIAL = 30.0


class Family(enum.Enum):
    EXPONENTIAL = "exponential"
    VARIABLE_EXPONENT = "variable_exponent"
    ORLICZ_LOG = "orlicz_log"
    COMPOSED_H = "composed_h"
    LINEAR_MINUS_SQRT = "linear_minus_sqrt"
    QUADRATIC = "quadratic"
    CUSTOM = "custom"

    @classmethod
    def parse(cls, name: str) -> "Family":
        key = name.strip().lower().replace("-", "_")
        aliases = {
            "exp": "exponential",
            "variableexponent": "variable_exponent",
            "orliczlog": "orlicz_log",
            "composedh": "composed_h",
            "linearminussqrt": "linear_minus_sqrt",
        }
        key = aliases.get(key, key)
        for fam in cls:
            if fam.value == key:
                return fam
        raise InputDomainError(f"unknown integrand family {name!r}")


@dataclass(frozen=True)
class IntegrandValues:
    g: np.ndarray
    g_t: np.ndarray
    g_tt: np.ndarray
    g_tx: np.ndarray
    g_x: np.ndarray

    def __getitem__(self, idx) -> "IntegrandValues":
        return IntegrandValues(self.g[idx], self.g_t[idx], self.g_tt[idx], self.g_tx[idx], self.g_x[idx])


Evaluator = Callable[[np.ndarray, np.ndarray], IntegrandValues]


@dataclass(frozen=True)
class RegularizationClamp:
    """Two-sided bounds N <= g_tt <= M used to regularize an integrand."""

    N: float
    M: float

    def __post_init__(self):
        if not (self.N > 0 and self.M > 0):
            raise InputDomainError(f"clamp bounds must be positive, got N={self.N}, M={self.M}")
        if not self.M > self.N:
            raise InputDomainError(f"clamp requires M > N, got N={self.N}, M={self.M}")


@dataclass(frozen=True, eq=False)
class IntegrandSpec:
    family: Family
    coefficients: Mapping[str, CoefficientField]
    t0: float
    evaluator: Evaluator
    box: Box
    t_max: float
    x_dependent: bool
    knots: tuple[float, ...] = ()
    params: Mapping[str, object] = field(default_factory=dict)
    clamp: RegularizationClamp | None = None
    warnings: tuple[str, ...] = ()
    text: str | None = None

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def label(self) -> str:
        base = self.family.value
        if self.clamp is not None:
            base += f"[N={self.clamp.N:g},M={self.clamp.M:g}]"
        return base

    def evaluate(self, x, t) -> IntegrandValues:
        """Evaluate with domain and range checks (see :func:`eval_all`)."""
        x, t = _broadcast(x, t, self.dim)
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise InputDomainError("t must be finite and nonnegative")
        inside = self.box.contains(x)
        if not np.all(inside):
            bad = x[~inside][0]
            raise InputDomainError(f"x={bad.tolist()} lies outside the declared box {self.box.lo}-{self.box.hi}")
        vals = self.evaluator(x, t)
        _check_range(vals, x, t)
        return vals

    def raw(self, x, t) -> IntegrandValues:
        """Evaluate without checks; non-representable values come back as inf/nan."""
        x, t = _broadcast(x, t, self.dim)
        return self.evaluator(x, t)


def _broadcast(x, t, dim: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if x.ndim == 0 or x.shape[-1] != dim:
        raise InputDomainError(f"x must have trailing dimension {dim}, got shape {x.shape}")
    shape = np.broadcast_shapes(x.shape[:-1], t.shape)
    return np.broadcast_to(x, shape + (dim,)), np.broadcast_to(t, shape)


def _check_range(vals: IntegrandValues, x: np.ndarray, t: np.ndarray) -> None:
    ok = np.isfinite(vals.g) & np.isfinite(vals.g_t)
    ok &= np.all(np.isfinite(vals.g_tx), axis=-1) & np.all(np.isfinite(vals.g_x), axis=-1)
    # g_tt may be +inf only at the origin (e.g. t^p with 1 < p < 2).
    ok &= np.isfinite(vals.g_tt) | ((t == 0) & (vals.g_tt == np.inf))
    if not np.all(ok):
        idx = np.argwhere(~ok)[0]
        idx = tuple(idx)
        raise IntegrandRangeError(
            f"integrand not representable at x={x[idx].tolist()}, t={float(t[idx])!r}"
        )


def eval_all(spec: IntegrandSpec, x, t) -> IntegrandValues:
    """Evaluate g, g_t, g_tt, g_tx at (x, t).

    Raises:
        InputDomainError: t < 0 or x outside the declared box.
        IntegrandRangeError: a value overflows double precision.
    """
    return spec.evaluate(x, t)


# ---------------------------------------------------------------------------
# Raw closed-form evaluators


def _values(shape, n, g, g_t, g_tt, g_tx, g_x) -> IntegrandValues:
    return IntegrandValues(
        np.broadcast_to(g, shape).astype(float),
        np.broadcast_to(g_t, shape).astype(float),
        np.broadcast_to(g_tt, shape).astype(float),
        np.broadcast_to(g_tx, shape + (n,)).astype(float),
        np.broadcast_to(g_x, shape + (n,)).astype(float),
    )


def _exponential(a: CoefficientField, b: CoefficientField) -> Evaluator:
    def ev(x, t):
        with np.errstate(all="ignore"):
            av, bv = a.value(x), b.value(x)
            ax, bx = a.gradient(x), b.gradient(x)
            s = av * t * t
            e = np.exp(s)
            g = bv * np.expm1(s)
            g_t = 2.0 * av * bv * t * e
            g_tt = 2.0 * av * bv * e * (1.0 + 2.0 * s)
            g_x = bx * np.expm1(s)[..., None] + (bv * t * t * e)[..., None] * ax
            g_tx = (2.0 * t * e)[..., None] * (ax * bv[..., None] + av[..., None] * bx + (av * bv * t * t)[..., None] * ax)
        return _values(t.shape, x.shape[-1], g, g_t, g_tt, g_tx, g_x)

    return ev


def _variable_exponent(a: CoefficientField, p: CoefficientField, kappa: float) -> Evaluator:
    def ev(x, t):
        with np.errstate(all="ignore"):
            av, pv = a.value(x), p.value(x)
            ax, px = a.gradient(x), p.gradient(x)
            if kappa > 0.0:
                s = kappa + t * t
                ls = np.log(s)
                sp = s ** (0.5 * pv)
                kp = kappa ** (0.5 * pv)
                g = av * (sp - kp)
                g_t = av * pv * t * sp / s
                g_tt = av * pv * sp / (s * s) * (kappa + (pv - 1.0) * t * t)
                dg_dp = 0.5 * av * (sp * ls - kp * np.log(kappa))
                g_x = (sp - kp)[..., None] * ax + dg_dp[..., None] * px
                g_tx = (t * sp / s)[..., None] * (ax * pv[..., None] + (av * (1.0 + 0.5 * pv * ls))[..., None] * px)
            else:
                pos = t > 0
                lt = np.where(pos, np.log(np.where(pos, t, 1.0)), 0.0)
                tp = t**pv
                tp1 = t ** (pv - 1.0)
                g = av * tp
                g_t = av * pv * tp1
                g_tt = av * pv * (pv - 1.0) * t ** (pv - 2.0)
                g_x = tp[..., None] * ax + (av * tp * lt)[..., None] * px
                g_tx = tp1[..., None] * ax * pv[..., None] + (av * tp1 * (1.0 + pv * lt))[..., None] * px
        return _values(t.shape, x.shape[-1], g, g_t, g_tt, g_tx, g_x)

    return ev


def _orlicz_log(a: CoefficientField, p: CoefficientField) -> Evaluator:
    def ev(x, t):
        with np.errstate(all="ignore"):
            av, pv = a.value(x), p.value(x)
            ax, px = a.gradient(x), p.gradient(x)
            pos = t > 0
            safe_t = np.where(pos, t, 1.0)
            lt = np.where(pos, np.log(safe_t), 0.0)
            L = np.log1p(t)
            L_over_t = np.where(pos, L / safe_t, 1.0)
            tp = t**pv
            tp1 = t ** (pv - 1.0)
            inner_t = pv * tp1 * L + tp / (1.0 + t)
            g = av * tp * L
            g_t = av * inner_t
            g_tt = av * (pv * (pv - 1.0) * tp1 * L_over_t + 2.0 * pv * tp1 / (1.0 + t) - tp / (1.0 + t) ** 2)
            g_x = (tp * L)[..., None] * ax + (av * tp * lt * L)[..., None] * px
            dgt_dp = tp1 * L * (1.0 + pv * lt) + tp * lt / (1.0 + t)
            g_tx = inner_t[..., None] * ax + (av * dgt_dp)[..., None] * px
        return _values(t.shape, x.shape[-1], g, g_t, g_tt, g_tx, g_x)

    return ev


def _composed(a: CoefficientField, b: CoefficientField, prof: "HProfile") -> Evaluator:
    def ev(x, t):
        with np.errstate(all="ignore"):
            av, bv = a.value(x), b.value(x)
            ax, bx = a.gradient(x), b.gradient(x)
            s = av * t
            h0, h1, h2 = prof.h(s), prof.dh(s), prof.d2h(s)
            g = bv * h0
            g_t = bv * av * h1
            g_tt = bv * av * av * h2
            g_x = h0[..., None] * bx + (bv * h1 * t)[..., None] * ax
            g_tx = h1[..., None] * (bx * av[..., None] + bv[..., None] * ax) + (bv * av * h2 * t)[..., None] * ax
        return _values(t.shape, x.shape[-1], g, g_t, g_tt, g_tx, g_x)

    return ev


def _linear_minus_sqrt_outer(a: CoefficientField) -> Evaluator:
    def ev(x, t):
        with np.errstate(all="ignore"):
            av, ax = a.value(x), a.gradient(x)
            r = np.sqrt(t)
            g = t - av * r
            g_t = 1.0 - 0.5 * av / r
            g_tt = 0.25 * av / (t * r)
            g_x = -r[..., None] * ax
            g_tx = (-0.5 / r)[..., None] * ax
        return _values(t.shape, x.shape[-1], g, g_t, g_tt, g_tx, g_x)

    return ev


def _quadratic(a: CoefficientField) -> Evaluator:
    def ev(x, t):
        av, ax = a.value(x), a.gradient(x)
        g = 0.5 * av * t * t
        return _values(t.shape, x.shape[-1], g, av * t, av, t[..., None] * ax, (0.5 * t * t)[..., None] * ax)

    return ev


# ---------------------------------------------------------------------------
# Convex C^1 extension below t0


def _cubic_coefficients(G, S, t0):
    c2 = (3.0 * G - S * t0) / t0**2
    c3 = (S * t0 - 2.0 * G) / t0**3
    return c2, c3


def choose_extension(outer: Evaluator, t0: float, xs: np.ndarray) -> str:
    """Return ``"cubic"`` if the matched cubic is convex on [0, t0] at every sample, else ``"quadratic"``."""
    t = np.full(xs.shape[:-1], t0)
    v = outer(xs, t)
    G, S = v.g, v.g_t
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(S))):
        raise IntegrandRangeError(f"outer profile not finite at the knot t0={t0}")
    if np.any(S < 0):
        raise ConvexityError(f"g_t(x, t0) < 0 at the knot t0={t0}; no increasing convex extension exists")
    c2, c3 = _cubic_coefficients(G, S, t0)
    tol = 1e-12 * np.maximum(1.0, np.abs(S) / t0)
    if np.all(2.0 * c2 >= -tol) and np.all(2.0 * c2 + 6.0 * c3 * t0 >= -tol):
        return "cubic"
    return "quadratic"


def smooth_below(outer: Evaluator, t0: float, mode: str) -> Evaluator:
    """Replace an evaluator on [0, t0) by a convex C^1 polynomial extension.

    ``cubic``: q(t) = c2 t^2 + c3 t^3 with value and slope matched at t0.
    ``quadratic``: q(t) = S t^2 / (2 t0) with slope matched at t0; the outer
    branch is shifted by the constant q(t0) - g(t0) so that g stays continuous.
    """

    def ev(x, t):
        x0 = np.broadcast_to(x, t.shape + (x.shape[-1],))
        knot = outer(x0, np.full(t.shape, t0))
        G, S, Gx, Sx = knot.g, knot.g_t, knot.g_x, knot.g_tx
        inner = t < t0
        out = outer(x0, np.where(inner, t0, t))
        if mode == "cubic":
            c2, c3 = _cubic_coefficients(G, S, t0)
            c2x, c3x = _cubic_coefficients(Gx, Sx, t0)
            shift, shift_x = 0.0, 0.0
        else:
            c2, c3 = S / (2.0 * t0), np.zeros_like(S)
            c2x, c3x = Sx / (2.0 * t0), np.zeros_like(Sx)
            shift = 0.5 * S * t0 - G
            shift_x = 0.5 * Sx * t0 - Gx
        tt = t[..., None]
        q = c2 * t * t + c3 * t**3
        q_t = 2.0 * c2 * t + 3.0 * c3 * t * t
        q_tt = 2.0 * c2 + 6.0 * c3 * t
        q_x = c2x * tt * tt + c3x * tt**3
        q_tx = 2.0 * c2x * tt + 3.0 * c3x * tt * tt
        ii = inner[..., None]
        return IntegrandValues(
            np.where(inner, q, out.g + shift),
            np.where(inner, q_t, out.g_t),
            np.where(inner, q_tt, out.g_tt),
            np.where(ii, q_tx, out.g_tx),
            np.where(ii, q_x, out.g_x + shift_x),
        )

    return ev


def normalized(ev: Evaluator) -> Evaluator:
    """Subtract g(x, 0) (and its x-gradient) so that g(x, 0) = 0."""

    def wrapped(x, t):
        v = ev(x, t)
        z = ev(np.broadcast_to(x, t.shape + (x.shape[-1],)), np.zeros(t.shape))
        g0 = np.where(np.isfinite(z.g), z.g, 0.0)
        gx0 = np.where(np.isfinite(z.g_x), z.g_x, 0.0)
        return replace(v, g=np.where(t == 0, 0.0, v.g - g0), g_x=np.where(t[..., None] == 0, 0.0, v.g_x - gx0))

    return wrapped


# ---------------------------------------------------------------------------
# Builtin construction


def box_samples(box: Box, count: int, seed: int = 0) -> np.ndarray:
    """Corners, center and scrambled Sobol points of a box, deterministic in ``seed``."""
    sob = qmc.Sobol(d=box.dim, scramble=True, seed=seed)
    m = max(1, int(np.ceil(np.log2(max(count, 2)))))
    pts = box.scale_unit(sob.random_base2(m)[:count])
    return np.concatenate([box.corners(), box.center[None, :], pts], axis=0)


def t_samples(t_hi: float, count: int, t_lo: float = 0.0) -> np.ndarray:
    """Linear samples near the origin plus log-spaced samples up to ``t_hi``."""
    lin = np.linspace(t_lo, min(t_hi, max(4.0, t_lo)), count // 2)
    geo = np.geomspace(max(t_lo, 1e-3), t_hi, count - count // 2)
    return np.unique(np.concatenate([lin, geo]))


def assert_convex(spec: IntegrandSpec, count: int = 64, nt: int = 200) -> None:
    """Sample g_tt on box x [0, T_max] and raise ConvexityError where it is negative."""
    xs = box_samples(spec.box, count)
    ts = t_samples(spec.t_max, nt)
    v = spec.raw(xs[:, None, :], ts[None, :])
    fin = np.isfinite(v.g_tt) & np.isfinite(v.g_t)
    scale = np.maximum(1.0, np.abs(np.where(fin, v.g_t, 0.0)) / np.maximum(ts, 1e-300))
    bad = fin & (v.g_tt < -1e-10 * scale)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise ConvexityError(
            f"g_tt = {v.g_tt[i, j]:.6g} < 0 at x={xs[i].tolist()}, t={ts[j]!r}"
        )


_FAMILY_TEXT = {
    Family.EXPONENTIAL: "b(x)*(exp(a(x)*t^2) - 1)",
    Family.ORLICZ_LOG: "a(x)*t^p(x)*log(1 + t)",
    Family.LINEAR_MINUS_SQRT: "t - a(x)*sqrt(t)",
    Family.QUADRATIC: "a(x)*t^2/2",
}


def make_builtin(
    family,
    params: Mapping[str, object] | None = None,
    t0: float = 1.0,
    box: Box | None = None,
    t_max: float | None = None,
) -> IntegrandSpec:
    """Build one of the builtin integrand families.

    Args:
        family: a :class:`Family` or its name.
        params: coefficient set.  Coefficients ``a``, ``b``, ``p`` accept numbers or
            :class:`CoefficientField`; ``kappa`` (VariableExponent, default 1) selects
            ``a((kappa + t^2)^{p/2} - kappa^{p/2})``; ``profile`` and ``q`` select the
            inner function of ComposedH (``exp_sq``, ``power``, ``tlog``, ``quadratic``).
        t0: smoothing threshold.
        box: declared domain of x (default unit square).
        t_max: upper sampling cut; defaults to 30 for exponential profiles and 1e3 otherwise.

    Raises:
        InputDomainError: coefficient positivity or exponent constraints fail.
        ConvexityError: the resulting profile has sampled g_tt < 0.
    """
    fam = family if isinstance(family, Family) else Family.parse(str(family))
    params = dict(params or {})
    box = box or Box.unit(2)
    if not t0 > 0:
        raise InputDomainError(f"t0 must be positive, got {t0}")
    a = as_field(params.pop("a", 1.0))
    b = as_field(params.pop("b", 1.0))
    default_p = {Family.VARIABLE_EXPONENT: 1.5, Family.ORLICZ_LOG: 1.0}.get(fam, 2.0)
    p = as_field(params.pop("p", default_p))
    kappa = float(params.pop("kappa", 1.0))
    profile = str(params.pop("profile", "exp_sq"))
    q = float(params.pop("q", 2.0))
    if params:
        raise InputDomainError(f"unknown parameters for {fam.value}: {sorted(params)}")

    def positive(name, fld):
        lo, _ = fld.bounds(box)
        if not lo > 0:
            raise InputDomainError(f"coefficient {name}(x) must be positive on the box (lower bound {lo:g})")

    coeffs: dict[str, CoefficientField] = {}
    extra: dict[str, object] = {}
    knots: tuple[float, ...] = ()
    exp_like = False
    text = _FAMILY_TEXT.get(fam)
    if fam is Family.EXPONENTIAL:
        positive("a", a)
        positive("b", b)
        coeffs = {"a": a, "b": b}
        ev = _exponential(a, b)
        exp_like = True
    elif fam is Family.VARIABLE_EXPONENT:
        positive("a", a)
        plo, _ = p.bounds(box)
        if not plo > 1:
            raise InputDomainError(f"p(x) must exceed 1 on the box (lower bound {plo:g})")
        if kappa < 0:
            raise InputDomainError("kappa must be nonnegative")
        coeffs = {"a": a, "p": p}
        extra["kappa"] = kappa
        ev = _variable_exponent(a, p, kappa)
        if kappa > 0:
            text = f"a(x)*(({kappa!r} + t^2)^(p(x)/2) - {kappa!r}^(p(x)/2))"
        else:
            text = "a(x)*t^p(x)"
    elif fam is Family.ORLICZ_LOG:
        positive("a", a)
        plo, _ = p.bounds(box)
        if plo < 1:
            raise InputDomainError(f"p(x) must be at least 1 on the box (lower bound {plo:g})")
        coeffs = {"a": a, "p": p}
        ev = _orlicz_log(a, p)
    elif fam is Family.COMPOSED_H:
        positive("a", a)
        positive("b", b)
        prof = profile_by_name(profile, q)
        coeffs = {"a": a, "b": b}
        extra["profile"] = profile
        if profile == "power":
            extra["q"] = q
        ev = _composed(a, b, prof)
        exp_like = profile == "exp_sq"
        text = {
            "exp_sq": "b(x)*(exp((a(x)*t)^2) - 1)",
            "power": f"b(x)*(a(x)*t)^{q!r}",
            "tlog": "b(x)*(a(x)*t)*log(1 + a(x)*t)",
            "quadratic": "b(x)*(a(x)*t)^2/2",
        }[profile]
    elif fam is Family.LINEAR_MINUS_SQRT:
        positive("a", a)
        coeffs = {"a": a}
        outer = _linear_minus_sqrt_outer(a)
        mode = choose_extension(outer, t0, box_samples(box, 256))
        extra["extension"] = mode
        ev = smooth_below(outer, t0, mode)
        knots = (t0,)
    elif fam is Family.QUADRATIC:
        positive("a", a)
        coeffs = {"a": a}
        ev = _quadratic(a)
    else:
        raise InputDomainError("custom integrands are built with dsl.to_integrand")

    if t_max is None:
        t_max = T_MAX_EXPONENTIAL if exp_like else T_MAX_POLYNOMIAL
    spec = IntegrandSpec(
        family=fam,
        coefficients=coeffs,
        t0=float(t0),
        evaluator=ev,
        box=box,
        t_max=float(t_max),
        x_dependent=not all(c.is_constant for c in coeffs.values()),
        knots=knots,
        params=extra,
        text=text,
    )
    assert_convex(spec)
    return spec


# ---------------------------------------------------------------------------
# Clamp regularization


class _ClampedEvaluator:
    """Evaluator of the clamped integrand.

    g~_tt = clip(g_tt, N, M).  For each x the half-line is split at the points
    where g_tt crosses N or M; on unclamped pieces the integrals of g~_tt are
    differences of the base g_t and g, on clamped pieces they are polynomials.
    The piece tables are built once per distinct x under a lock and then only read.
    """

    def __init__(self, base: IntegrandSpec, clamp: RegularizationClamp, t_cap: float):
        self.base = base.evaluator
        self.N, self.M = clamp.N, clamp.M
        self.n = base.dim
        self.x_dependent = base.x_dependent
        self.center = base.box.center
        grid = [
            np.array([0.0]),
            np.linspace(0.0, 4.0 * max(base.t0, 1.0), 400),
            np.geomspace(1e-6, t_cap, 1600),
            np.asarray(base.knots, dtype=float),
        ]
        self.tgrid = np.unique(np.concatenate(grid))
        self._lock = threading.Lock()
        self._row_of: dict[bytes, int] = {}
        self._rows: list[dict[str, np.ndarray]] = []
        self._stacked: dict[str, np.ndarray] | None = None
        self._map_cache: dict[bytes, np.ndarray] = {}

    # -- table construction -------------------------------------------------

    def _state(self, gtt):
        with np.errstate(invalid="ignore"):
            return np.where(~np.isfinite(gtt) | (gtt > self.M), 1, np.where(gtt < self.N, -1, 0))

    def _build_rows(self, xs: np.ndarray) -> list[dict[str, np.ndarray]]:
        rows = []
        for start in range(0, len(xs), 128):
            rows.extend(self._build_chunk(xs[start : start + 128]))
        return rows

    def _build_chunk(self, xs: np.ndarray) -> list[dict[str, np.ndarray]]:
        K, n = xs.shape
        tg = self.tgrid
        gtt = self.base(np.broadcast_to(xs[:, None, :], (K, len(tg), n)), np.broadcast_to(tg, (K, len(tg)))).g_tt
        st = self._state(gtt)
        change = np.argwhere(st[:, :-1] != st[:, 1:])
        # every state change gives one or two threshold crossings to locate
        r_idx, lo, hi, thr = [], [], [], []
        for r, k in change:
            s0, s1 = st[r, k], st[r, k + 1]
            lo_pair, hi_pair = min(s0, s1), max(s0, s1)
            if lo_pair == -1:  # passes through the lower bound N
                r_idx.append(r)
                lo.append(tg[k])
                hi.append(tg[k + 1])
                thr.append(self.N)
            if hi_pair == 1:  # passes through the upper bound M
                r_idx.append(r)
                lo.append(tg[k])
                hi.append(tg[k + 1])
                thr.append(self.M)
        cross = [[] for _ in range(K)]
        if r_idx:
            r_idx = np.asarray(r_idx)
            lo, hi, thr = np.asarray(lo), np.asarray(hi), np.asarray(thr)
            xr = xs[r_idx]

            def f(tv):
                v = self.base(xr, tv).g_tt
                with np.errstate(invalid="ignore"):
                    return np.where(np.isfinite(v), v - thr, np.inf)

            flo = f(lo)
            for _ in range(64):
                mid = 0.5 * (lo + hi)
                fm = f(mid)
                same = np.sign(fm) == np.sign(flo)
                lo = np.where(same, mid, lo)
                flo = np.where(same, fm, flo)
                hi = np.where(same, hi, mid)
            for r, c in zip(r_idx, 0.5 * (lo + hi)):
                cross[r].append(c)
        out = []
        for r in range(K):
            bps = np.unique(np.concatenate([[0.0], np.asarray(cross[r], dtype=float)]))
            out.append(self._row_tables(xs[r], bps))
        return out

    def _row_tables(self, x: np.ndarray, bps: np.ndarray) -> dict[str, np.ndarray]:
        P = len(bps)
        ends = np.append(bps[1:], bps[-1] + max(1.0, bps[-1]))
        mids = 0.5 * (bps + ends)
        xb = np.broadcast_to(x, (P, self.n))
        state = self._state(self.base(xb, mids).g_tt)
        at = self.base(xb, bps)
        Gt = np.zeros(P)
        G = np.zeros(P)
        GtX = np.zeros((P, self.n))
        GX = np.zeros((P, self.n))
        for j in range(P - 1):
            a, b = bps[j], bps[j + 1]
            d = b - a
            if state[j] == 0:
                Gt[j + 1] = Gt[j] + at.g_t[j + 1] - at.g_t[j]
                G[j + 1] = G[j] + Gt[j] * d + at.g[j + 1] - at.g[j] - at.g_t[j] * d
                GtX[j + 1] = GtX[j] + at.g_tx[j + 1] - at.g_tx[j]
                GX[j + 1] = GX[j] + GtX[j] * d + at.g_x[j + 1] - at.g_x[j] - at.g_tx[j] * d
            else:
                c = self.M if state[j] > 0 else self.N
                Gt[j + 1] = Gt[j] + c * d
                G[j + 1] = G[j] + Gt[j] * d + 0.5 * c * d * d
                GtX[j + 1] = GtX[j]
                GX[j + 1] = GX[j] + GtX[j] * d
        raw_ok = state == 0
        return {
            "bps": bps,
            "state": state,
            "Gt": Gt,
            "G": G,
            "GtX": GtX,
            "GX": GX,
            "rg": np.where(raw_ok, at.g, 0.0),
            "rgt": np.where(raw_ok, at.g_t, 0.0),
            "rgtx": np.where(raw_ok[:, None], at.g_tx, 0.0),
            "rgx": np.where(raw_ok[:, None], at.g_x, 0.0),
        }

    def _stack(self) -> dict[str, np.ndarray]:
        P = max(len(r["bps"]) for r in self._rows)
        K = len(self._rows)
        out = {
            "bps": np.full((K, P), np.inf),
            "state": np.zeros((K, P), dtype=int),
        }
        for key in ("Gt", "G", "rg", "rgt"):
            out[key] = np.zeros((K, P))
        for key in ("GtX", "GX", "rgtx", "rgx"):
            out[key] = np.zeros((K, P, self.n))
        for i, r in enumerate(self._rows):
            p = len(r["bps"])
            for key, arr in out.items():
                arr[i, :p] = r[key]
        return out

    def _rows_for(self, xf: np.ndarray) -> np.ndarray:
        if not self.x_dependent:
            if not self._rows:
                with self._lock:
                    if not self._rows:
                        self._rows.append(self._build_rows(self.center[None, :])[0])
                        self._stacked = self._stack()
            return np.zeros(len(xf), dtype=int)
        digest = hashlib.blake2b(np.ascontiguousarray(xf).tobytes(), digest_size=16).digest()
        cached = self._map_cache.get(digest)
        if cached is not None and len(cached) == len(xf):
            return cached
        keys = [row.tobytes() for row in np.ascontiguousarray(xf)]
        with self._lock:
            missing = {}
            for k, row in zip(keys, xf):
                if k not in self._row_of and k not in missing:
                    missing[k] = row
            if missing:
                built = self._build_rows(np.array(list(missing.values())))
                for k, tab in zip(missing, built):
                    self._row_of[k] = len(self._rows)
                    self._rows.append(tab)
                self._stacked = self._stack()
            rows = np.fromiter((self._row_of[k] for k in keys), dtype=int, count=len(keys))
            if len(self._map_cache) > 64:
                self._map_cache.clear()
            self._map_cache[digest] = rows
        return rows

    # -- evaluation -----------------------------------------------------------

    def __call__(self, x, t):
        shape = t.shape
        n = self.n
        xf = np.ascontiguousarray(x).reshape(-1, n)
        tf = np.ascontiguousarray(t).reshape(-1)
        rows = self._rows_for(xf)
        S = self._stacked
        bps = S["bps"][rows]
        j = np.sum(bps[:, 1:] <= tf[:, None], axis=1)
        idx = (rows, j)
        a = S["bps"][idx]
        st = S["state"][idx]
        d = tf - a
        Gt, G, GtX, GX = S["Gt"][idx], S["G"][idx], S["GtX"][idx], S["GX"][idx]
        c = np.where(st > 0, self.M, self.N)
        g_t = Gt + c * d
        g = G + Gt * d + 0.5 * c * d * d
        g_tt = c.astype(float)
        g_tx = GtX.copy()
        g_x = GX + GtX * d[:, None]
        free = st == 0
        if np.any(free):
            v = self.base(xf[free], tf[free])
            df = d[free]
            rg, rgt = S["rg"][idx][free], S["rgt"][idx][free]
            rgtx, rgx = S["rgtx"][idx][free], S["rgx"][idx][free]
            g_t[free] = Gt[free] + v.g_t - rgt
            g[free] = G[free] + Gt[free] * df + v.g - rg - rgt * df
            g_tt[free] = v.g_tt
            g_tx[free] = GtX[free] + v.g_tx - rgtx
            g_x[free] = GX[free] + GtX[free] * df[:, None] + v.g_x - rgx - rgtx * df[:, None]
        return IntegrandValues(
            g.reshape(shape), g_t.reshape(shape), g_tt.reshape(shape), g_tx.reshape(shape + (n,)), g_x.reshape(shape + (n,))
        )


def clamp_regularize(spec: IntegrandSpec, clamp: RegularizationClamp) -> IntegrandSpec:
    """Return the integrand with g_tt clipped to [N, M] and g_t, g re-integrated from 0.

    The clamped profile satisfies N <= g~_tt <= M and N <= g~_t / t <= M.
    """
    if spec.clamp is not None:
        raise InputDomainError("spec is already clamped; clamp the base spec instead")
    t_cap = max(spec.t_max, 1e6)
    ev = _ClampedEvaluator(spec, clamp, t_cap)
    return replace(spec, evaluator=ev, clamp=clamp, text=None)


# ---------------------------------------------------------------------------
# Ellipticity


def ellipticity_bounds(spec: IntegrandSpec, x, t) -> tuple[np.ndarray, np.ndarray]:
    """Return (H_m, H_M) = (min, max) of {g_tt, g_t / t}; t = 0 is rejected."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise InputDomainError("ellipticity bounds need t > 0")
    v = spec.evaluate(x, t)
    q = v.g_t / t
    return np.minimum(v.g_tt, q), np.maximum(v.g_tt, q)


def hessian_quadratic_form(spec: IntegrandSpec, x, xi, lam) -> np.ndarray:
    """Quadratic form of the Hessian of f(x, xi) = g(x, |xi|) in direction lam.

    Uses the rank-one plus isotropic split
    (g_tt - g_t/t) (xi : lam)^2 / t^2 + (g_t / t) |lam|^2 with t = |xi|.
    ``xi`` and ``lam`` have shape (..., m, n).
    """
    xi = np.asarray(xi, dtype=float)
    lam = np.asarray(lam, dtype=float)
    t = np.sqrt(np.sum(xi * xi, axis=(-2, -1)))
    if np.any(t == 0):
        raise InputDomainError("hessian form needs a nonzero xi")
    v = spec.evaluate(x, t)
    dot = np.sum(xi * lam, axis=(-2, -1))
    lam2 = np.sum(lam * lam, axis=(-2, -1))
    q = v.g_t / t
    return (v.g_tt - q) * dot * dot / (t * t) + q * lam2


# ---------------------------------------------------------------------------
# Comparison profiles h(t)


@dataclass(frozen=True, eq=False)
class HProfile:
    """One-dimensional comparison function h with h(0) = 0, h' nondecreasing."""

    h: Callable[[np.ndarray], np.ndarray]
    dh: Callable[[np.ndarray], np.ndarray]
    d2h: Callable[[np.ndarray], np.ndarray]
    t0: float = 1.0
    name: str = ""
    exp_like: bool = False
    joint: Callable[[np.ndarray], tuple] | None = None  # optional (h, h', h'') in one pass

    def _eval(self, fn, t):
        with np.errstate(all="ignore"):
            return fn(np.asarray(t, dtype=float))

    def K_M(self, t):
        t = np.asarray(t, dtype=float)
        return np.maximum(self._eval(self.d2h, t), self._eval(self.dh, t) / t)

    def K_m(self, t):
        t = np.asarray(t, dtype=float)
        return np.minimum(self._eval(self.d2h, t), self._eval(self.dh, t) / t)

    def values(self, t):
        if self.joint is not None:
            return self._eval(self.joint, t)
        return self._eval(self.h, t), self._eval(self.dh, t), self._eval(self.d2h, t)


def h_exp_sq(a: float = 1.0, t0: float = 1.0) -> HProfile:
    return HProfile(
        lambda t: np.expm1(a * t * t),
        lambda t: 2.0 * a * t * np.exp(a * t * t),
        lambda t: 2.0 * a * np.exp(a * t * t) * (1.0 + 2.0 * a * t * t),
        t0,
        f"exp({a!r} t^2) - 1",
        exp_like=True,
    )


def h_power(p: float, kappa: float = 0.0, t0: float = 1.0) -> HProfile:
    if kappa > 0:
        return HProfile(
            lambda t: (kappa + t * t) ** (0.5 * p) - kappa ** (0.5 * p),
            lambda t: p * t * (kappa + t * t) ** (0.5 * p - 1.0),
            lambda t: p * (kappa + t * t) ** (0.5 * p - 2.0) * (kappa + (p - 1.0) * t * t),
            t0,
            f"({kappa!r} + t^2)^({p!r}/2) - {kappa!r}^({p!r}/2)",
        )
    return HProfile(
        lambda t: t**p,
        lambda t: p * t ** (p - 1.0),
        lambda t: p * (p - 1.0) * t ** (p - 2.0),
        t0,
        f"t^{p!r}",
    )


def h_tlog(p: float = 1.0, t0: float = 1.0) -> HProfile:
    def d2(t):
        # t^(p-2) log(1+t) written as t^(p-1) (log(1+t)/t) to stay finite at t = 0
        ratio = np.where(t > 0, np.log1p(t) / np.where(t > 0, t, 1.0), 1.0)
        return p * (p - 1.0) * t ** (p - 1.0) * ratio + 2.0 * p * t ** (p - 1.0) / (1.0 + t) - t**p / (1.0 + t) ** 2

    return HProfile(
        lambda t: t**p * np.log1p(t),
        lambda t: p * t ** (p - 1.0) * np.log1p(t) + t**p / (1.0 + t),
        d2,
        t0,
        f"t^{p!r} log(1+t)",
    )


def h_quadratic(t0: float = 1.0) -> HProfile:
    return HProfile(lambda t: 0.5 * t * t, lambda t: t * 1.0, lambda t: np.ones_like(t), t0, "t^2/2")


def h_scaled(base: HProfile, a: float) -> HProfile:
    """The profile t -> base(a t)."""
    return HProfile(
        lambda t: base.h(a * t),
        lambda t: a * base.dh(a * t),
        lambda t: a * a * base.d2h(a * t),
        base.t0,
        f"{base.name} at ({a!r} t)",
        exp_like=base.exp_like,
    )


def h_from_spec(spec: IntegrandSpec, x=None) -> HProfile:
    """Freeze a spec at a point x and use t -> g(x, t) as comparison profile."""
    x0 = spec.box.center if x is None else np.asarray(x, dtype=float)

    def at(attr):
        return lambda t: getattr(spec.raw(x0, np.asarray(t, dtype=float)), attr)

    def joint(t):
        v = spec.raw(x0, np.asarray(t, dtype=float))
        return v.g, v.g_t, v.g_tt

    exp_like = spec.t_max <= T_MAX_EXPONENTIAL
    return HProfile(at("g"), at("g_t"), at("g_tt"), spec.t0, f"{spec.family.value} at x={x0.tolist()}", exp_like, joint)


def h_linear_minus_sqrt(t0: float = 1.0, box: Box | None = None) -> HProfile:
    """t - sqrt(t) above t0 (closed form, shifted to match) with the builtin smoothing below t0."""
    unit = make_builtin(Family.LINEAR_MINUS_SQRT, {"a": 1.0}, t0=t0, box=box)
    x0 = unit.box.center
    shift = float(unit.raw(x0, np.array(t0)).g) - (t0 - math.sqrt(t0))

    def joint(t):
        t = np.asarray(t, dtype=float)
        r = np.sqrt(np.maximum(t, t0))
        g, g1, g2 = r * r - r + shift, 1.0 - 0.5 / r, 0.25 / (r * r * r)
        low = t < t0
        if np.any(low):
            v = unit.raw(x0, t[low])
            g, g1, g2 = (np.array(a, dtype=float, copy=True) for a in (g, g1, g2))
            g[low], g1[low], g2[low] = v.g, v.g_t, v.g_tt
        return g, g1, g2

    return HProfile(
        lambda t: joint(t)[0], lambda t: joint(t)[1], lambda t: joint(t)[2], t0, "t - sqrt(t)", False, joint
    )


def profile_by_name(name: str, q: float = 2.0) -> HProfile:
    if name == "exp_sq":
        return h_exp_sq()
    if name == "power":
        if not q > 1:
            raise InputDomainError(f"power profile needs q > 1, got {q}")
        return h_power(q)
    if name == "tlog":
        return h_tlog()
    if name == "quadratic":
        return h_quadratic()
    raise InputDomainError(f"unknown profile {name!r}")


def default_h_profile(spec: IntegrandSpec, subdomain: Box | None = None) -> HProfile:
    """The comparison function naturally paired with a builtin family.

    Uses minima of the coefficients over the subdomain: e^{a_m t^2} - 1 for the
    exponential, the p_m-power for variable exponents, t^{p_m} log(1+t) for the
    Orlicz family, t - sqrt(t) (with the same extension below t0) for the slow
    growth family, and the frozen integrand otherwise.
    """
    sub = subdomain or spec.box
    fam, co, t0 = spec.family, spec.coefficients, spec.t0

    def lo(name):
        return co[name].bounds(sub)[0]

    if fam is Family.EXPONENTIAL:
        return h_exp_sq(lo("a"), t0)
    if fam is Family.VARIABLE_EXPONENT:
        return h_power(lo("p"), float(spec.params.get("kappa", 1.0)), t0)
    if fam is Family.ORLICZ_LOG:
        return h_tlog(lo("p"), t0)
    if fam is Family.QUADRATIC:
        return h_quadratic(t0)
    if fam is Family.COMPOSED_H:
        base = profile_by_name(str(spec.params["profile"]), float(spec.params.get("q", 2.0)))
        return replace(h_scaled(base, lo("a")), t0=t0)
    if fam is Family.LINEAR_MINUS_SQRT:
        return h_linear_minus_sqrt(t0, spec.box)
    return h_from_spec(spec)
