"""Structural checks on integrands and exponent bookkeeping.

The growth conditions are certified on a sampled range: quotients such as
g_t / h' are evaluated on a sample of (x, t), their inf/sup become the measured
constants, and a quotient is refuted when it drifts under refinement of the
t-range (a factor 10 across the refinement levels) or when its log-log slope at
the far end of the representable range points to divergence.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .coefficients import Box
from .errors import InfeasibleExponentsError, InputDomainError
from .integrands import HProfile, IntegrandSpec, box_samples
from .quadrature import adaptive_simpson

DIVERGENCE_FACTOR = 10.0
TAIL_SLOPE_TOL = 1e-3
DEFAULT_TWO_STAR_2D = 10


def sobolev_exponent(n: int, two_star=None):
    """2n/(n-2) for n >= 3 (as a Fraction); the chosen stand-in (default 10) for n = 2."""
    if n < 2:
        raise InputDomainError(f"dimension must be at least 2, got {n}")
    if n >= 3:
        return Fraction(2 * n, n - 2)
    value = DEFAULT_TWO_STAR_2D if two_star is None else two_star
    if not value > 2:
        raise InputDomainError(f"the Sobolev stand-in for n = 2 must exceed 2, got {value}")
    return value


def _fmt(v) -> str:
    if isinstance(v, Fraction):
        return str(v)
    return f"{float(v):.6g}"


# ---------------------------------------------------------------------------
# Parameters and exponents


@dataclass(frozen=True)
class StructuralParams:
    theta: float
    beta: float
    alpha: float
    n: int = 2
    t0: float = 1.0
    subdomain: Box | None = None
    T_max: float | None = None
    two_star: float | None = None
    epsilon: float = 0.1

    @property
    def tau(self):
        return (2 * self.theta - 1) * self.theta

    @property
    def sobolev(self):
        return sobolev_exponent(self.n, self.two_star)

    def violations(self) -> list[str]:
        n, out = self.n, []
        if not (Fraction(1, n) < self.beta < Fraction(2, n)):
            out.append(f"beta = {_fmt(self.beta)} violates 1/n < beta < 2/n for n = {n}")
        if not (1 < self.alpha <= Fraction(n, n - 1)):
            out.append(f"alpha = {_fmt(self.alpha)} violates 1 < alpha <= n/(n-1) for n = {n}")
        if not self.theta >= 1:
            out.append(f"theta = {_fmt(self.theta)} must be at least 1")
        elif not self.tau < (1 - self.beta) * self.sobolev / 2:
            out.append(f"(2 theta - 1) theta = {_fmt(self.tau)} must be below (1 - beta) 2*/2 = {_fmt((1 - self.beta) * self.sobolev / 2)}")
        if not self.t0 > 0:
            out.append("t0 must be positive")
        if not self.epsilon > 0:
            out.append("epsilon must be positive")
        return out

    def validate(self) -> "StructuralParams":
        bad = self.violations()
        if bad:
            raise InputDomainError("; ".join(bad))
        return self


@dataclass(frozen=True)
class ExponentSet:
    tau: float
    two_star: float
    lhs_exponent: float
    rhs_exponent: float
    epsilon: float
    feasible: bool
    n: int
    theta: float
    beta: float


def exponents(n: int, theta, beta, epsilon=0.1, two_star=None) -> ExponentSet:
    """Exponent bookkeeping of the gradient bound.

    tau = (2 theta - 1) theta; lhs = (1 - beta - 2 tau / 2*) n; rhs = tau/(1 - beta) + epsilon.
    ``feasible`` requires theta >= 1, tau < (1 - beta) 2*/2 and 0 < lhs < 1 (the
    last condition is what beta > 1/n guarantees for n >= 3).  Arithmetic is
    exact when the inputs are Fractions.
    """
    ts = sobolev_exponent(n, two_star)
    tau = (2 * theta - 1) * theta
    lhs = (1 - beta - 2 * tau / ts) * n
    rhs = tau / (1 - beta) + epsilon if beta != 1 else math.inf
    feasible = bool(theta >= 1 and tau < (1 - beta) * ts / 2 and 0 < lhs < 1 and rhs > 1 and epsilon > 0)
    return ExponentSet(tau, ts, lhs, rhs, epsilon, feasible, n, theta, beta)


@dataclass(frozen=True)
class MoserSchedule:
    gamma_seq: np.ndarray
    gamma_closed: np.ndarray
    radii: np.ndarray
    k_seq: np.ndarray
    limit_exponent: float
    dimension_factor: float


def moser_schedule(n: int, beta, tau, rho_bar: float, R_bar: float, i_max: int, two_star=None) -> MoserSchedule:
    """Exponents and radii of the iteration.

    gamma_0 = 0, gamma_{i+1} = (2*/2)(gamma_i + 2) - (2 tau + 2* beta);
    closed form gamma_i = c [(2*/2)^i - 1] d with c = 1 - beta - 2 tau/2* and
    d = 2*/(2*/2 - 1), which equals n for n >= 3; radii rho_i = rho_bar + (R_bar - rho_bar)/2^i;
    k_i = c (1 - (2*/2)^{-(i+1)}) d so that gamma_{i+1} = k_i (2*/2)^{i+1}.
    """
    ts = sobolev_exponent(n, two_star)
    if not tau < (1 - beta) * ts / 2:
        raise InfeasibleExponentsError(f"tau = {_fmt(tau)} is not below (1 - beta) 2*/2 = {_fmt((1 - beta) * ts / 2)}")
    if not 0 < rho_bar < R_bar:
        raise InputDomainError("radii must satisfy 0 < rho_bar < R_bar")
    if i_max < 1:
        raise InputDomainError("i_max must be at least 1")
    if isinstance(ts, int):
        ts = Fraction(ts)
    q = ts / 2
    c = 1 - beta - 2 * tau / ts
    d = n if n >= 3 else ts / (q - 1)
    gam = [0.0]
    for _ in range(i_max):
        gam.append(float(q * (gam[-1] + 2) - (2 * tau + ts * beta)))
    qf = float(q)
    closed = np.array([float(c) * (qf**i - 1.0) * float(d) for i in range(i_max + 1)])
    radii = np.array([rho_bar + (R_bar - rho_bar) / 2.0**i for i in range(i_max + 1)])
    k = np.array([float(c) * (1.0 - qf ** (-(i + 1))) * float(d) for i in range(i_max)])
    return MoserSchedule(np.array(gam), closed, radii, k, float(c * d), float(d))


# ---------------------------------------------------------------------------
# Phi families and G


class PhiBranch(enum.Enum):
    POWER = "power"
    QUADRATIC = "quadratic"


@dataclass(frozen=True)
class PhiFamily:
    gamma: float
    branch: PhiBranch
    c_phi: float

    @classmethod
    def of(cls, gamma: float) -> "PhiFamily":
        if gamma < 0:
            raise InputDomainError(f"gamma must be nonnegative, got {gamma}")
        branch = PhiBranch.POWER if gamma > 1 else PhiBranch.QUADRATIC
        return cls(float(gamma), branch, 2.0 * gamma + 2.0)


def phi_values(branch: PhiBranch, gamma, t):
    """(Phi, Phi') for a branch, vectorized over both gamma and t."""
    gamma = np.asarray(gamma, dtype=float)
    t = np.asarray(t, dtype=float)
    above = t > 1
    s = np.where(above, t - 1.0, 0.0)
    tt = np.where(above, t, 1.0)
    with np.errstate(all="ignore"):
        if branch is PhiBranch.POWER:
            phi = s**gamma
            dphi = gamma * s ** (gamma - 1.0)
        else:
            phi = s * s * tt ** (gamma - 2.0)
            dphi = s * tt ** (gamma - 3.0) * (gamma * s + 2.0)
    return np.where(above, phi, 0.0), np.where(above, dphi, 0.0)


def phi_eval(fam: PhiFamily, t):
    """Return (Phi, Phi') at t; Phi vanishes on [0, 1].

    Power branch (gamma > 1): (t-1)^gamma.  Quadratic branch: (t-1)^2 t^(gamma-2).
    """
    return phi_values(fam.branch, fam.gamma, t)


def g_function(h: HProfile, fam: PhiFamily, t: float, tol: float = 1e-10) -> float:
    """G(t) = 1 + integral_0^t sqrt(Phi(s) K_m(s)) ds (adaptive Simpson)."""
    if t < 0:
        raise InputDomainError("t must be nonnegative")
    if t <= 1:
        return 1.0

    def integrand(s):
        phi, _ = phi_eval(fam, s)
        return math.sqrt(max(float(phi) * float(h.K_m(s)), 0.0))

    val, _ = adaptive_simpson(integrand, 1.0, float(t), tol=tol)
    return 1.0 + val


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class InequalityResult:
    name: str
    kind: str  # "lower" (constant is an inf) or "upper" (constant is a sup)
    certified: bool
    constant: float
    worst_x: tuple[float, ...] | None
    worst_t: float
    quotient: float
    reason: str = ""
    level_values: tuple[float, ...] = ()
    tail_slope: float = 0.0


@dataclass(frozen=True)
class AssumptionReport:
    entries: tuple[InequalityResult, ...]
    t_range: tuple[float, float]
    samples: int
    params: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return all(e.certified for e in self.entries)

    def entry(self, name: str) -> InequalityResult:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def _const(self, names, reducer):
        vals = [e.constant for e in self.entries if e.name in names]
        return reducer(vals) if vals else math.nan

    @property
    def m(self) -> float:
        return self._const(("g_t lower", "g_tt lower"), min)

    @property
    def M_theta(self) -> float:
        return self._const(("g_t upper", "g_tt upper", "mixed"), max)

    @property
    def m_beta(self) -> float:
        return self._const(("h lower",), min)

    @property
    def M_alpha(self) -> float:
        return self._const(("h upper",), max)

    def failures(self) -> list[InequalityResult]:
        return [e for e in self.entries if not e.certified]


def _log_quotient(num, den_log):
    with np.errstate(all="ignore"):
        return np.exp(np.log(num) - den_log)


def _judge(name, kind, q, t, x, levels, tail_slope) -> InequalityResult:
    """Turn sampled quotients into a certification verdict."""
    q = np.asarray(q, dtype=float)
    finite = np.isfinite(q)
    reason = ""
    if not np.all(finite):
        i = int(np.argmax(~finite))
        return InequalityResult(name, kind, False, math.nan, None if x is None else tuple(map(float, x[i])),
                                float(t[i]), float(q[i]), "quotient not finite on sampled range")
    if kind == "upper":
        i = int(np.argmax(q))
        lv = tuple(float(np.max(q[t <= T])) if np.any(t <= T) else 0.0 for T in levels)
        const = float(q[i])
        ok = True
        if lv and lv[0] > 0 and lv[-1] > DIVERGENCE_FACTOR * lv[0]:
            ok, reason = False, "not certifiable on sampled range: sup grows by more than x10 under refinement"
        elif lv and lv[0] == 0 and lv[-1] > 0:
            ok, reason = False, "not certifiable on sampled range: sup appears only under refinement"
        elif tail_slope > TAIL_SLOPE_TOL:
            ok, reason = False, f"not certifiable: quotient grows at the far end (log-log slope {tail_slope:.3g})"
    else:
        i = int(np.argmin(q))
        lv = tuple(float(np.min(q[t <= T])) if np.any(t <= T) else math.inf for T in levels)
        const = float(q[i])
        ok = True
        if not const > 0:
            ok, reason = False, "lower quotient reaches 0 on sampled range"
        elif lv and lv[0] > DIVERGENCE_FACTOR * lv[-1]:
            ok, reason = False, "not certifiable on sampled range: inf drops by more than x10 under refinement"
        elif tail_slope < -TAIL_SLOPE_TOL:
            ok, reason = False, f"not certifiable: quotient decays at the far end (log-log slope {tail_slope:.3g})"
    return InequalityResult(
        name, kind, ok, const, None if x is None else tuple(map(float, x[i])), float(t[i]), float(q[i]),
        reason, lv, float(tail_slope),
    )


def _slope(q_lo, q_hi, t_lo, t_hi, kind):
    """Worst-case log-log slope between two t values (vectorized over x)."""
    with np.errstate(all="ignore"):
        both_zero = (q_lo == 0) & (q_hi == 0)
        s = (np.log(q_hi) - np.log(q_lo)) / (math.log(t_hi) - math.log(t_lo))
    s = np.where(both_zero, 0.0, s)
    s = np.where(np.isnan(s), 0.0, s)
    if kind == "upper":
        return float(np.max(s))
    return float(np.min(s))


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class SamplingPlan:
    grid_x: int = 64
    grid_t: int = 64
    quasi_random: int = 2**14
    seed: int = 0


def _finite_values(v) -> np.ndarray:
    ok = np.isfinite(v.g) & np.isfinite(v.g_t) & np.isfinite(v.g_tt)
    return ok & np.all(np.isfinite(v.g_tx), axis=-1)


def representable_limit(fn, t_lo: float, t_hi: float) -> float:
    """Largest t in [t_lo, t_hi] (up to 0.1% bisection accuracy) where ``fn(t)`` is True."""
    if fn(t_hi):
        return t_hi
    lo, hi = t_lo, t_hi
    if not fn(lo):
        return lo
    while hi / lo > 1.001:
        mid = math.sqrt(lo * hi)
        if fn(mid):
            lo = mid
        else:
            hi = mid
    return lo


def spec_representable_limit(spec: IntegrandSpec, t_hi: float, t_lo: float = 1e-3, cap: float = math.inf) -> float:
    """Largest t <= t_hi at which the integrand is finite (and below ``cap``) on the box corners and center."""
    pts = np.vstack([spec.box.corners(), spec.box.center[None, :]])

    def ok(t):
        v = spec.raw(pts, np.full(len(pts), t))
        return bool(np.all(_finite_values(v)) and np.all(np.abs(v.g_tt) < cap) and np.all(np.abs(v.g) < cap))

    return representable_limit(ok, t_lo, t_hi)


def _h_ok(h: HProfile):
    def ok(t):
        hv, d1, d2 = h.values(np.array([t]))
        return bool(np.isfinite(hv[0]) and np.isfinite(d1[0]) and np.isfinite(d2[0]) and d1[0] > 0 and d2[0] > 0)

    return ok


def _far_limit(ok, t_start: float, exp_like: bool) -> float:
    """Far end for the tail probe: up to 1e100 for power-type growth."""
    if exp_like:
        return t_start
    k_hi = 100
    T = t_start
    for k in range(int(math.ceil(math.log10(max(t_start, 1.0)))), k_hi + 1):
        if ok(10.0**k):
            T = max(T, 10.0**k)
        else:
            break
    return T


@dataclass
class _MainSample:
    x: np.ndarray
    t: np.ndarray
    g_t: np.ndarray
    g_tt: np.ndarray
    g_tx: np.ndarray
    dh: np.ndarray
    d2h: np.ndarray
    tail: tuple  # (probe x, t_lo, t_hi, values at t_lo, values at t_hi, h at t_lo, h at t_hi)
    t_range: tuple[float, float]
    levels: tuple[float, ...]


def _main_sample(spec: IntegrandSpec, h: HProfile, sub: Box, t0: float, T_max: float, plan: SamplingPlan) -> _MainSample:
    probe = box_samples(sub, plan.grid_x - 2 ** sub.dim - 1 if plan.grid_x > 2 ** sub.dim + 1 else 1, plan.seed)

    def ok(t):
        v = spec.raw(probe, np.full(len(probe), t))
        hv = h.values(np.array([t]))
        return bool(np.all(_finite_values(v)) and all(np.isfinite(a[0]) for a in hv))

    T = representable_limit(ok, t0, T_max)
    if T <= t0 * 1.01:
        raise InputDomainError(f"integrand or profile not representable beyond t0 = {t0}")
    ts = t0 * (T / t0) ** np.linspace(0.0, 1.0, plan.grid_t)
    xg = np.repeat(probe, len(ts), axis=0)
    tg = np.tile(ts, len(probe))
    sob = qmc.Sobol(d=sub.dim + 1, scramble=True, seed=plan.seed)
    u = sob.random_base2(max(1, int(round(math.log2(max(plan.quasi_random, 2))))))[: plan.quasi_random]
    ut = 0.5 * (1.0 - np.cos(np.pi * u[:, -1]))  # denser near both ends of the t-range
    xq = sub.scale_unit(u[:, :-1])
    tq = t0 * (T / t0) ** ut
    x = np.concatenate([xg, xq])
    t = np.concatenate([tg, tq])
    v = spec.raw(x, t)
    _, d1, d2 = h.values(t)
    far_ok = lambda tt: ok(tt)
    T_far = _far_limit(far_ok, T, h.exp_like or spec.t_max <= 30.0)
    t_lo = max(t0, T_far / 100.0) if T_far > 100 * t0 else max(t0, T_far / 10.0)
    tail_vals = (spec.raw(probe, np.full(len(probe), t_lo)), spec.raw(probe, np.full(len(probe), T_far)))
    tail_h = (h.values(np.array([t_lo])), h.values(np.array([T_far])))
    levels = tuple(t0 * (T / t0) ** (k / 3.0) for k in (1, 2, 3))
    return _MainSample(x, t, v.g_t, v.g_tt, v.g_tx, d1, d2, (probe, t_lo, T_far, tail_vals, tail_h), (t0, T), levels)


def _main_quotients(theta, t, g_t, g_tt, g_tx, dh, d2h):
    with np.errstate(all="ignore"):
        lt = np.log(t)
        mixed_num = np.max(np.abs(g_tx), axis=-1)
        mixed_den = np.minimum(g_t, t * g_tt)
        return {
            "g_t lower": _log_quotient(g_t, np.log(dh)),
            "g_t upper": _log_quotient(g_t, theta * np.log(dh) + (1.0 - theta) * lt),
            "g_tt lower": _log_quotient(g_tt, np.log(d2h)),
            "g_tt upper": _log_quotient(g_tt, theta * np.log(d2h)),
            "mixed": np.where(mixed_num == 0, 0.0, _log_quotient(mixed_num, theta * np.log(mixed_den))),
        }


_KINDS = {"g_t lower": "lower", "g_t upper": "upper", "g_tt lower": "lower", "g_tt upper": "upper", "mixed": "upper"}


def _main_report(s: _MainSample, theta) -> AssumptionReport:
    theta = float(theta)
    q = _main_quotients(theta, s.t, s.g_t, s.g_tt, s.g_tx, s.dh, s.d2h)
    probe, t_lo, t_hi, (v_lo, v_hi), (h_lo, h_hi) = s.tail
    q_lo = _main_quotients(theta, np.full(len(probe), t_lo), v_lo.g_t, v_lo.g_tt, v_lo.g_tx, h_lo[1], h_lo[2])
    q_hi = _main_quotients(theta, np.full(len(probe), t_hi), v_hi.g_t, v_hi.g_tt, v_hi.g_tx, h_hi[1], h_hi[2])
    entries = []
    for name, kind in _KINDS.items():
        slope = _slope(q_lo[name], q_hi[name], t_lo, t_hi, kind) if t_hi > t_lo else 0.0
        entries.append(_judge(name, kind, q[name], s.t, s.x, s.levels, slope))
    return AssumptionReport(tuple(entries), s.t_range, len(s.t), {"theta": theta, "tail_range": (t_lo, t_hi)})


def check_main_assumptions(
    spec: IntegrandSpec,
    h: HProfile,
    params: StructuralParams,
    sampler: SamplingPlan | None = None,
) -> AssumptionReport:
    """Certify the growth conditions on g_t, g_tt and g_tx against h.

    Lower quotients g_t/h' and g_tt/h'' give m (inf); upper quotients
    g_t / (h'^theta t^(1-theta)), g_tt / h''^theta and
    |g_tx| / min(g_t, t g_tt)^theta give M_theta (sup).  Samples lie in
    subdomain x [t0, T], where T is T_max cut down to the representable range.
    """
    if abs(spec.t0 - h.t0) > 1e-12 or abs(params.t0 - spec.t0) > 1e-12:
        raise InputDomainError("spec, profile and parameters must share t0")
    sub = params.subdomain or spec.box
    T_max = params.T_max or spec.t_max
    s = _main_sample(spec, h, sub, spec.t0, T_max, sampler or SamplingPlan())
    return _main_report(s, params.theta)


def _h_quotients(t, beta, alpha, n, dh, d2h):
    with np.errstate(all="ignore"):
        r = dh / t
        lower_den = np.log(np.exp(((n - 2) / n) * np.log(r)) + r) - 2.0 * beta * np.log(t)
        upper_den = np.log(np.exp(alpha * np.log(r)) + r)
        return _log_quotient(d2h, lower_den), _log_quotient(d2h, upper_den)


def check_h_growth(h: HProfile, beta, alpha, t0: float, T_max: float, n: int = 2, samples: int = 4096) -> AssumptionReport:
    """Certify m_beta t^(-2 beta)[(h'/t)^((n-2)/n) + h'/t] <= h'' <= M_alpha[(h'/t)^alpha + h'/t].

    Besides the sampled range, the far tail (up to t = 1e100 for power-type
    profiles) is probed so that borderline decay rates are decided by the
    asymptotic slope rather than by the length of the sampled range.
    """
    if not (Fraction(1, n) < beta < Fraction(2, n)):
        raise InputDomainError(f"beta = {_fmt(beta)} violates 1/n < beta < 2/n for n = {n}")
    if not alpha > 1:
        raise InputDomainError(f"alpha must exceed 1, got {alpha}")
    beta, alpha = float(beta), float(alpha)
    ok = _h_ok(h)
    T = representable_limit(ok, t0, T_max)
    ts = t0 * (T / t0) ** np.linspace(0.0, 1.0, samples)
    _, d1, d2 = h.values(ts)
    ql, qu = _h_quotients(ts, beta, alpha, n, d1, d2)
    T_far = _far_limit(ok, T, h.exp_like)
    t_lo = max(t0, T_far / 100.0) if T_far > 100 * t0 else max(t0, T_far / 10.0)
    pair = np.array([t_lo, T_far])
    _, p1, p2 = h.values(pair)
    pl, pu = _h_quotients(pair, beta, alpha, n, p1, p2)
    levels = tuple(t0 * (T / t0) ** (k / 3.0) for k in (1, 2, 3))
    entries = [
        _judge("h lower", "lower", ql, ts, None, levels, _slope(pl[:1], pl[1:], t_lo, T_far, "lower") if T_far > t_lo else 0.0),
        _judge("h upper", "upper", qu, ts, None, levels, _slope(pu[:1], pu[1:], t_lo, T_far, "upper") if T_far > t_lo else 0.0),
    ]
    entries.extend(_profile_invariants(h, ts))
    return AssumptionReport(tuple(entries), (t0, T), len(ts), {"beta": beta, "alpha": alpha, "n": n, "tail_range": (t_lo, T_far)})


def _profile_invariants(h: HProfile, ts: np.ndarray) -> list[InequalityResult]:
    grid = np.concatenate([np.linspace(0.0, h.t0, 64), ts])
    hv, d1, d2 = h.values(grid)
    h0 = float(h.values(np.array([0.0]))[0][0])
    fin = np.isfinite(d1)
    mono = np.all(np.diff(d1[fin]) >= -1e-12 * np.maximum(1.0, np.abs(d1[fin][1:])))
    conv = bool(np.all(d2[np.isfinite(d2)] >= -1e-12))
    km, kM = h.K_m(ts), h.K_M(ts)
    order = bool(np.all(km <= kM))
    out = [
        InequalityResult("h(0) = 0", "upper", abs(h0) <= 1e-12, abs(h0), None, 0.0, abs(h0)),
        InequalityResult("h' nondecreasing", "upper", bool(mono), 0.0, None, 0.0, 0.0, "" if mono else "h' decreases"),
        InequalityResult("h'' >= 0", "upper", conv, 0.0, None, 0.0, 0.0, "" if conv else "h'' negative"),
        InequalityResult("K_m <= K_M", "upper", order, 0.0, None, 0.0, 0.0),
    ]
    return out


# ---------------------------------------------------------------------------
# Window search


@dataclass(frozen=True)
class ParameterWindow:
    beta_lo: object
    beta_lo_closed: bool
    beta_hi: object
    beta_hi_closed: bool
    theta_lo: float | None
    theta_hi: float | None
    theta_sup: float | None
    feasible: bool
    beta: object | None
    theta: object | None
    alpha: object | None
    fast_growth: bool
    failing: str | None
    n: int
    two_star: object
    notes: tuple[str, ...] = ()

    def beta_interval(self) -> str:
        left = "[" if self.beta_lo_closed else "("
        right = "]" if self.beta_hi_closed else ")"
        return f"{left}{_fmt(self.beta_lo)}, {_fmt(self.beta_hi)}{right}"

    def params(self, **overrides) -> StructuralParams:
        if not self.feasible:
            raise InfeasibleExponentsError(self.failing or "window is empty")
        base = dict(theta=float(self.theta), beta=float(self.beta), alpha=float(self.alpha), n=self.n,
                    two_star=None if self.n >= 3 else float(self.two_star))
        base.update(overrides)
        return StructuralParams(**base)


def _snap(v: float, max_den: int = 64, tol: float = 2e-3):
    f = Fraction(v).limit_denominator(max_den)
    return f if abs(float(f) - v) <= tol else v


def tail_slope(fn, h: HProfile, t0: float, T_max: float) -> float:
    """Log-log slope of fn(t) at the far end of the representable range."""
    ok = _h_ok(h)
    T = representable_limit(ok, t0, T_max)
    T_far = _far_limit(ok, T, h.exp_like)
    t_lo = max(t0, T_far / 100.0) if T_far > 100 * t0 else max(t0, T_far / 10.0)
    with np.errstate(all="ignore"):
        a, b = float(fn(np.array([t_lo]))[0]), float(fn(np.array([T_far]))[0])
        return (math.log(b) - math.log(a)) / (math.log(T_far) - math.log(t_lo))


def default_alpha(n: int, tau):
    """min(n/(n-1), 2 n tau / (n (1 + tau) - 1)): the global window cut by the iteration's restriction."""
    return min(Fraction(n, n - 1), 2 * n * tau / (n * (1 + tau) - 1))


def admissible_window_search(
    spec: IntegrandSpec,
    h: HProfile,
    n: int,
    subdomain: Box | None = None,
    sampler: SamplingPlan | None = None,
    two_star=None,
    theta_grid: Sequence | None = None,
) -> ParameterWindow:
    """Find the (beta, theta) region where all structural checks and the exponent gate pass.

    theta is scanned on a grid in [1, theta_cap).  The lower beta end comes
    from the asymptotic decay rate of h''/[(h'/t)^((n-2)/n) + h'/t]; it is
    snapped to a small-denominator fraction and is closed when the h-growth
    check certifies there.  The upper end is min(2/n, 1 - 2 tau_min/2*).
    """
    ts = sobolev_exponent(n, two_star)
    sub = subdomain or spec.box
    notes = []
    cap_c = (1 - Fraction(1, n)) * ts / 2
    theta_cap = (1 + math.sqrt(1 + 8 * float(cap_c))) / 4
    if theta_grid is None:
        theta_grid = [Fraction(100 + k, 100) for k in range(0, 100) if Fraction(100 + k, 100) < theta_cap]
    sample = _main_sample(spec, h, sub, spec.t0, spec.t_max, sampler or SamplingPlan())
    certified = [th for th in theta_grid if _main_report(sample, th).certified]

    def empty(reason, lo=Fraction(1, n), lo_closed=False, hi=Fraction(2, n), fast=False):
        return ParameterWindow(lo, lo_closed, hi, False, None, None, None, False, None, None, None, fast, reason, n, ts, tuple(notes))

    # fast growth: h'(t)/t -> infinity
    fast = tail_slope(lambda t: h.values(t)[1] / t, h, h.t0, spec.t_max) > 1e-2
    if not certified:
        first = _main_report(sample, theta_grid[0]).failures()
        what = first[0].name if first else "main assumptions"
        return empty(f"infeasible: {what} not certifiable for any theta in [1, {theta_cap:.4g})", fast=fast)
    theta_min = certified[0]
    tau_min = (2 * theta_min - 1) * theta_min

    def ratio(t):
        _, d1, d2 = h.values(t)
        r = d1 / t
        return d2 / (r ** ((n - 2) / n) + r)

    omega = tail_slope(ratio, h, h.t0, spec.t_max)
    beta_star = _snap(-omega / 2.0) if math.isfinite(omega) else -math.inf
    lo, lo_closed = Fraction(1, n), False
    hi = min(Fraction(2, n), 1 - 2 * tau_min / ts)
    alpha0 = default_alpha(n, tau_min)
    if beta_star > lo:
        lo = beta_star
        if beta_star < hi:
            lo_closed = check_h_growth(h, beta_star, alpha0, h.t0, spec.t_max, n).entry("h lower").certified
    if lo > hi or (lo == hi and not lo_closed):
        return empty(
            f"infeasible: beta window empty (h-growth needs beta >= {_fmt(lo)}, exponents need beta < {_fmt(hi)})",
            lo, lo_closed, hi, fast,
        )
    if fast:
        beta = Fraction(3, 2 * n)
        if not (lo < beta < hi or (lo_closed and beta == lo)):
            beta = (lo + hi) / 2
    else:
        beta = lo if lo_closed else (lo + hi) / 2
    # alpha: largest certified value not above the default
    alpha = None
    for cand in [alpha0] + [alpha0 - k * (alpha0 - 1) / 10 for k in range(1, 10)]:
        rep = check_h_growth(h, beta, cand, h.t0, spec.t_max, n)
        if rep.entry("h upper").certified:
            alpha = cand
            break
    hrep = check_h_growth(h, beta, alpha if alpha is not None else alpha0, h.t0, spec.t_max, n)
    c = (1 - beta) * ts / 2
    theta_sup = (1 + math.sqrt(1 + 8 * float(c))) / 4
    inside = [th for th in certified if (2 * th - 1) * th < c]
    failing = None
    if alpha is None:
        failing = "infeasible: h-growth upper bound not certifiable for any alpha in (1, n/(n-1)]"
    elif not hrep.certified:
        failing = "infeasible: " + "; ".join(f"{e.name}: {e.reason}" for e in hrep.failures())
    elif not exponents(n, theta_min, beta, two_star=two_star).feasible:
        failing = "infeasible: exponent gate fails at the chosen parameters"
    if len(inside) < len(certified):
        notes.append(f"theta grid values certified but beyond the exponent gate: {len(certified) - len(inside)}")
    return ParameterWindow(
        lo, lo_closed, hi, False,
        float(inside[0]) if inside else None,
        float(inside[-1]) if inside else None,
        theta_sup,
        failing is None,
        beta, theta_min, alpha, fast, failing, n, ts, tuple(notes),
    )


def structural_rows(*reports: AssumptionReport) -> list[dict]:
    """Flatten reports into CSV rows (name, certified, constant, worst_x, worst_t, quotient)."""
    rows = []
    for rep in reports:
        for e in rep.entries:
            rows.append({
                "name": e.name,
                "certified": int(e.certified),
                "constant": repr(float(e.constant)),
                "worst_x": "" if e.worst_x is None else " ".join(repr(v) for v in e.worst_x),
                "worst_t": repr(float(e.worst_t)),
                "quotient": repr(float(e.quotient)),
            })
    return rows
