"""Randomized checks of the auxiliary inequalities behind the gradient bound.

Two kinds of checks:

* explicit inequalities (the Phi growth bounds, the ellipticity sandwich) are
  evaluated on random samples and must have zero violations;
* "there exists a constant C" inequalities are turned into a ratio
  rhs / lhs whose empirical sup must be finite and must stabilize: the sup over
  the first half of the samples and over all samples may differ by at most 1%.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import InputDomainError
from .integrands import HProfile, IntegrandSpec, box_samples, ellipticity_bounds, hessian_quadratic_form
from .structural import PhiBranch, StructuralParams, _h_ok, phi_values, representable_limit, spec_representable_limit

DRIFT_TOL = 0.01
SLACK = 1e-12
ELLIPTIC_SLACK = 1e-9


@dataclass(frozen=True)
class LemmaResult:
    name: str
    kind: str  # "inequality" or "constant"
    passed: bool
    samples: int
    violations: int = 0
    sup: float = math.nan
    sup_first_half: float = math.nan
    drift: float = 0.0
    worst: tuple = ()
    note: str = ""


@dataclass(frozen=True)
class LemmaReport:
    results: tuple[LemmaResult, ...]
    seed: int
    samples: int
    params: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def result(self, name: str) -> LemmaResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def rows(self) -> list[dict]:
        return [
            {
                "name": r.name,
                "kind": r.kind,
                "passed": int(r.passed),
                "samples": r.samples,
                "violations": r.violations,
                "sup": repr(float(r.sup)),
                "drift": repr(float(r.drift)),
                "worst": " ".join(repr(float(v)) for v in r.worst),
                "note": r.note,
            }
            for r in self.results
        ]


# ---------------------------------------------------------------------------
# Explicit Phi inequalities


def phi_inequality_sides(gamma, t):
    """Sides of the Phi bounds, vectorized over arrays of gamma and t.

    Returns a dict name -> (lhs, rhs) with lhs <= rhs expected.
    """
    gamma = np.asarray(gamma, dtype=float)
    t = np.asarray(t, dtype=float)
    big = gamma > 1
    phi = np.empty(np.broadcast(gamma, t).shape)
    dphi = np.empty_like(phi)
    gb, tb = np.broadcast_arrays(gamma, t)
    for branch, mask in ((PhiBranch.POWER, big), (PhiBranch.QUADRATIC, ~big)):
        m = np.broadcast_to(mask, phi.shape)
        if np.any(m):
            p, d = phi_values(branch, gb[m], tb[m])
            phi[m], dphi[m] = p, d
    lhs = dphi * t
    return phi, dphi, {
        "power branch": (lhs, gamma * (1.0 + 2.0 * phi)),
        "quadratic branch": (lhs, 2.0 + (gamma + 2.0) * phi),
        "both cases": (lhs, np.maximum(2.0, gamma) + np.maximum(2.0 * gamma, gamma + 2.0) * phi),
        "final form": (lhs, (2.0 * gamma + 2.0) * (1.0 + phi)),
        "Phi <= t^gamma": (phi, t**gamma),
    }


def _inequality_result(name, lhs, rhs, gamma, t, slack=SLACK) -> LemmaResult:
    neg = lhs < 0
    excess = (lhs - rhs) / np.maximum(1.0, np.abs(rhs))
    bad = (excess > slack) | neg | ~np.isfinite(lhs) | ~np.isfinite(rhs)
    i = int(np.argmax(excess))
    return LemmaResult(
        name, "inequality", not bool(np.any(bad)), int(lhs.size), int(np.sum(bad)),
        float(np.max(excess)), worst=(float(gamma[i]), float(t[i])),
    )


# ---------------------------------------------------------------------------
# Constant-existence checks


def _sup_result(name, ratio, coords, note="") -> LemmaResult:
    """Empirical sup of ``ratio`` and its drift between half and full sample."""
    ratio = np.asarray(ratio, dtype=float)
    n = ratio.size
    if not np.all(np.isfinite(ratio)):
        i = int(np.argmax(~np.isfinite(ratio)))
        return LemmaResult(name, "constant", False, n, int(np.sum(~np.isfinite(ratio))), math.inf,
                           worst=tuple(float(c[i]) for c in coords), note="ratio not finite")
    half = max(1, n // 2)
    s_half = float(np.max(ratio[:half]))
    s_all = float(np.max(ratio))
    drift = (s_all - s_half) / s_all if s_all > 0 else 0.0
    i = int(np.argmax(ratio))
    passed = drift <= DRIFT_TOL and s_all > 0
    return LemmaResult(name, "constant", passed, n, 0, s_all, s_half, drift,
                       tuple(float(c[i]) for c in coords), note)


def _log_k(h: HProfile, t):
    _, d1, d2 = h.values(t)
    with np.errstate(all="ignore"):
        a, b = np.log(d2), np.log(d1 / t)
    return np.minimum(a, b), np.maximum(a, b)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _log_integral(h: HProfile, log_weight, t: np.ndarray, panels: int = 128) -> np.ndarray:
    """log of int_1^t exp(log_weight(s)) sqrt(K_m(s)) ds for each t (composite Gauss-Legendre)."""
    out = np.empty(t.shape)
    u = (np.arange(panels)[:, None] + 0.5 * (_GL_X[None, :] + 1.0)).ravel() / panels
    w = np.tile(_GL_W, panels) / (2.0 * panels)
    for start in range(0, t.size, 512):
        tb = t[start:start + 512, None]
        s = 1.0 + (tb - 1.0) * u[None, :]
        lkm, _ = _log_k(h, s)
        with np.errstate(all="ignore"):
            logf = log_weight(s, start) + 0.5 * lkm + np.log(w)[None, :] + np.log(tb - 1.0)
        mx = np.max(logf, axis=1, keepdims=True)
        with np.errstate(all="ignore"):
            val = mx[:, 0] + np.log(np.sum(np.exp(logf - mx), axis=1))
        out[start:start + 512] = np.where(tb[:, 0] > 1.0, val, -np.inf)
    return out


def sigma_grid(params: StructuralParams, count: int = 8) -> np.ndarray:
    """Evenly spaced sigma in [2 alpha / (2* (2 - alpha)), 1], endpoints included."""
    lo = 2.0 * params.alpha / (float(params.sobolev) * (2.0 - params.alpha))
    if not lo <= 1.0:
        raise InputDomainError(f"sigma window empty: lower end {lo:.6g} exceeds 1")
    return np.linspace(lo, 1.0, count)


def _lemma_growth(name, h, params, gamma, t, sigmas, weight_kind, rhs_kind):
    """Ratio rhs/lhs for the integral growth lemmas.

    Each (gamma, t) draw is paired with every sigma of the grid, since sigma only
    enters the right-hand side.
    weight_kind: "power" -> (s-1)^gamma, "small" -> (s-1) s^(gamma-1), "phi" -> sqrt(Phi_gamma(s)).
    rhs_kind: "sigma" -> K_M^(1/sigma) inside power 2*, "tau" -> K_M^tau, "mixed" -> power 2* sigma with K_M.
    """
    ts = float(params.sobolev)
    beta = float(params.beta)

    def log_weight(s, start):
        g = gamma[start:start + s.shape[0], None]
        with np.errstate(all="ignore"):
            if weight_kind == "power":
                return g * np.log(s - 1.0)
            if weight_kind == "small":
                return np.log(s - 1.0) + (g - 1.0) * np.log(s)
            big = g > 1
            lp = np.where(big, g * np.log(s - 1.0), 2.0 * np.log(s - 1.0) + (g - 2.0) * np.log(s))
            return 0.5 * lp

    lhs = np.logaddexp(0.0, _log_integral(h, log_weight, t))[:, None]
    _, lkM = _log_k(h, t)
    lkM = lkM[:, None]
    expo = (gamma / 2.0 + 1.0) if weight_kind == "phi" else (gamma + 1.0)
    with np.errstate(all="ignore"):
        base = (expo * np.log(t - 1.0) - beta * np.log(t) - np.log(gamma + 1.0))[:, None]
    sig = np.asarray(sigmas, dtype=float)[None, :]
    if rhs_kind == "sigma":
        inner, power = ts * base + lkM / sig, ts
    elif rhs_kind == "tau":
        inner, power = ts * base + float(params.tau) * lkM, ts
    else:
        inner, power = ts * sig * base + lkM, ts * sig
    inner = np.where(t[:, None] > 1.0, inner, -np.inf)
    rhs = np.logaddexp(0.0, inner) / power
    ratio = np.exp(rhs - lhs)
    k = ratio.shape[1]
    coords = (np.repeat(gamma, k), np.tile(np.broadcast_to(sig, ratio.shape)[0], len(t)), np.repeat(t, k))
    return _sup_result(name, ratio.ravel(), coords)


def lemma_suite(
    spec: IntegrandSpec,
    h: HProfile,
    params: StructuralParams,
    seed: int = 0,
    samples: int = 4096,
    phi_samples: int = 100_000,
    gamma_max: float = 10.0,
    t_hi: float | None = None,
    ellipticity_samples: int = 10_000,
    m: int = 2,
) -> LemmaReport:
    """Run every auxiliary-inequality check and collect the outcomes."""
    params.validate()
    if samples < 2:
        raise InputDomainError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    results: list[LemmaResult] = []

    # explicit Phi inequalities on [0, 1e3]
    g_all = rng.uniform(0.0, gamma_max, phi_samples)
    t_all = rng.uniform(0.0, 1e3, phi_samples)
    g_big = rng.uniform(1.0, gamma_max, phi_samples)
    g_small = rng.uniform(0.0, 1.0, phi_samples)
    _, _, sides = phi_inequality_sides(g_big, t_all)
    results.append(_inequality_result("Phi power branch", *sides["power branch"], g_big, t_all))
    _, _, sides = phi_inequality_sides(g_small, t_all)
    results.append(_inequality_result("Phi quadratic branch", *sides["quadratic branch"], g_small, t_all))
    _, _, sides = phi_inequality_sides(g_all, t_all)
    results.append(_inequality_result("Phi both cases", *sides["both cases"], g_all, t_all))
    results.append(_inequality_result("Phi final form", *sides["final form"], g_all, t_all))
    results.append(_inequality_result("Phi <= t^gamma", *sides["Phi <= t^gamma"], g_all, t_all))

    # integral growth lemmas
    T = float(t_hi) if t_hi is not None else representable_limit(_h_ok(h), 1.0, min(spec.t_max, 1e3))
    sig = sigma_grid(params)

    def draw(g_lo, g_hi):
        # one scrambled Sobol sequence per lemma, so half-sample sups are comparable
        u = qmc.Sobol(d=2, scramble=True, seed=rng).random_base2(max(1, math.ceil(math.log2(samples))))[:samples]
        # gamma clustered toward both ends of its range, where the sups tend to sit
        ug = 0.5 * (1.0 - np.cos(np.pi * u[:, 0]))
        return g_lo + (g_hi - g_lo) * ug, np.exp(u[:, 1] * math.log(T))

    one = [1.0 / float(params.tau)]
    growth = [
        ("growth, gamma >= 1", (1.0, gamma_max), sig, "power", "sigma"),
        ("growth remark, gamma >= 1", (1.0, gamma_max), sig, "power", "mixed"),
        ("growth, gamma <= 1", (0.0, 1.0), sig, "small", "sigma"),
        ("growth remark, gamma <= 1", (0.0, 1.0), sig, "small", "mixed"),
        ("growth, any gamma", (0.0, gamma_max), sig, "phi", "sigma"),
        ("growth, sigma = 1/tau", (0.0, gamma_max), one, "phi", "tau"),
        ("growth, power 2* sigma", (0.0, gamma_max), sig, "phi", "mixed"),
    ]
    for name, g_range, sigmas, weight, rhs in growth:
        results.append(_lemma_growth(name, h, params, *draw(*g_range), sigmas, weight, rhs))

    # h' t <= C (1 + h)^(1/(2 - alpha))
    alpha = float(params.alpha)
    t1 = np.exp(rng.uniform(0.0, math.log(T), samples))
    hv, d1, d2 = h.values(t1)
    with np.errstate(all="ignore"):
        r6 = np.exp(np.log(d1 * t1) - np.log1p(hv) / (2.0 - alpha))
    results.append(_sup_result("h' t vs (1 + h)^(1/(2-alpha))", r6, (t1,)))

    # 1 + K_M^tau t^(2 tau) <= C (1 + h)^eta with eta = alpha/(2 - alpha)
    tau = float(params.tau)
    eta = alpha / (2.0 - alpha)
    _, lkM = _log_k(h, t1)
    with np.errstate(all="ignore"):
        r7 = np.exp(np.logaddexp(0.0, tau * (lkM + 2.0 * np.log(t1))) - eta * np.log1p(hv))
    note = "" if tau <= eta + 1e-12 else f"tau = {tau:.6g} exceeds eta = {eta:.6g}; the bound needs tau <= alpha/(2 - alpha)"
    results.append(_sup_result("K_M^tau t^(2 tau) vs (1 + h)^eta", r7, (t1,), note))

    results.append(ellipticity_sandwich(spec, ellipticity_samples, rng, m=m))
    return LemmaReport(tuple(results), seed, samples, {"theta": params.theta, "beta": params.beta,
                                                       "alpha": params.alpha, "n": params.n, "t_hi": T})


def ellipticity_sandwich(spec: IntegrandSpec, count: int, rng: np.random.Generator, m: int = 2,
                         t_lo: float = 1e-3, t_hi: float | None = None) -> LemmaResult:
    """H_m |lam|^2 <= Hessian form <= H_M |lam|^2 on random (x, xi, lam)."""
    n = spec.dim
    T = t_hi if t_hi is not None else spec_representable_limit(spec, min(spec.t_max, 1e3), cap=1e250)
    x = box_samples(spec.box, count, int(rng.integers(0, 2**31)))[:count]
    xi = rng.normal(size=(count, m, n))
    mag = np.exp(rng.uniform(math.log(t_lo), math.log(T), count))
    xi *= (mag / np.sqrt(np.sum(xi * xi, axis=(1, 2))))[:, None, None]
    lam = rng.normal(size=(count, m, n))
    form = hessian_quadratic_form(spec, x, xi, lam)
    lo, hi = ellipticity_bounds(spec, x, mag)
    lam2 = np.sum(lam * lam, axis=(1, 2))
    scale = np.maximum(np.abs(hi * lam2), 1e-300)
    ex_lo = (lo * lam2 - form) / scale
    ex_hi = (form - hi * lam2) / scale
    excess = np.maximum(ex_lo, ex_hi)
    bad = excess > ELLIPTIC_SLACK
    i = int(np.argmax(excess))
    return LemmaResult("ellipticity sandwich", "inequality", not bool(np.any(bad)), count, int(np.sum(bad)),
                       float(np.max(excess)), worst=(float(mag[i]),))
