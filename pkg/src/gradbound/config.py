"""INI-style experiment configuration with line-numbered diagnostics.

Format: ``[section]`` headers, ``key = value`` lines, ``#`` comments, decimal
numbers (``a/b`` fractions are accepted where a real is expected), and double
quoted strings for DSL expressions.  Unknown sections or keys, duplicates, type
mismatches and range violations are errors that cite the offending line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable

from .coefficients import Box, CoefficientField
from .dsl import ParseError, to_integrand
from .errors import GradBoundError
from .integrands import (
    HProfile,
    IntegrandSpec,
    RegularizationClamp,
    default_h_profile,
    h_linear_minus_sqrt,
    make_builtin,
    profile_by_name,
)
from .solver import BoundaryDatum, Method, SolveOptions
from .structural import ExponentSet, StructuralParams, default_alpha, exponents

MODES = ("check", "solve", "verify-bound", "sweep-mesh", "sweep-clamp", "lemmas")
FAMILIES = ("Exponential", "VariableExponent", "OrliczLog", "ComposedH", "LinearMinusSqrt", "Quadratic")
PROFILES = ("default", "exp_sq", "power", "tlog", "quadratic", "linear_minus_sqrt")


class ConfigError(GradBoundError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Entry:
    value: str
    line: int


_SECTION = re.compile(r"^\[\s*([A-Za-z_][\w-]*)\s*\]$")
_KEY = re.compile(r"^([A-Za-z_][\w.]*)\s*=\s*(.*)$")


def _strip_comment(line: str) -> str:
    out, quoted = [], False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out).strip()


def parse_ini(text: str, known: tuple[str, ...] | None = None) -> dict[str, dict[str, Entry]]:
    """Split text into sections of (value, line) entries; no interpretation of values.

    When ``known`` is given, any other section header is an error.
    """
    sections: dict[str, dict[str, Entry]] = {}
    current: str | None = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1)
            if known is not None and current not in known:
                raise ConfigError(f"unknown section [{current}]; known: {', '.join(known)}", no)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", no)
            sections[current] = {}
            continue
        m = _KEY.match(line)
        if not m:
            raise ConfigError(f"cannot parse {raw.strip()!r}; expected 'key = value' or '[section]'", no)
        if current is None:
            raise ConfigError("key outside of any section", no)
        key, value = m.group(1), m.group(2).strip()
        if key in sections[current]:
            first = sections[current][key].line
            raise ConfigError(f"duplicate key {key!r} in [{current}] (first defined on line {first}, again on line {no})", no)
        if value.count('"') % 2:
            raise ConfigError("unterminated string", no)
        sections[current][key] = Entry(value, no)
    return sections


# ---------------------------------------------------------------------------
# Value parsers


def _real(s: str) -> float:
    s = s.strip()
    if s.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    if "/" in s:
        return float(Fraction(s.replace(" ", "")))
    return float(s)


def _exact(s: str):
    """A real that stays a Fraction when written as a/b or a terminating decimal."""
    s = s.strip()
    try:
        return Fraction(s.replace(" ", ""))
    except ValueError:
        return _real(s)


def _int(s: str) -> int:
    if not re.fullmatch(r"[+-]?\d+", s.strip()):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(s)


def _string(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] == '"':
        return s[1:-1]
    return s


def _reals(s: str) -> tuple[float, ...]:
    parts = [p for p in re.split(r"[,\s]+", s.strip()) if p]
    if not parts:
        raise ValueError("expected at least one number")
    return tuple(_real(p) for p in parts)


def _box(s: str) -> Box:
    v = _reals(s)
    if len(v) % 2 or not v:
        raise ValueError("a box is written lo1, hi1, lo2, hi2, ...")
    return Box(tuple(v[0::2]), tuple(v[1::2]))


def _matrix(s: str) -> tuple[tuple[float, ...], ...]:
    rows = tuple(_reals(r) for r in s.split(";") if r.strip())
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("matrix rows must be non-empty and of equal length (rows separated by ';')")
    return rows


def _clamps(s: str) -> tuple[tuple[float, float], ...]:
    out = []
    for item in s.split(","):
        if not item.strip():
            continue
        if ":" not in item:
            raise ValueError("clamps are written N:M, N:M, ...")
        n, m = item.split(":")
        out.append((_real(n), _real(m)))
    return tuple(out)


_CALL = re.compile(r"^(constant|affine|periodic)\s*\((.*)\)$")


def _coefficient(s: str) -> CoefficientField:
    s = s.strip()
    m = _CALL.match(s)
    if not m:
        return CoefficientField.constant(_real(s))
    kind, args = m.group(1), _reals(m.group(2)) if m.group(2).strip() else ()
    if kind == "constant":
        if len(args) != 1:
            raise ValueError("constant(c) takes one number")
        return CoefficientField.constant(args[0])
    if kind == "affine":
        if len(args) < 2:
            raise ValueError("affine(c, s1, s2, ...) needs a value and slopes")
        return CoefficientField.affine(args[0], args[1:])
    if len(args) < 3:
        raise ValueError("periodic(c, amplitude, k1, ..., kn, phase) needs at least 4 numbers")
    return CoefficientField.periodic(args[0], args[1], args[2:-1], args[-1])


def _choice(options):
    def parse(s: str) -> str:
        v = _string(s)
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v

    return parse


# ---------------------------------------------------------------------------
# Schema

Check = Callable[[Any], str | None]


def _positive(v):
    return None if v > 0 else "must be positive"


def _nonneg(v):
    return None if v >= 0 else "must be nonnegative"


def _all_positive(v):
    return None if all(x > 0 for x in v) else "entries must be positive"


SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any, Check | None]]] = {
    "integrand": {
        "family": (_choice(FAMILIES), None, None),
        "g": (_string, None, None),
        "t0": (_real, 1.0, _positive),
        "t_max": (_real, None, _positive),
        "kappa": (_real, 1.0, _nonneg),
        "profile": (_choice(("exp_sq", "power", "tlog", "quadratic")), "exp_sq", None),
        "q": (_real, 2.0, lambda v: None if v > 1 else "must exceed 1"),
        "box": (_box, None, None),
        "h_profile": (_choice(PROFILES), "default", None),
        "h_q": (_real, 2.0, lambda v: None if v > 1 else "must exceed 1"),
        "extension": (_choice(("auto", "always", "never")), "auto", None),
        "a": (_coefficient, None, None),
        "b": (_coefficient, None, None),
        "p": (_coefficient, None, None),
    },
    "structural": {
        "n": (_int, 2, lambda v: None if v >= 2 else "must be at least 2"),
        "theta": (_exact, None, lambda v: None if v >= 1 else "must be at least 1"),
        "beta": (_exact, None, None),
        "alpha": (_exact, None, None),
        "epsilon": (_real, 0.1, _positive),
        "two_star": (_real, None, lambda v: None if v > 2 else "must exceed 2"),
        "T_max": (_real, None, _positive),
        "subdomain": (_box, None, None),
        "seed": (_int, 0, _nonneg),
        "samples": (_int, 4096, lambda v: None if v >= 2 else "must be at least 2"),
    },
    "solver": {
        "box": (_box, None, None),
        "widths": (_reals, None, _all_positive),
        "N": (_int, None, lambda v: None if v >= 4 else "must be at least 4"),
        "m": (_int, 1, lambda v: None if v >= 1 else "must be at least 1"),
        "datum": (_choice(("affine", "harmonic_quadratic", "sine", "radial")), "harmonic_quadratic", None),
        "datum_A": (_matrix, None, None),
        "datum_b": (_reals, None, None),
        "datum_scale": (_real, 1.0, None),
        "datum_k": (_real, 1.0, _positive),
        "datum_amplitude": (_real, 1.0, None),
        "datum_profile": (_choice(("linear", "quadratic", "sqrt")), "quadratic", None),
        "tol": (_real, 1e-8, _positive),
        "max_iter": (_int, 20000, lambda v: None if v >= 1 else "must be at least 1"),
        "method": (_choice(("ncg", "gd")), "ncg", None),
        "c1": (_real, 1e-4, lambda v: None if 0 < v < 0.5 else "must lie in (0, 1/2)"),
        "seed": (_int, 0, _nonneg),
        "init_noise": (_real, 0.0, _nonneg),
        "clamp_N": (_real, None, _positive),
        "clamp_M": (_real, None, _positive),
        "lower_clamp": (_real, 1e-3, _positive),
        "clamps": (_clamps, None, None),
    },
    "experiment": {
        "mode": (_choice(MODES), None, None),
        "rho": (_real, None, _positive),
        "R": (_real, None, _positive),
        "center": (_reals, None, None),
        "out": (_string, None, None),
    },
}


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, Any]]
    lines: dict[tuple[str, str], int] = field(default_factory=dict)
    coefficients: dict[str, CoefficientField] = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def line(self, section: str, key: str) -> int | None:
        return self.lines.get((section, key))

    @property
    def box(self) -> Box:
        return self.values["integrand"]["box"] or self.values["solver"]["box"] or Box.unit(2)

    @property
    def solver_box(self) -> Box:
        return self.values["solver"]["box"] or self.box

    def build_spec(self) -> IntegrandSpec:
        """The unclamped integrand described by [integrand]."""
        ig = self.values["integrand"]
        coeffs = {k: ig[k] for k in ("a", "b", "p") if ig[k] is not None}
        coeffs.update(self.coefficients)
        try:
            if ig["g"] is not None:
                return to_integrand(ig["g"], coeffs, ig["t0"], self.box, ig["t_max"], ig["extension"])
            params = dict(coeffs, kappa=ig["kappa"], profile=ig["profile"], q=ig["q"])
            return make_builtin(ig["family"], params, ig["t0"], self.box, ig["t_max"])
        except ParseError as exc:
            raise ConfigError(f"[integrand] g: {exc.line}:{exc.col}: {exc.message}", self.line("integrand", "g")) from None
        except GradBoundError as exc:
            key = "g" if ig["g"] is not None else "family"
            raise ConfigError(f"[integrand] {exc}", self.line("integrand", key)) from None

    def h_profile(self, spec: IntegrandSpec) -> HProfile:
        ig = self.values["integrand"]
        if ig["h_profile"] == "default":
            return default_h_profile(spec, self.values["structural"]["subdomain"])
        if ig["h_profile"] == "linear_minus_sqrt":
            return h_linear_minus_sqrt(spec.t0, spec.box)
        return replace(profile_by_name(ig["h_profile"], ig["h_q"]), t0=spec.t0)

    def structural_params(self, window=None) -> StructuralParams:
        """Parameters from [structural]; unset theta, beta, alpha come from ``window``."""
        st = self.values["structural"]
        picked = {}
        for key in ("theta", "beta", "alpha"):
            v = st[key]
            if v is None and window is not None and window.feasible:
                v = getattr(window, key)
            if v is None and key == "alpha" and st["theta"] is not None:
                v = default_alpha(st["n"], (2 * st["theta"] - 1) * st["theta"])
            if v is None:
                raise ConfigError(f"[structural] {key} is not set and no admissible window supplies it")
            picked[key] = v
        return StructuralParams(
            float(picked["theta"]), float(picked["beta"]), float(picked["alpha"]), st["n"],
            self.values["integrand"]["t0"], st["subdomain"], st["T_max"], st["two_star"], st["epsilon"],
        )

    def exponent_set(self, params: StructuralParams) -> ExponentSet:
        return exponents(params.n, params.theta, params.beta, params.epsilon, params.two_star)

    def datum(self) -> BoundaryDatum:
        so, ex = self.values["solver"], self.values["experiment"]
        center = ex["center"] if ex["center"] is not None else tuple(self.solver_box.center.tolist())
        kw = dict(m=so["m"], scale=so["datum_scale"], k=so["datum_k"], amplitude=so["datum_amplitude"],
                  profile=so["datum_profile"], center=tuple(center))
        if so["datum"] == "affine":
            b = so["datum_b"] if so["datum_b"] is not None else (0.0,) * so["m"]
            kw.update(A=so["datum_A"], b=tuple(b))
        return BoundaryDatum(so["datum"], **kw)

    def solve_options(self) -> SolveOptions:
        so = self.values["solver"]
        return SolveOptions(so["tol"], so["max_iter"], Method(so["method"]), so["c1"], so["seed"],
                            so["init_noise"], so["lower_clamp"])

    def clamp(self) -> RegularizationClamp | None:
        so = self.values["solver"]
        if so["clamp_N"] is None:
            return None
        return RegularizationClamp(so["clamp_N"], so["clamp_M"])

    def widths(self) -> tuple[float, ...]:
        so = self.values["solver"]
        W = float(self.solver_box.hi[0] - self.solver_box.lo[0])
        if so["widths"] is not None:
            return tuple(so["widths"])
        if so["N"] is not None:
            return (W / so["N"],)
        return (W / 16, W / 32, W / 64)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration; defaults are filled for every missing key."""
    raw = parse_ini(text, tuple(SCHEMA))
    values: dict[str, dict[str, Any]] = {}
    lines: dict[tuple[str, str], int] = {}
    coeffs: dict[str, CoefficientField] = {}
    for sec, schema in SCHEMA.items():
        entries = raw.get(sec, {})
        out = {k: d for k, (_, d, _) in schema.items()}
        for key, e in entries.items():
            if sec == "integrand" and key.startswith("coef."):
                name = key[5:]
                try:
                    coeffs[name] = _coefficient(e.value)
                except (ValueError, ZeroDivisionError) as exc:
                    raise ConfigError(f"[{sec}] {key}: {exc}", e.line) from None
                lines[(sec, key)] = e.line
                continue
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{sec}]; known: {', '.join(schema)}", e.line)
            parse, _, check = schema[key]
            try:
                v = parse(e.value)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"[{sec}] {key}: type mismatch: {exc}", e.line) from None
            if check is not None:
                msg = check(v)
                if msg:
                    raise ConfigError(f"[{sec}] {key} = {e.value}: {msg}", e.line)
            out[key] = v
            lines[(sec, key)] = e.line
        values[sec] = out
    cfg = ExperimentConfig(values, lines, coeffs)
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ExperimentConfig) -> None:
    ig, st, so, ex = (cfg.values[s] for s in ("integrand", "structural", "solver", "experiment"))
    if ig["family"] is None and ig["g"] is None:
        ig["family"] = "Quadratic"
    if ig["family"] is not None and ig["g"] is not None:
        raise ConfigError("[integrand] give either family or g, not both", cfg.line("integrand", "g"))
    n = st["n"]
    beta, alpha = st["beta"], st["alpha"]
    if beta is not None and not (Fraction(1, n) < beta < Fraction(2, n)):
        raise ConfigError(
            f"[structural] beta = {float(beta):g} out of range: need 1/n < beta < 2/n = ({1 / n:g}, {2 / n:g}) for n = {n}",
            cfg.line("structural", "beta"),
        )
    if alpha is not None and not (1 < alpha <= Fraction(n, n - 1)):
        raise ConfigError(
            f"[structural] alpha = {float(alpha):g} out of range: need 1 < alpha <= n/(n-1) = {n / (n - 1):g}",
            cfg.line("structural", "alpha"),
        )
    if st["two_star"] is not None and n != 2:
        raise ConfigError("[structural] two_star may only be chosen for n = 2", cfg.line("structural", "two_star"))
    cN, cM = so["clamp_N"], so["clamp_M"]
    if (cN is None) != (cM is None):
        raise ConfigError("[solver] clamp_N and clamp_M go together", cfg.line("solver", "clamp_N") or cfg.line("solver", "clamp_M"))
    if cN is not None and not cM > cN:
        raise ConfigError("[solver] clamp_M must exceed clamp_N", cfg.line("solver", "clamp_M"))
    for c in so["clamps"] or ():
        if not (c[0] > 0 and c[1] > c[0]):
            raise ConfigError("[solver] each clamp needs 0 < N < M", cfg.line("solver", "clamps"))
    if so["datum"] == "affine":
        A = so["datum_A"]
        if A is None:
            raise ConfigError("[solver] affine datum needs datum_A", cfg.line("solver", "datum"))
        if len(A) != so["m"] or len(A[0]) != 2:
            raise ConfigError(f"[solver] datum_A must be {so['m']} x 2", cfg.line("solver", "datum_A"))
        b = so["datum_b"]
        if b is not None and len(b) != so["m"]:
            raise ConfigError(f"[solver] datum_b must have {so['m']} entries", cfg.line("solver", "datum_b"))
    if so["widths"] is not None and so["N"] is not None:
        raise ConfigError("[solver] give either widths or N", cfg.line("solver", "N"))
    rho, R = ex["rho"], ex["R"]
    if rho is not None and R is not None and not rho < R:
        raise ConfigError("[experiment] need rho < R", cfg.line("experiment", "R"))
    c = ex["center"]
    if c is not None and len(c) != 2:
        raise ConfigError("[experiment] center has 2 coordinates", cfg.line("experiment", "center"))
