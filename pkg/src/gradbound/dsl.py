"""Expression language for custom integrands g(x, t).

Grammar (precedence climbing, lowest first)::

    expr    := expr ('+' | '-') expr
             | expr ('*' | '/') expr
             | '-' expr            (binds looser than '^')
             | expr '^' expr       (right associative)
             | number | 't' | 'x1' ... | name '(' 'x' ')' | func '(' args ')' | '(' expr ')'

Evaluation uses second-order forward-mode dual numbers in (t, x_k) so that
g, g_t, g_tt, g_x and g_tx come out of a single pass.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .coefficients import Box, CoefficientField, as_field
from .errors import GradBoundError, InputDomainError
from .integrands import (
    T_MAX_EXPONENTIAL,
    T_MAX_POLYNOMIAL,
    Family,
    IntegrandSpec,
    IntegrandValues,
    box_samples,
    choose_extension,
    normalized,
    smooth_below,
    t_samples,
)

FUNCTIONS = {"exp": (1, 1), "log": (1, 1), "sqrt": (1, 1), "sin": (1, 1), "cos": (1, 1), "abs_smooth": (1, 2)}
ABS_SMOOTH_DELTA = 1e-8


class ParseError(GradBoundError, ValueError):
    """Syntax error with a byte offset into the source text."""

    def __init__(self, message: str, offset: int, text: str = "", expected: frozenset = frozenset()):
        self.message = message
        self.offset = offset
        self.text = text
        self.expected = expected
        line = text.count("\n", 0, offset) + 1
        col = offset - (text.rfind("\n", 0, offset) + 1) + 1
        self.line, self.col = line, col
        super().__init__(f"{line}:{col}: {message}")


class EvalDomainError(GradBoundError, ValueError):
    """A function was applied outside its domain; carries the subexpression offset."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"offset {offset}: {message}")


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Coef:
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    pos: int = field(default=0, compare=False)


Expr = Union[Num, Var, Coef, Neg, BinOp, Call]

# ---------------------------------------------------------------------------
# Tokenizer and parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)
_BINARY = {"+": (1, False), "-": (1, False), "*": (2, False), "/": (2, False), "^": (4, True)}
_UNARY_PREC = 3
_XVAR = re.compile(r"x([1-9][0-9]*)$")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, message, expected=()):
        tok = self.tok
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ParseError(f"{message}, found {found}", tok.pos, self.text, frozenset(expected))

    def expect(self, text):
        if self.tok.text != text or self.tok.kind not in ("op", "name"):
            self.fail(f"expected {text!r}", (text,))
        self.i += 1

    def expr(self, min_prec: int) -> Expr:
        lhs = self.unary()
        while self.tok.kind == "op" and self.tok.text in _BINARY:
            prec, right = _BINARY[self.tok.text]
            if prec < min_prec:
                break
            tok = self.tok
            self.i += 1
            rhs = self.expr(prec if right else prec + 1)
            lhs = BinOp(tok.text, lhs, rhs, tok.pos)
        return lhs

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            pos = self.tok.pos
            self.i += 1
            return Neg(self.expr(_UNARY_PREC), pos)
        return self.primary()

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text), tok.pos)
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            e = self.expr(0)
            self.expect(")")
            return e
        if tok.kind == "name":
            self.i += 1
            name = tok.text
            nxt = self.tok
            if name in FUNCTIONS:
                self.expect("(")
                args = [self.expr(0)]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.i += 1
                    args.append(self.expr(0))
                self.expect(")")
                lo, hi = FUNCTIONS[name]
                if not lo <= len(args) <= hi:
                    want = str(lo) if lo == hi else f"{lo} or {hi}"
                    raise ParseError(f"{name} expects {want} argument(s), got {len(args)}", tok.pos, self.text)
                return Call(name, tuple(args), tok.pos)
            if nxt.kind == "op" and nxt.text == "(":
                # coefficient reference name(x)
                self.i += 1
                if not (self.tok.kind == "name" and self.tok.text == "x"):
                    self.fail(f"coefficient reference {name}(x) expects 'x'", ("x",))
                self.i += 1
                self.expect(")")
                return Coef(name, tok.pos)
            if name == "t" or _XVAR.match(name):
                return Var(name, tok.pos)
            raise ParseError(f"unknown identifier {name!r}", tok.pos, self.text)
        self.fail("expected a number, variable, function or '('", ("number", "t", "x1", "(", "-"))


def parse(text: str) -> Expr:
    """Parse an expression; raises ParseError with a byte offset on failure."""
    if not text or not text.strip():
        raise ParseError("empty expression", 0, text or "")
    p = _Parser(text)
    e = p.expr(0)
    if p.tok.kind != "end":
        p.fail("expected an operator or end of input", tuple(_BINARY))
    return e


def to_text(e: Expr) -> str:
    """Print an AST in fully parenthesized form that reparses to the same AST."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Coef):
        return f"{e.name}(x)"
    if isinstance(e, Neg):
        return f"(-{to_text(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    return f"{e.func}(" + ", ".join(to_text(a) for a in e.args) + ")"


def coefficient_names(e: Expr) -> set[str]:
    if isinstance(e, Coef):
        return {e.name}
    if isinstance(e, Neg):
        return coefficient_names(e.operand)
    if isinstance(e, BinOp):
        return coefficient_names(e.left) | coefficient_names(e.right)
    if isinstance(e, Call):
        return set().union(*(coefficient_names(a) for a in e.args))
    return set()


def uses_x(e: Expr) -> bool:
    if isinstance(e, Var):
        return e.name != "t"
    if isinstance(e, Neg):
        return uses_x(e.operand)
    if isinstance(e, BinOp):
        return uses_x(e.left) or uses_x(e.right)
    if isinstance(e, Call):
        return any(uses_x(a) for a in e.args)
    return False


# ---------------------------------------------------------------------------
# Dual numbers


class Dual2:
    """Truncated Taylor expansion in t (to second order) and x_k (first order, mixed with t).

    Fields hold arrays: ``value``, ``d_t``, ``d_tt`` of shape S and ``d_x``,
    ``d_xt`` of shape S + (n,).  Products drop the x_j x_k and t^2 x_k terms.
    """

    __slots__ = ("value", "d_t", "d_tt", "d_x", "d_xt")

    def __init__(self, value, d_t, d_tt, d_x, d_xt):
        self.value = value
        self.d_t = d_t
        self.d_tt = d_tt
        self.d_x = d_x
        self.d_xt = d_xt

    @property
    def d_xk_t(self):
        return self.d_xt

    @classmethod
    def constant(cls, c, shape, n):
        z = np.zeros(shape)
        return cls(np.full(shape, float(c)), z, z, np.zeros(shape + (n,)), np.zeros(shape + (n,)))

    def is_constant(self) -> bool:
        return not (np.any(self.d_t) or np.any(self.d_tt) or np.any(self.d_x) or np.any(self.d_xt))

    def __add__(self, o: "Dual2") -> "Dual2":
        return Dual2(self.value + o.value, self.d_t + o.d_t, self.d_tt + o.d_tt, self.d_x + o.d_x, self.d_xt + o.d_xt)

    def __sub__(self, o: "Dual2") -> "Dual2":
        return Dual2(self.value - o.value, self.d_t - o.d_t, self.d_tt - o.d_tt, self.d_x - o.d_x, self.d_xt - o.d_xt)

    def __neg__(self) -> "Dual2":
        return Dual2(-self.value, -self.d_t, -self.d_tt, -self.d_x, -self.d_xt)

    def __mul__(self, o: "Dual2") -> "Dual2":
        u, v = self, o
        uv, vv = u.value[..., None], v.value[..., None]
        ut, vt = u.d_t[..., None], v.d_t[..., None]
        return Dual2(
            u.value * v.value,
            u.d_t * v.value + u.value * v.d_t,
            u.d_tt * v.value + 2.0 * u.d_t * v.d_t + u.value * v.d_tt,
            u.d_x * vv + uv * v.d_x,
            u.d_xt * vv + ut * v.d_x + u.d_x * vt + uv * v.d_xt,
        )

    def apply(self, f0, f1, f2) -> "Dual2":
        """Chain rule for a scalar function with derivatives f1, f2 at self.value."""
        f1e, f2e = f1[..., None], f2[..., None]
        return Dual2(
            f0,
            f1 * self.d_t,
            f2 * self.d_t * self.d_t + f1 * self.d_tt,
            f1e * self.d_x,
            f2e * self.d_t[..., None] * self.d_x + f1e * self.d_xt,
        )


def _domain(cond, message, node):
    if np.any(cond):
        raise EvalDomainError(message, node.pos)


def _eval(e: Expr, env) -> Dual2:
    shape, n = env["shape"], env["n"]
    if isinstance(e, Num):
        return Dual2.constant(e.value, shape, n)
    if isinstance(e, Var):
        if e.name == "t":
            return env["t"]
        k = int(e.name[1:])
        if k > n:
            raise EvalDomainError(f"variable {e.name} exceeds the dimension {n}", e.pos)
        return env["x"][k - 1]
    if isinstance(e, Coef):
        fld = env["coeffs"].get(e.name)
        if fld is None:
            raise EvalDomainError(f"coefficient {e.name!r} is not bound", e.pos)
        x = env["xarr"]
        z = np.zeros(shape)
        return Dual2(np.broadcast_to(fld.value(x), shape).astype(float), z, z,
                     np.broadcast_to(fld.gradient(x), shape + (n,)).astype(float), np.zeros(shape + (n,)))
    if isinstance(e, Neg):
        return -_eval(e.operand, env)
    if isinstance(e, BinOp):
        u = _eval(e.left, env)
        if e.op == "^":
            return _power(u, e.right, env, e)
        v = _eval(e.right, env)
        if e.op == "+":
            return u + v
        if e.op == "-":
            return u - v
        if e.op == "*":
            return u * v
        _domain(v.value == 0, "division by zero", e)
        r = 1.0 / v.value
        return u * v.apply(r, -r * r, 2.0 * r * r * r)
    args = [_eval(a, env) for a in e.args]
    u = args[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        if e.func == "exp":
            ev = np.exp(u.value)
            return u.apply(ev, ev, ev)
        if e.func == "log":
            _domain(u.value <= 0, "log of a nonpositive argument", e)
            r = 1.0 / u.value
            return u.apply(np.log(u.value), r, -r * r)
        if e.func == "sqrt":
            _domain(u.value < 0, "sqrt of a negative argument", e)
            s = np.sqrt(u.value)
            return u.apply(s, 0.5 / s, -0.25 / (s * u.value))
        if e.func == "sin":
            return u.apply(np.sin(u.value), np.cos(u.value), -np.sin(u.value))
        if e.func == "cos":
            return u.apply(np.cos(u.value), -np.sin(u.value), -np.cos(u.value))
        # abs_smooth(u; delta) = sqrt(u^2 + delta^2) - delta
        if len(args) == 2:
            if not args[1].is_constant():
                raise EvalDomainError("abs_smooth width must not depend on t or x", e.args[1].pos)
            delta = args[1].value
        else:
            delta = np.full(shape, ABS_SMOOTH_DELTA)
        _domain(delta <= 0, "abs_smooth width must be positive", e)
        r = np.sqrt(u.value * u.value + delta * delta)
        return u.apply(r - delta, u.value / r, delta * delta / r**3)


def _power(u: Dual2, right: Expr, env, node: BinOp) -> Dual2:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if isinstance(right, Num) or (isinstance(right, Neg) and isinstance(right.operand, Num)):
            c = right.value if isinstance(right, Num) else -right.operand.value
            if float(c).is_integer():
                if c < 0:
                    _domain(u.value == 0, "zero raised to a negative power", node)
                return u.apply(u.value**c, c * u.value ** (c - 1.0), c * (c - 1.0) * u.value ** (c - 2.0))
            _domain(u.value < 0, "negative base with a non-integer exponent", node)
            return u.apply(u.value**c, c * u.value ** (c - 1.0), c * (c - 1.0) * u.value ** (c - 2.0))
        w = _eval(right, env)
        if w.is_constant():
            c = w.value
            _domain((u.value < 0) & (c != np.round(c)), "negative base with a non-integer exponent", node)
            return u.apply(u.value**c, c * u.value ** (c - 1.0), c * (c - 1.0) * u.value ** (c - 2.0))
        if not (np.any(w.d_t) or np.any(w.d_tt) or np.any(w.d_xt)):
            return _power_x_exponent(u, w, node)
        _domain(u.value <= 0, "variable exponent needs a positive base", node)
        r = 1.0 / u.value
        logu = u.apply(np.log(u.value), r, -r * r)
        prod = w * logu
        ev = np.exp(prod.value)
        return prod.apply(ev, ev, ev)


def _power_x_exponent(u: Dual2, w: Dual2, node: BinOp) -> Dual2:
    """u^w for an exponent depending on x only; a zero base is handled by limits (w > 0)."""
    _domain(u.value < 0, "negative base with a variable exponent", node)
    _domain((u.value == 0) & (w.value <= 0), "zero base needs a positive exponent", node)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        b, c = u.value, w.value
        zero = b == 0
        logb = np.where(zero, 0.0, np.log(np.where(zero, 1.0, b)))
        f = b**c
        f_u = c * b ** (c - 1.0)
        f_uu = np.where(c * (c - 1.0) == 0, 0.0, c * (c - 1.0) * b ** (c - 2.0))
        f_w = f * logb
        f_uw = np.where(zero, 0.0, b ** (c - 1.0) * (1.0 + c * logb))
    ut, ux = u.d_t[..., None], u.d_x
    return Dual2(
        f,
        f_u * u.d_t,
        f_uu * u.d_t * u.d_t + f_u * u.d_tt,
        f_u[..., None] * ux + f_w[..., None] * w.d_x,
        (f_uu * u.d_t)[..., None] * ux + f_u[..., None] * u.d_xt + (f_uw[..., None] * ut) * w.d_x,
    )


def eval_dual2(expr: Expr, x, t, coeffs: Mapping[str, CoefficientField] | None = None) -> Dual2:
    """Evaluate an expression and its derivatives.

    Args:
        expr: parsed expression.
        x: point(s) of shape (..., n).
        t: value(s) of shape (...).
        coeffs: coefficient bindings by name; numbers are promoted to constants.

    Returns:
        Dual2 with value = g, d_t = g_t, d_tt = g_tt, d_x = g_x, d_xt = g_tx.

    Raises:
        EvalDomainError: log/sqrt/division/power outside their domain, unbound names.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    n = x.shape[-1]
    shape = np.broadcast_shapes(x.shape[:-1], t.shape)
    xarr = np.broadcast_to(x, shape + (n,))
    tt = np.broadcast_to(t, shape).astype(float)
    zero, zx = np.zeros(shape), np.zeros(shape + (n,))
    xs = []
    for k in range(n):
        dx = np.zeros(shape + (n,))
        dx[..., k] = 1.0
        xs.append(Dual2(xarr[..., k].astype(float), zero, zero, dx, zx))
    env = {
        "shape": shape,
        "n": n,
        "t": Dual2(tt, np.ones(shape), zero, zx, zx),
        "x": xs,
        "xarr": xarr,
        "coeffs": {k: as_field(v) for k, v in (coeffs or {}).items()},
    }
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _eval(expr, env)


def scalar_eval(expr: Expr, x, t, coeffs=None) -> np.ndarray:
    return eval_dual2(expr, x, t, coeffs).value


# ---------------------------------------------------------------------------
# Wrapping as an integrand


def _raw_evaluator(expr: Expr, coeffs) -> callable:
    def ev(x, t):
        d = eval_dual2(expr, x, t, coeffs)
        # an undefined second derivative at the origin is a singular (infinite) one
        g_tt = np.where((np.broadcast_to(t, d.d_tt.shape) == 0) & np.isnan(d.d_tt), np.inf, d.d_tt)
        return IntegrandValues(d.value, d.d_t, g_tt, d.d_xt, d.d_x)

    return ev


def _needs_extension(raw, xs: np.ndarray, t0: float) -> bool:
    zero = np.zeros(len(xs))
    try:
        with np.errstate(all="ignore"):
            v0 = raw(xs, zero)
            ts = np.linspace(0.0, t0, 33)[1:]
            vin = raw(np.broadcast_to(xs[:, None, :], (len(xs), len(ts), xs.shape[1])), np.broadcast_to(ts, (len(xs), len(ts))))
    except EvalDomainError:
        return True
    if not (np.all(np.isfinite(v0.g)) and np.all(np.isfinite(v0.g_t))):
        return True
    if np.any(np.abs(v0.g_t) > 1e-12):
        return True
    return bool(np.any(vin.g_t < -1e-12))


def to_integrand(
    expr: Expr | str,
    coeffs: Mapping[str, object] | None = None,
    t0: float = 1.0,
    box: Box | None = None,
    t_max: float | None = None,
    extension: str = "auto",
) -> IntegrandSpec:
    """Wrap an expression as an IntegrandSpec.

    g(x, 0) is subtracted so that the profile is normalized.  When the
    expression is singular at t = 0, has g_t(x, 0) != 0, or decreases on
    (0, t0] (``extension="auto"``), it is replaced on [0, t0] by the same convex
    C^1 polynomial extension used for the slow-growth family.  Sampled
    non-convexity becomes a warning on the returned spec.
    """
    text = expr if isinstance(expr, str) else None
    if isinstance(expr, str):
        expr = parse(expr)
    box = box or Box.unit(2)
    bound = {k: as_field(v) for k, v in (coeffs or {}).items()}
    missing = coefficient_names(expr) - set(bound)
    if missing:
        raise InputDomainError(f"unbound coefficient(s): {sorted(missing)}")
    raw = _raw_evaluator(expr, bound)
    xs = box_samples(box, 64)
    if extension not in ("auto", "always", "never"):
        raise InputDomainError(f"unknown extension mode {extension!r}")
    smooth = extension == "always" or (extension == "auto" and _needs_extension(raw, xs, t0))
    warnings = []
    knots: tuple[float, ...] = ()
    params: dict[str, object] = {}
    if smooth:
        mode = choose_extension(raw, t0, xs)
        ev = smooth_below(raw, t0, mode)
        knots = (t0,)
        params["extension"] = mode
    else:
        ev = normalized(raw)
    if t_max is None:
        try:
            with np.errstate(all="ignore"):
                far = raw(box.center[None, :], np.array([T_MAX_POLYNOMIAL]))
            finite = np.isfinite(far.g_tt[0]) and np.isfinite(far.g[0])
        except EvalDomainError:
            finite = False
        t_max = T_MAX_POLYNOMIAL if finite else T_MAX_EXPONENTIAL
    ts = t_samples(t_max, 128)
    try:
        with np.errstate(all="ignore"):
            v = ev(np.broadcast_to(xs[:, None, :], (len(xs), len(ts), box.dim)), np.broadcast_to(ts, (len(xs), len(ts))))
        fin = np.isfinite(v.g_tt)
        if np.any(fin & (v.g_tt < -1e-10 * np.maximum(1.0, np.abs(np.where(fin, v.g_tt, 0.0))))):
            warnings.append("sampled g_tt < 0: profile is not convex in t")
        if np.any(np.isfinite(v.g_t) & (v.g_t < -1e-12)):
            warnings.append("sampled g_t < 0: profile is not increasing in t")
    except EvalDomainError as exc:
        warnings.append(f"evaluation failed while sampling: {exc}")
    used = {k: bound[k] for k in coefficient_names(expr)}
    return IntegrandSpec(
        family=Family.CUSTOM,
        coefficients=used,
        t0=float(t0),
        evaluator=ev,
        box=box,
        t_max=float(t_max),
        x_dependent=uses_x(expr) or not all(c.is_constant for c in used.values()),
        knots=knots,
        params=params,
        warnings=tuple(warnings),
        text=text if text is not None else to_text(expr),
    )
