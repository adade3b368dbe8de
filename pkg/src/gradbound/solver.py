"""Discrete minimization of F(u) = sum over cells of g(x, |Du|) on square grids.

Bilinear elements on a uniform square grid, m-component maps, n = 2.  Cell
integrals use 2x2 Gauss points, which makes the quadratic family's energy exact
on bilinear fields and its gradient equal to the standard bilinear stiffness
action.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .coefficients import Box
from .errors import ConvexityError, InputDomainError, IntegrandRangeError, LineSearchError
from .integrands import Family, IntegrandSpec, RegularizationClamp, assert_convex, clamp_regularize

T_EPS = 1e-12
DEFAULT_LOWER_CLAMP = 1e-3

_G = 0.5 / math.sqrt(3.0)
# Gauss points in local cell coordinates (xi along x1, eta along x2)
_XI = np.array([0.5 - _G, 0.5 + _G, 0.5 - _G, 0.5 + _G])
_ETA = np.array([0.5 - _G, 0.5 - _G, 0.5 + _G, 0.5 + _G])


@dataclass(frozen=True)
class Grid:
    box: Box
    N: int
    m: int = 1

    def __post_init__(self):
        if self.box.dim != 2:
            raise InputDomainError("the solver works on 2-dimensional boxes")
        w = np.asarray(self.box.hi) - np.asarray(self.box.lo)
        if abs(w[0] - w[1]) > 1e-12 * max(w):
            raise InputDomainError(f"box must be square for a uniform mesh, got sides {w.tolist()}")
        if self.N < 4:
            raise InputDomainError(f"need N >= 4 cells per side, got {self.N}")
        if self.m < 1:
            raise InputDomainError("component count must be positive")

    @classmethod
    def from_width(cls, box: Box, h: float, m: int = 1) -> "Grid":
        side = float(box.hi[0] - box.lo[0])
        N = int(round(side / h))
        if abs(N * h - side) > 1e-9 * side:
            raise InputDomainError(f"mesh width {h} does not divide the box side {side}")
        return cls(box, N, m)

    @property
    def h(self) -> float:
        return float(self.box.hi[0] - self.box.lo[0]) / self.N

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (N+1, N+1, 2), index [i, j] with i along x1."""
        s = np.arange(self.N + 1) * self.h
        X, Y = np.meshgrid(self.box.lo[0] + s, self.box.lo[1] + s, indexing="ij")
        return np.stack([X, Y], axis=-1)

    @property
    def cell_centers(self) -> np.ndarray:
        c = (np.arange(self.N) + 0.5) * self.h
        X, Y = np.meshgrid(self.box.lo[0] + c, self.box.lo[1] + c, indexing="ij")
        return np.stack([X, Y], axis=-1)

    @property
    def gauss_points(self) -> np.ndarray:
        """Quadrature points, shape (N, N, 4, 2)."""
        base = np.stack(np.meshgrid(np.arange(self.N), np.arange(self.N), indexing="ij"), axis=-1) * self.h
        off = np.stack([_XI, _ETA], axis=-1) * self.h
        return np.asarray(self.box.lo) + base[:, :, None, :] + off[None, None, :, :]

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros((self.N + 1, self.N + 1), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask


# ---------------------------------------------------------------------------
# Boundary data


@dataclass(frozen=True)
class BoundaryDatum:
    """Dirichlet data.

    kinds: ``affine`` (u = A x + b), ``harmonic_quadratic`` (scale (x1^2 - x2^2)
    in every component), ``sine`` (amplitude sin(k pi x1 + c pi/2) cos(k pi x2)
    for component c), ``radial`` (scale rho(r) (x - center)/r for m = 2 and
    scale rho(r) for m = 1, rho in {linear, quadratic, sqrt}).
    """

    kind: str
    m: int = 1
    A: tuple = ((1.0, 0.0),)
    b: tuple = (0.0,)
    scale: float = 1.0
    k: float = 1.0
    amplitude: float = 1.0
    profile: str = "quadratic"
    center: tuple = (0.5, 0.5)

    KINDS = ("affine", "harmonic_quadratic", "sine", "radial")
    PROFILES = ("linear", "quadratic", "sqrt")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InputDomainError(f"unknown boundary datum {self.kind!r}; known: {', '.join(self.KINDS)}")
        if self.kind == "affine":
            A = np.asarray(self.A, dtype=float)
            if A.shape != (self.m, 2) or np.asarray(self.b).shape != (self.m,):
                raise InputDomainError(f"affine datum needs A of shape ({self.m}, 2) and b of length {self.m}")
        if self.kind == "radial":
            if self.profile not in self.PROFILES:
                raise InputDomainError(f"unknown radial profile {self.profile!r}")
            if self.m not in (1, 2):
                raise InputDomainError("radial datum supports m = 1 or m = 2")

    @classmethod
    def affine(cls, A, b=None) -> "BoundaryDatum":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float).reshape(-1)
        return cls("affine", A.shape[0], tuple(map(tuple, A.tolist())), tuple(b.tolist()))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        if self.kind == "affine":
            return x @ np.asarray(self.A).T + np.asarray(self.b)
        if self.kind == "harmonic_quadratic":
            v = self.scale * (x1 * x1 - x2 * x2)
            return np.repeat(v[..., None], self.m, axis=-1)
        if self.kind == "sine":
            comps = [self.amplitude * np.sin(self.k * np.pi * x1 + c * np.pi / 2) * np.cos(self.k * np.pi * x2)
                     for c in range(self.m)]
            return np.stack(comps, axis=-1)
        d = x - np.asarray(self.center)
        r = np.sqrt(np.sum(d * d, axis=-1))
        rho = {"linear": r, "quadratic": r * r, "sqrt": np.sqrt(r)}[self.profile]
        if self.m == 1:
            return (self.scale * rho)[..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, d / r[..., None], 0.0)
        return self.scale * rho[..., None] * unit

    def scaled(self, lam: float) -> "BoundaryDatum":
        if self.kind == "affine":
            return replace(self, A=tuple(map(tuple, (lam * np.asarray(self.A)).tolist())),
                           b=tuple((lam * np.asarray(self.b)).tolist()))
        if self.kind == "sine":
            return replace(self, amplitude=lam * self.amplitude)
        return replace(self, scale=lam * self.scale)

    def describe(self) -> str:
        if self.kind == "affine":
            return f"affine(A={np.asarray(self.A).tolist()}, b={list(self.b)})"
        if self.kind == "harmonic_quadratic":
            return f"harmonic_quadratic(scale={self.scale!r}, m={self.m})"
        if self.kind == "sine":
            return f"sine(k={self.k!r}, amplitude={self.amplitude!r}, m={self.m})"
        return f"radial(profile={self.profile}, scale={self.scale!r}, m={self.m})"


@dataclass
class DiscreteField:
    values: np.ndarray  # (N+1, N+1, m)
    boundary_mask: np.ndarray  # (N+1, N+1)
    provenance: str = ""

    def copy(self) -> "DiscreteField":
        return DiscreteField(self.values.copy(), self.boundary_mask.copy(), self.provenance)


def coons_interpolation(boundary_values: np.ndarray) -> np.ndarray:
    """Transfinite bilinear (Coons) interpolation of the boundary ring into the interior."""
    u = np.array(boundary_values, dtype=float, copy=True)
    n1, n2 = u.shape[0] - 1, u.shape[1] - 1
    s = (np.arange(n1 + 1) / n1)[:, None, None]
    r = (np.arange(n2 + 1) / n2)[None, :, None]
    left, right = u[0:1, :, :], u[-1:, :, :]
    bottom, top = u[:, 0:1, :], u[:, -1:, :]
    corners = (
        (1 - s) * (1 - r) * u[0, 0] + s * (1 - r) * u[-1, 0] + (1 - s) * r * u[0, -1] + s * r * u[-1, -1]
    )
    inner = (1 - s) * left + s * right + (1 - r) * bottom + r * top - corners
    mask = np.zeros(u.shape[:2], dtype=bool)
    mask[1:-1, 1:-1] = True
    u[mask] = inner[mask]
    return u


def initial_field(grid: Grid, datum: BoundaryDatum, noise: float = 0.0, seed: int = 0) -> DiscreteField:
    if datum.m != grid.m:
        raise InputDomainError(f"datum has {datum.m} components, grid expects {grid.m}")
    nodes = grid.nodes
    vals = datum(nodes)
    if not np.all(np.isfinite(vals[grid.boundary_mask()])):
        raise InputDomainError("boundary datum is not finite on the boundary nodes")
    u = coons_interpolation(np.where(grid.boundary_mask()[..., None], vals, 0.0))
    if noise:
        rng = np.random.default_rng(seed)
        u[1:-1, 1:-1] += noise * rng.uniform(-1.0, 1.0, u[1:-1, 1:-1].shape)
    return DiscreteField(u, grid.boundary_mask(), datum.describe())


# ---------------------------------------------------------------------------
# Energy and gradient


def _edge_differences(grid: Grid, u: np.ndarray):
    h = grid.h
    bottom = (u[1:, :-1] - u[:-1, :-1]) / h
    top = (u[1:, 1:] - u[:-1, 1:]) / h
    left = (u[:-1, 1:] - u[:-1, :-1]) / h
    right = (u[1:, 1:] - u[1:, :-1]) / h
    return bottom, top, left, right


def gauss_gradients(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Du at the Gauss points, shape (N, N, 4, m, 2)."""
    bottom, top, left, right = _edge_differences(grid, u)
    eta = _ETA[None, None, :, None]
    xi = _XI[None, None, :, None]
    dx = (1 - eta) * bottom[:, :, None, :] + eta * top[:, :, None, :]
    dy = (1 - xi) * left[:, :, None, :] + xi * right[:, :, None, :]
    return np.stack([dx, dy], axis=-1)


@dataclass(frozen=True)
class CellGradient:
    Du: np.ndarray  # (N, N, m, 2) at cell centers
    magnitude: np.ndarray  # (N, N)
    centers: np.ndarray  # (N, N, 2)


def cell_gradients(grid: Grid, u: DiscreteField | np.ndarray) -> CellGradient:
    vals = u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)
    bottom, top, left, right = _edge_differences(grid, vals)
    Du = np.stack([0.5 * (bottom + top), 0.5 * (left + right)], axis=-1)
    return CellGradient(Du, np.sqrt(np.sum(Du * Du, axis=(-2, -1))), grid.cell_centers)


class _Assembler:
    """Caches quadrature points for repeated energy/gradient evaluations."""

    def __init__(self, spec: IntegrandSpec, grid: Grid):
        if spec.dim != 2:
            raise InputDomainError("integrand must be defined on a 2-dimensional box")
        self.spec, self.grid = spec, grid
        xq = grid.gauss_points
        inside = spec.box.contains(xq)
        if not np.all(inside):
            raise InputDomainError("grid box must lie inside the integrand's box")
        self.xq = xq if spec.x_dependent else np.broadcast_to(spec.box.center, xq.shape)
        self.w = grid.h * grid.h / 4.0

    def _checked(self, t, what):
        v = self.spec.raw(self.xq, t)
        bad = ~np.isfinite(v.g) if what == "g" else ~(np.isfinite(v.g_t) & np.isfinite(v.g_tt) | (t <= T_EPS))
        if np.any(bad):
            i, j, q = np.argwhere(bad)[0]
            raise IntegrandRangeError(
                f"integrand not representable in cell ({i}, {j}) at |Du| = {t[i, j, q]!r}"
            )
        return v

    def energy(self, u: np.ndarray) -> float:
        D = gauss_gradients(self.grid, u)
        t = np.sqrt(np.sum(D * D, axis=(-2, -1)))
        v = self._checked(t, "g")
        return float(np.sum(v.g) * self.w)

    def flux(self, u: np.ndarray):
        D = gauss_gradients(self.grid, u)
        t = np.sqrt(np.sum(D * D, axis=(-2, -1)))
        v = self._checked(t, "g")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(t > T_EPS, v.g_t / t, np.where(np.isfinite(v.g_tt), v.g_tt, 0.0))
        return D, t, v, ratio[..., None, None] * D

    def gradient(self, u: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
        D, t, v, P = self.flux(u)
        energy = float(np.sum(v.g) * self.w)
        h, w = self.grid.h, self.w
        px, py = P[..., 0], P[..., 1]  # (N, N, 4, m)
        eta = _ETA[None, None, :, None]
        xi = _XI[None, None, :, None]
        A = np.sum(w * px * (1 - eta), axis=2) / h
        B = np.sum(w * px * eta, axis=2) / h
        C = np.sum(w * py * (1 - xi), axis=2) / h
        Dd = np.sum(w * py * xi, axis=2) / h
        g = np.zeros_like(u)
        g[:-1, :-1] += -A - C
        g[1:, :-1] += A - Dd
        g[:-1, 1:] += -B + C
        g[1:, 1:] += B + Dd
        g[mask] = 0.0
        return energy, g

    def nonconvex_cell(self, u: np.ndarray):
        D = gauss_gradients(self.grid, u)
        t = np.sqrt(np.sum(D * D, axis=(-2, -1)))
        v = self.spec.raw(self.xq, t)
        bad = (v.g_tt < 0) | (v.g_t < 0)
        if np.any(bad):
            i, j, q = np.argwhere(bad)[0]
            return int(i), int(j), float(t[i, j, q])
        return None


def _values_of(u) -> np.ndarray:
    return u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)


def _check_conforms(grid: Grid, vals: np.ndarray):
    if vals.shape != (grid.N + 1, grid.N + 1, grid.m):
        raise InputDomainError(f"field shape {vals.shape} does not match grid ({grid.N + 1}, {grid.N + 1}, {grid.m})")


def discrete_energy(spec: IntegrandSpec, grid: Grid, u) -> float:
    """Sum over cells of g(x, |Du|) with 2x2 Gauss quadrature."""
    vals = _values_of(u)
    _check_conforms(grid, vals)
    return _Assembler(spec, grid).energy(vals)


def energy_gradient(spec: IntegrandSpec, grid: Grid, u) -> np.ndarray:
    """Exact gradient of :func:`discrete_energy` w.r.t. node values; zero on fixed nodes."""
    vals = _values_of(u)
    _check_conforms(grid, vals)
    mask = u.boundary_mask if isinstance(u, DiscreteField) else grid.boundary_mask()
    return _Assembler(spec, grid).gradient(vals, mask)[1]


def euler_residual(spec: IntegrandSpec, grid: Grid, u) -> float:
    """Sup over free nodes of |energy gradient| / h^2."""
    g = energy_gradient(spec, grid, u)
    return float(np.max(np.abs(g))) / grid.h**2


def sup_norm_on_ball(grid: Grid, Du: CellGradient, center, rho: float) -> float:
    """Max of |Du| over cells whose centers lie in the closed ball B_rho(center)."""
    center = np.asarray(center, dtype=float)
    if rho < grid.h:
        raise InputDomainError(f"ball radius {rho} is below the mesh width {grid.h}")
    if np.any(center - rho < np.asarray(grid.box.lo) - 1e-12) or np.any(center + rho > np.asarray(grid.box.hi) + 1e-12):
        raise InputDomainError("ball must lie inside the box")
    d = Du.centers - center
    inside = np.sum(d * d, axis=-1) <= rho * rho * (1 + 1e-12)
    if not np.any(inside):
        raise InputDomainError("no cell centers inside the ball")
    return float(np.max(Du.magnitude[inside]))


# ---------------------------------------------------------------------------
# Minimization


class Method(enum.Enum):
    GRADIENT_DESCENT = "gd"
    NONLINEAR_CG = "ncg"


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-8
    max_iter: int = 20_000
    method: Method = Method.NONLINEAR_CG
    c1: float = 1e-4
    seed: int = 0
    init_noise: float = 0.0
    lower_clamp: float = DEFAULT_LOWER_CLAMP

    def __post_init__(self):
        if not self.tol > 0:
            raise InputDomainError("tol must be positive")
        if not 0 < self.c1 < 0.5:
            raise InputDomainError("Armijo constant must lie in (0, 1/2)")
        if self.max_iter < 1:
            raise InputDomainError("max_iter must be positive")


@dataclass
class Solution:
    u: DiscreteField
    grid: Grid
    spec: IntegrandSpec
    iterations: int
    grad_norm: float
    energy_trace: list[float]
    converged: bool
    status: str
    restarts: int = 0
    notes: list[str] = field(default_factory=list)


def prepare_spec(spec: IntegrandSpec, opts: SolveOptions) -> IntegrandSpec:
    """Apply the default lower clamp to slow-growth integrands."""
    if spec.family is Family.LINEAR_MINUS_SQRT and spec.clamp is None:
        return clamp_regularize(spec, RegularizationClamp(opts.lower_clamp, math.inf))
    return spec


def minimize(spec: IntegrandSpec, grid: Grid, boundary: BoundaryDatum, opts: SolveOptions | None = None,
             init: DiscreteField | None = None) -> Solution:
    """Minimize the discrete energy over free interior nodes.

    Nonlinear CG (Polak-Ribiere+, restarted on loss of descent) or plain
    gradient descent.  Each step starts from a secant curvature estimate along
    the search direction and is accepted by Armijo backtracking; near roundoff
    level the energy test is replaced by the approximate Wolfe test on the
    directional derivative.
    """
    opts = opts or SolveOptions()
    spec = prepare_spec(spec, opts)
    assert_convex(spec)
    u0 = init.copy() if init is not None else initial_field(grid, boundary, opts.init_noise, opts.seed)
    _check_conforms(grid, u0.values)
    asm = _Assembler(spec, grid)
    mask = u0.boundary_mask
    u = u0.values.copy()
    E, g = asm.gradient(u, mask)
    trace = [E]
    d = -g
    restarts = 0
    status = "max_iter"
    slack = lambda e: 1e-14 * max(1.0, abs(e))
    it = 0
    gnorm = float(np.max(np.abs(g)))
    while it < opts.max_iter:
        if gnorm <= opts.tol:
            status = "converged"
            break
        slope = float(np.sum(g * d))
        if slope >= 0:
            d, slope = -g, -float(np.sum(g * g))
            restarts += 1
        dmax = float(np.max(np.abs(d)))
        probe = 1e-7 * max(1.0, float(np.max(np.abs(u)))) / dmax
        _, g_probe = asm.gradient(u + probe * d, mask)
        curv = float(np.sum((g_probe - g) * d)) / probe
        if curv <= 0:
            bad = asm.nonconvex_cell(u)
            if bad is not None:
                raise ConvexityError(f"integrand not convex in cell ({bad[0]}, {bad[1]}) at |Du| = {bad[2]!r}")
            step = probe * 10.0
        else:
            step = -slope / curv
        accepted = False
        for _ in range(60):
            u_new = u + step * d
            try:
                E_new, g_new = asm.gradient(u_new, mask)
            except IntegrandRangeError:
                step *= 0.5
                continue
            if E_new <= E + opts.c1 * step * slope + slack(E):
                accepted = True
            elif E_new <= E + slack(E) and float(np.sum(g_new * d)) <= (2 * opts.c1 - 1) * slope:
                accepted = True
            if accepted:
                break
            step *= 0.5
        if not accepted:
            if not np.array_equal(d, -g):
                d = -g
                restarts += 1
                continue
            diagnosis = f"no acceptable step along steepest descent (gradient sup-norm {gnorm:.3e})"
            raise LineSearchError(
                diagnosis,
                field=DiscreteField(u, mask, u0.provenance),
                diagnosis=diagnosis,
            )
        it += 1
        u, E = u_new, E_new
        trace.append(E)
        if opts.method is Method.NONLINEAR_CG:
            y = g_new - g
            beta = max(0.0, float(np.sum(g_new * y)) / float(np.sum(g * g)))
            d = -g_new + beta * d
        else:
            d = -g_new
        g = g_new
        gnorm = float(np.max(np.abs(g)))
    else:
        if gnorm <= opts.tol:
            status = "converged"
    result = DiscreteField(u, mask, u0.provenance)
    return Solution(result, grid, spec, it, gnorm, trace, status == "converged", status, restarts)


# ---------------------------------------------------------------------------
# Dumps


def write_field_csv(field_: DiscreteField, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_i", "node_j", "component", "value"])
        v = field_.values
        for i in range(v.shape[0]):
            for j in range(v.shape[1]):
                for c in range(v.shape[2]):
                    w.writerow([i, j, c, f"{v[i, j, c]:.17g}"])


def write_gradient_csv(Du: CellGradient, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_i", "cell_j", "|Du|"])
        mag = Du.magnitude
        for i in range(mag.shape[0]):
            for j in range(mag.shape[1]):
                w.writerow([i, j, f"{mag[i, j]:.17g}"])
