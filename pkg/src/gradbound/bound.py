"""Empirical evaluation of the local gradient bound on discrete minimizers.

For a solution u on a ball pair B_rho, B_R with a common center the bound reads
sup_{B_rho} |Du|^lhs_exp <= C (int_{B_R} (1 + g(x, |Du|)) dx)^rhs_exp, and the
reported quantity is ratio = lhs / rhs.  Since C is not explicit, what is
checked is the stability of the ratio under mesh refinement and under changes
of the regularization clamp.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import Box
from .errors import GradBoundError, InfeasibleExponentsError, InputDomainError
from .integrands import HProfile, IntegrandSpec, RegularizationClamp, clamp_regularize, default_h_profile
from .solver import BoundaryDatum, Grid, Solution, SolveOptions, cell_gradients, minimize, sup_norm_on_ball
from .structural import ExponentSet

CSV_COLUMNS = (
    "axis_value", "h", "N", "M", "rho", "R", "lhs", "rhs_base", "rhs", "ratio", "v_integral", "iterations",
)


@dataclass(frozen=True)
class BoundSample:
    rho: float
    R: float
    sup_grad: float
    lhs: float
    rhs_base: float
    rhs: float
    ratio: float
    v_integral: float
    h: float
    N: float
    M: float
    iterations: int
    axis_value: float = math.nan
    clamp_active: bool = False
    max_g_tt: float = math.nan


@dataclass
class SweepResult:
    axis: str
    samples: list[BoundSample] = field(default_factory=list)
    error: str | None = None

    @property
    def ratios(self) -> np.ndarray:
        return np.array([s.ratio for s in self.samples])

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios)) if self.samples else math.nan

    @staticmethod
    def _spread(r: np.ndarray) -> float:
        if r.size == 0:
            return math.nan
        if np.all(r == 0):
            return 1.0
        lo = float(np.min(r))
        return float(np.max(r)) / lo if lo > 0 else math.inf

    @property
    def ratio_spread(self) -> float:
        return self._spread(self.ratios)

    @property
    def inactive_spread(self) -> float:
        """Spread over the samples whose clamp was not active on the solution."""
        return self._spread(np.array([s.ratio for s in self.samples if not s.clamp_active]))


# ---------------------------------------------------------------------------
# Exact disc/cell areas


def _arc_primitive(u, R):
    # antiderivative of sqrt(R^2 - u^2)
    u = min(max(u, -R), R)
    return 0.5 * (u * math.sqrt(max(R * R - u * u, 0.0)) + R * R * math.asin(u / R))


def disc_rect_area(x0: float, x1: float, y0: float, y1: float, R: float) -> float:
    """Area of [x0, x1] x [y0, y1] intersected with the disc of radius R at the origin."""
    a, b = max(x0, -R), min(x1, R)
    if a >= b or y0 >= R or y1 <= -R:
        return 0.0
    cuts = {a, b}
    for c in (y0, y1):
        if abs(c) < R:
            r = math.sqrt(R * R - c * c)
            cuts.update(v for v in (-r, r) if a < v < b)
    pts = sorted(cuts)
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (lo + hi)
        s = math.sqrt(max(R * R - mid * mid, 0.0))
        top_is_arc = s < y1
        bottom_is_arc = -s > y0
        top = s if top_is_arc else y1
        bottom = -s if bottom_is_arc else y0
        if top <= bottom:
            continue
        arc = _arc_primitive(hi, R) - _arc_primitive(lo, R)
        upper = arc if top_is_arc else y1 * (hi - lo)
        lower = -arc if bottom_is_arc else y0 * (hi - lo)
        total += upper - lower
    return total


def ball_cell_weights(grid: Grid, center, R: float) -> np.ndarray:
    """Area of each cell inside the closed disc B_R(center), shape (N, N)."""
    center = np.asarray(center, dtype=float)
    h = grid.h
    lo = np.asarray(grid.box.lo) + np.arange(grid.N)[:, None] * h - center  # (N, 2) per axis
    x0, y0 = lo[:, 0][:, None], lo[:, 1][None, :]
    x1, y1 = x0 + h, y0 + h
    near_x = np.minimum(np.maximum(0.0, x0), x1)
    near_y = np.minimum(np.maximum(0.0, y0), y1)
    far_x = np.maximum(np.abs(x0), np.abs(x1))
    far_y = np.maximum(np.abs(y0), np.abs(y1))
    outside = near_x**2 + near_y**2 >= R * R
    inside = far_x**2 + far_y**2 <= R * R
    w = np.where(inside, h * h, 0.0)
    for i, j in np.argwhere(~outside & ~inside):
        w[i, j] = disc_rect_area(float(x0[i, 0]), float(x1[i, 0]), float(y0[0, j]), float(y1[0, j]), R)
    return w


# ---------------------------------------------------------------------------
# Bound evaluation


def evaluate_bound(
    solution: Solution,
    spec: IntegrandSpec,
    exps: ExponentSet,
    center,
    rho: float,
    R: float,
    h_profile: HProfile | None = None,
    base_spec: IntegrandSpec | None = None,
    axis_value: float = math.nan,
) -> BoundSample:
    """Evaluate lhs, rhs and their ratio on a solution.

    rhs_base integrates 1 + g(x, |Du|) over B_R with cell-center gradients and
    exact disc/cell intersection areas.  The diagnostic v_integral is
    int_{B_R} (1 + |Du|^(2 tau) K_M(|Du|)^tau) with K_M taken from the comparison
    profile.  ``base_spec`` (the unclamped integrand) is used to decide whether
    the clamp was active on the realized gradients.
    """
    if not exps.feasible:
        raise InfeasibleExponentsError("bound evaluation needs feasible exponents")
    if not 0 < rho < R:
        raise InputDomainError("radii must satisfy 0 < rho < R")
    grid = solution.grid
    center = np.asarray(center, dtype=float)
    if np.any(center - R < np.asarray(grid.box.lo) - 1e-12) or np.any(center + R > np.asarray(grid.box.hi) + 1e-12):
        raise InputDomainError(f"ball B_R(center) with R = {R} leaves the box")
    Du = cell_gradients(grid, solution.u)
    sup = sup_norm_on_ball(grid, Du, center, rho)
    lhs_exp = float(exps.lhs_exponent)
    lhs = sup**lhs_exp if sup > 0 else 0.0
    w = ball_cell_weights(grid, center, R)
    x = Du.centers if spec.x_dependent else np.broadcast_to(spec.box.center, Du.centers.shape)
    v = spec.evaluate(x, Du.magnitude)
    rhs_base = float(np.sum(w * (1.0 + v.g)))
    rhs = rhs_base ** float(exps.rhs_exponent)
    prof = h_profile or default_h_profile(spec)
    t = Du.magnitude
    tau = float(exps.tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        kM = np.where(t > 0, prof.K_M(np.where(t > 0, t, 1.0)), 0.0)
        vt = np.where(t > 0, (t * t * kM) ** tau, 0.0)
    v_integral = float(np.sum(w * (1.0 + vt)))
    clamp = spec.clamp
    active, max_gtt = False, math.nan
    if clamp is not None and base_spec is not None:
        xb = Du.centers if base_spec.x_dependent else np.broadcast_to(base_spec.box.center, Du.centers.shape)
        b = base_spec.raw(xb, t)
        max_gtt = float(np.max(b.g_tt))
        active = bool(np.any(b.g_tt > clamp.M) or np.any(b.g_tt < clamp.N))
    return BoundSample(
        rho, R, sup, lhs, rhs_base, rhs, lhs / rhs, v_integral, grid.h,
        clamp.N if clamp else math.nan, clamp.M if clamp else math.nan,
        solution.iterations, axis_value, active, max_gtt,
    )


@dataclass(frozen=True)
class SweepConfig:
    spec: IntegrandSpec
    datum: BoundaryDatum
    exps: ExponentSet
    box: Box
    widths: tuple[float, ...] = (1 / 16, 1 / 32, 1 / 64)
    clamps: tuple[tuple[float, float], ...] = ()
    opts: SolveOptions = SolveOptions()
    center: tuple[float, ...] | None = None
    rho: float | None = None
    R: float | None = None
    h_profile: HProfile | None = None
    workers: int = 1

    def ball(self):
        half = 0.5 * float(self.box.hi[0] - self.box.lo[0])
        center = self.box.center if self.center is None else np.asarray(self.center, dtype=float)
        rho = 0.2 * half if self.rho is None else self.rho
        R = 0.4 * half if self.R is None else self.R
        return center, rho, R


def _run_points(points, fn, workers: int, result: SweepResult) -> SweepResult:
    """Evaluate sweep points in config order; stop at the first failure, keeping earlier samples."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fn, p) for p in points]
            outcomes = []
            for f in futures:
                try:
                    outcomes.append(f.result())
                except GradBoundError as exc:
                    outcomes.append(exc)
    else:
        outcomes = []
        for p in points:
            try:
                outcomes.append(fn(p))
            except GradBoundError as exc:
                outcomes.append(exc)
                break
    for o in outcomes:
        if isinstance(o, Exception):
            result.error = f"{type(o).__name__}: {o}"
            break
        result.samples.append(o)
    return result


def refinement_sweep(cfg: SweepConfig) -> SweepResult:
    """Solve at each mesh width and evaluate the bound; ratio_spread = max/min ratio."""
    if len(cfg.widths) < 3:
        raise InputDomainError("a refinement sweep needs at least 3 mesh widths")
    center, rho, R = cfg.ball()

    def point(hw):
        grid = Grid.from_width(cfg.box, hw, cfg.datum.m)
        sol = minimize(cfg.spec, grid, cfg.datum, cfg.opts)
        return evaluate_bound(sol, sol.spec, cfg.exps, center, rho, R, cfg.h_profile, axis_value=hw)

    return _run_points(list(cfg.widths), point, cfg.workers, SweepResult("h"))


def clamp_sweep(cfg: SweepConfig) -> SweepResult:
    """Re-clamp the base integrand for each (N, M), re-solve on the first mesh width, evaluate."""
    if len(cfg.clamps) < 3:
        raise InputDomainError("a clamp sweep needs at least 3 clamps")
    if cfg.spec.clamp is not None:
        raise InputDomainError("clamp sweeps start from an unclamped integrand")
    center, rho, R = cfg.ball()
    grid = Grid.from_width(cfg.box, cfg.widths[0], cfg.datum.m)
    Ns = {c[0] for c in cfg.clamps}
    axis = "M" if len(Ns) == 1 else "N"
    prof = cfg.h_profile or default_h_profile(cfg.spec)

    def point(c):
        clamped = clamp_regularize(cfg.spec, RegularizationClamp(*c))
        sol = minimize(clamped, grid, cfg.datum, cfg.opts)
        value = c[1] if axis == "M" else c[0]
        return evaluate_bound(sol, clamped, cfg.exps, center, rho, R, prof, base_spec=cfg.spec, axis_value=value)

    return _run_points(list(cfg.clamps), point, cfg.workers, SweepResult(axis))


# ---------------------------------------------------------------------------
# Reports


def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def report_csv(result: SweepResult, path) -> None:
    """One row per sample; columns as in CSV_COLUMNS, numbers with 17 significant digits."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for s in result.samples:
                w.writerow([_num(getattr(s, c)) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc


def read_report_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "iterations" else float(v)) for k, v in r.items()} for r in rows]


def write_svg(result: SweepResult, path, title: str = "") -> None:
    """Static line plot of ratio against the sweep axis (log-scaled axis)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "gradbound", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        xs = [s.axis_value for s in result.samples]
        ax.plot(xs, result.ratios, marker="o")
        if xs and min(xs) > 0:
            ax.set_xscale("log")
        ax.set_xlabel(result.axis)
        ax.set_ylabel("lhs / rhs")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
