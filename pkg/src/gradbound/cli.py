"""Command-line entry point.

Exit codes: 0 success, 1 certification or solve failure, 2 usage or
configuration error.  Reports go to the ``--out`` directory only; progress
text goes to stdout (suppressed by ``--quiet``) and diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .bound import SweepConfig, SweepResult, clamp_sweep, evaluate_bound, refinement_sweep, report_csv, write_svg
from .config import ConfigError, ExperimentConfig, parse_config
from .errors import GradBoundError, InfeasibleExponentsError, LineSearchError
from .integrands import clamp_regularize
from .lemmas import lemma_suite
from .solver import Grid, cell_gradients, euler_residual, minimize, write_field_csv, write_gradient_csv
from .structural import admissible_window_search, check_h_growth, check_main_assumptions, structural_rows

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="experiment configuration (INI)")
    common.add_argument("--out", metavar="DIR", help="output directory (created if missing)")
    common.add_argument("--quiet", action="store_true", help="suppress progress text")
    common.add_argument("--workers", type=int, default=1, metavar="W", help="cap on concurrent sweep points")
    p = _Parser(prog="gradbound", description="Gradient-bound experiments for g(x, |Du|) integrands.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.add_parser("check", parents=[common], help="structural verification and admissible window")
    sub.add_parser("solve", parents=[common], help="minimize the discrete energy and dump the field")
    sub.add_parser("verify-bound", parents=[common], help="solve and evaluate the gradient bound")
    sub.add_parser("sweep-mesh", parents=[common], help="bound ratio under mesh refinement")
    sub.add_parser("sweep-clamp", parents=[common], help="bound ratio across clamp constants")
    lem = sub.add_parser("lemmas", parents=[common], help="randomized auxiliary-inequality suite")
    lem.add_argument("--seed", type=int, default=None)
    lem.add_argument("--samples", type=int, default=None)
    return p


class _Run:
    def __init__(self, args, cfg: ExperimentConfig):
        self.args, self.cfg = args, cfg
        out = args.out or cfg.get("experiment", "out") or "gradbound_out"
        self.out = Path(out)

    def say(self, text: str) -> None:
        if not self.args.quiet:
            print(text)

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def write_rows(self, name: str, rows: list[dict]) -> None:
        if not rows:
            return
        with self.path(name).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)

    def _window(self, spec, h, n):
        st = self.cfg.values["structural"]
        return admissible_window_search(spec, h, n, st["subdomain"], two_star=st["two_star"])

    def _plane_params(self, spec, h):
        st = self.cfg.values["structural"]
        if st["n"] != 2:
            raise ConfigError("[structural] solver-based modes work in the plane; n must be 2", self.cfg.line("structural", "n"))
        window = None
        if st["theta"] is None or st["beta"] is None:
            window = self._window(spec, h, 2)
            if not window.feasible:
                raise InfeasibleExponentsError(window.failing or "no admissible parameters")
        params = self.cfg.structural_params(window)
        exps = self.cfg.exponent_set(params)
        if not exps.feasible:
            raise InfeasibleExponentsError(
                f"exponents infeasible at theta = {params.theta:g}, beta = {params.beta:g}: tau = {float(exps.tau):g}")
        return params, exps

    # ------------------------------------------------------------------

    def check(self) -> int:
        cfg = self.cfg
        st = cfg.values["structural"]
        spec = cfg.build_spec()
        h = cfg.h_profile(spec)
        n = st["n"]
        window = self._window(spec, h, n)
        self.say(f"integrand: {spec.label}")
        self.say(f"dimension n = {n}, 2* = {float(window.two_star):g}")
        self.say(f"beta window: {window.beta_interval()}")
        if window.theta_lo is not None:
            self.say(f"theta window: [{window.theta_lo:g}, {window.theta_hi:g}] (supremum {window.theta_sup:.6g})")
        for note in window.notes:
            self.say(f"note: {note}")
        user = st["theta"] is not None and st["beta"] is not None
        lines = [f"beta_window,{window.beta_interval()}", f"feasible,{int(window.feasible)}"]
        if not user and not window.feasible:
            self.write_text("check.txt", lines + [f"failing,{window.failing}"])
            print(window.failing, file=sys.stderr)
            return EXIT_FAIL
        params = cfg.structural_params(window)
        bad = params.violations()
        main = check_main_assumptions(spec, h, params)
        T = params.T_max or spec.t_max
        growth = check_h_growth(h, params.beta, params.alpha, spec.t0, T, n)
        self.write_rows("structural.csv", structural_rows(main, growth))
        exps = cfg.exponent_set(params)
        self.say(f"parameters: theta = {params.theta:g}, beta = {params.beta:g}, alpha = {params.alpha:g}")
        self.say(f"exponents: tau = {float(exps.tau):g}, lhs = {float(exps.lhs_exponent):g}, "
                 f"rhs = {float(exps.rhs_exponent):g}, feasible = {exps.feasible}")
        failures = [f"{e.name}: {e.reason}" for e in main.failures() + growth.failures()] + bad
        if not exps.feasible:
            failures.append("exponent gate fails")
        lines += [f"theta,{params.theta!r}", f"beta,{params.beta!r}", f"alpha,{params.alpha!r}",
                  f"certified,{int(not failures)}"]
        self.write_text("check.txt", lines)
        if failures:
            for f in failures:
                print(f"not certified: {f}", file=sys.stderr)
            return EXIT_FAIL
        self.say("certified")
        return EXIT_OK

    def write_text(self, name: str, lines: list[str]) -> None:
        self.path(name).write_text("\n".join(lines) + "\n")

    def _solve(self, spec):
        cfg = self.cfg
        clamp = cfg.clamp()
        if clamp is not None:
            spec = clamp_regularize(spec, clamp)
        grid = Grid.from_width(cfg.solver_box, cfg.widths()[0], cfg.values["solver"]["m"])
        sol = minimize(spec, grid, cfg.datum(), cfg.solve_options())
        self.say(f"{sol.status}: {sol.iterations} iterations, gradient norm {sol.grad_norm:.3e}")
        return sol

    def solve(self) -> int:
        spec = self.cfg.build_spec()
        sol = self._solve(spec)
        write_field_csv(sol.u, self.path("field.csv"))
        write_gradient_csv(cell_gradients(sol.grid, sol.u), self.path("gradient.csv"))
        res = euler_residual(sol.spec, sol.grid, sol.u)
        self.write_text("solve.txt", [f"status,{sol.status}", f"iterations,{sol.iterations}",
                                      f"energy,{sol.energy_trace[-1]!r}", f"euler_residual,{res!r}"])
        if not sol.converged:
            print(f"solve failed: {sol.status}", file=sys.stderr)
            return EXIT_FAIL
        return EXIT_OK

    def verify_bound(self) -> int:
        cfg = self.cfg
        spec = cfg.build_spec()
        h = cfg.h_profile(spec)
        _, exps = self._plane_params(spec, h)
        sol = self._solve(spec)
        center, rho, R = self._sweep(spec, h, exps).ball()
        sample = evaluate_bound(sol, sol.spec, exps, center, rho, R, h, base_spec=spec, axis_value=sol.grid.h)
        res = SweepResult("h", [sample])
        report_csv(res, self.path("bound.csv"))
        self.say(f"lhs = {sample.lhs:.6g}, rhs = {sample.rhs:.6g}, ratio = {sample.ratio:.6g}")
        if not sol.converged:
            print(f"solve failed: {sol.status}", file=sys.stderr)
            return EXIT_FAIL
        return EXIT_OK

    def _sweep(self, spec, h, exps) -> SweepConfig:
        cfg = self.cfg
        ex, so = cfg.values["experiment"], cfg.values["solver"]
        return SweepConfig(
            spec, cfg.datum(), exps, cfg.solver_box, cfg.widths(), so["clamps"] or (), cfg.solve_options(),
            ex["center"], ex["rho"], ex["R"], h, max(1, self.args.workers),
        )

    def _finish_sweep(self, res: SweepResult, stem: str) -> int:
        report_csv(res, self.path(f"{stem}.csv"))
        if res.samples:
            write_svg(res, self.path(f"{stem}.svg"), title=stem)
        for s in res.samples:
            self.say(f"{res.axis} = {s.axis_value:.6g}: ratio = {s.ratio:.6g}")
        if res.samples:
            self.say(f"ratio spread = {res.ratio_spread:.6g}")
        if res.error:
            print(f"sweep failed: {res.error}", file=sys.stderr)
            return EXIT_FAIL
        return EXIT_OK

    def sweep_mesh(self) -> int:
        spec = self.cfg.build_spec()
        h = self.cfg.h_profile(spec)
        _, exps = self._plane_params(spec, h)
        clamp = self.cfg.clamp()
        if clamp is not None:
            spec = clamp_regularize(spec, clamp)
        sc = self._sweep(spec, h, exps)
        if len(sc.widths) < 3:
            raise ConfigError("[solver] a mesh sweep needs at least 3 widths", self.cfg.line("solver", "widths"))
        return self._finish_sweep(refinement_sweep(sc), "sweep_mesh")

    def sweep_clamp(self) -> int:
        spec = self.cfg.build_spec()
        h = self.cfg.h_profile(spec)
        _, exps = self._plane_params(spec, h)
        sc = self._sweep(spec, h, exps)
        if len(sc.clamps) < 3:
            raise ConfigError("[solver] a clamp sweep needs at least 3 clamps", self.cfg.line("solver", "clamps"))
        res = clamp_sweep(sc)
        if res.samples:
            self.say(f"spread over inactive clamps = {res.inactive_spread:.6g}")
        return self._finish_sweep(res, "sweep_clamp")

    def lemmas(self) -> int:
        cfg = self.cfg
        st = cfg.values["structural"]
        spec = cfg.build_spec()
        h = cfg.h_profile(spec)
        window = None
        if st["theta"] is None or st["beta"] is None:
            window = self._window(spec, h, st["n"])
            if not window.feasible:
                print(window.failing, file=sys.stderr)
                return EXIT_FAIL
        params = cfg.structural_params(window)
        seed = self.args.seed if self.args.seed is not None else st["seed"]
        samples = self.args.samples if self.args.samples is not None else st["samples"]
        if samples < 2:
            raise _Usage("--samples must be at least 2")
        rep = lemma_suite(spec, h, params, seed=seed, samples=samples)
        self.write_rows("lemmas.csv", rep.rows())
        for r in rep.results:
            self.say(f"{'PASS' if r.passed else 'FAIL'}  {r.name}")
        if not rep.passed:
            for r in rep.results:
                if not r.passed:
                    print(f"lemma check failed: {r.name} {r.note}".rstrip(), file=sys.stderr)
            return EXIT_FAIL
        return EXIT_OK


def run(argv: list[str] | None = None) -> int:
    """Parse arguments, run one subcommand, and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"gradbound: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.config:
            text = Path(args.config).read_text()
        else:
            text = ""
        cfg = parse_config(text)
        mode = cfg.get("experiment", "mode")
        if mode is not None and mode != args.command:
            print(f"note: config mode {mode!r} overridden by command {args.command!r}", file=sys.stderr)
        if args.workers < 1:
            raise _Usage("--workers must be at least 1")
        runner = _Run(args, cfg)
        return getattr(runner, args.command.replace("-", "_"))()
    except (ConfigError, _Usage) as exc:
        print(f"gradbound: {'config' if isinstance(exc, ConfigError) else 'usage'} error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"gradbound: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleExponentsError, LineSearchError) as exc:
        print(f"gradbound: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except GradBoundError as exc:
        print(f"gradbound: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(run())

