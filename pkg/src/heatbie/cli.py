"""Command-line front end: ``heatbie {solve,verify,converge,kernels}``.

Exit codes: 0 success, 1 error, 2 the fixed-point iteration did not converge.
Every flag can also be set through an environment variable with the prefix
``HEATBIE_`` (``HEATBIE_CONFIG``, ``HEATBIE_OUT``, ``HEATBIE_THREADS``,
``HEATBIE_STRICT_GROWTH``, ``HEATBIE_SEED``); explicit flags win.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .geometry import SpaceTimeGrid
from .heat_kernel import eval_S, grad_S, time_integrated_grad_S, time_integrated_S
from .nonlinear_solver import (
    Expression,
    FixedPointConfig,
    MixedProblem,
    NonlinearityError,
    RobinNonlinearity,
    frozen_slope,
    solve_nonlinear,
)
from .verify import (
    JumpOracle,
    SuiteConfig,
    _annulus_probes,
    convergence_study,
    green_identity_residual,
    manufactured_suite,
    random_density,
    source_traces,
    write_study_csv,
)

log = logging.getLogger("heatbie")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2
ENV_PREFIX = "HEATBIE_"

FAMILIES = {
    "linear": lambda c: (lambda u, beta, **_: beta * u),
    "affine-manufactured": lambda c: (lambda u, beta, **_: beta * u),
    "sin-perturbed": lambda c: (lambda u, beta, **_: beta * u + c * np.sin(u)),
    "saturating": lambda c: (lambda u, beta, **_: beta * u + c * u / (1 + u * u)),
}


class RunError(RuntimeError):
    pass


# --- problem construction ---------------------------------------------------------------------------

def _lattice_expression(text, grid, curve, what):
    expr = Expression(text)
    extra = expr.names - {"t", "theta", "θ", "x", "y"}
    if extra:
        raise RunError(f"{what} expression may only use t, theta, x, y; found {sorted(extra)}")
    t, th = np.meshgrid(grid.times, grid.theta, indexing="ij")
    pos = curve.position(grid.theta)
    vals = np.broadcast_to(expr(t=t, theta=th, x=pos[None, :, 0], y=pos[None, :, 1]), grid.shape).astype(float)
    if np.max(np.abs(vals[0])) > 1e-12:
        raise RunError(f"{what} must vanish at t = 0")
    vals = vals.copy()
    vals[0] = 0.0
    return vals


def build_problem(cfg: RunConfig):
    """Problem, exact-solution source point (or None) and grid from a configuration."""
    outer, inner = cfg.curves()
    grid = SpaceTimeGrid(cfg.grid.T, cfg.grid.Nt, cfg.grid.Nx)
    d = cfg.data
    z = np.array(d.source if d.source is not None else inner.center, dtype=float)
    if d.f == "manufactured":
        f = source_traces(outer, grid, z)[1]
    elif d.f == "zero":
        f = np.zeros(grid.shape)
    else:
        f = _lattice_expression(d.f, grid, outer, "f")
    name = d.G.strip()
    if name in FAMILIES:
        func = FAMILIES[name](d.G_param)
        if d.beta == "derivative":
            raise RunError("beta = 'derivative' needs an expression for G")
        beta = d.beta
    else:
        expr = Expression(name)
        func = lambda **env: expr(**env)  # noqa: E731
        beta = frozen_slope(name, grid, inner) if d.beta == "derivative" else d.beta
    G = RobinNonlinearity(func, beta, grid, inner, C_G=d.C_G, delta=d.delta, name=name)
    manufactured = d.f == "manufactured" and (d.G_manufactured or name == "affine-manufactured")
    if manufactured:
        ui, dni = source_traces(inner, grid, z)
        G = RobinNonlinearity(func, beta, grid, inner, offset=dni - G.evaluate(ui),
                              C_G=d.C_G, delta=d.delta, name=name)
    return MixedProblem(outer, inner, grid, f, G), (z if manufactured else None)


def _probes(cfg: RunConfig, problem: MixedProblem):
    if cfg.probes.times is not None:
        return np.asarray(cfg.probes.times, dtype=float), np.asarray(cfg.probes.points, dtype=float)
    return _annulus_probes(problem.outer, problem.inner, problem.grid.T)


# --- outputs ----------------------------------------------------------------------------------------

def _write_density(path, values, grid):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "theta", "value"])
        for m, t in enumerate(grid.times):
            for j, th in enumerate(grid.theta):
                w.writerow([repr(float(t)), repr(float(th)), repr(float(values[m, j]))])


def _write_json_lines(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# --- commands ---------------------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, out: Path, strict_growth: bool = False, seed: int = 0) -> int:
    problem, z = build_problem(cfg)
    s = cfg.solver
    growth = "strict" if strict_growth else s.growth
    fp = FixedPointConfig(s.theta, s.tol, s.max_iter, s.anderson)
    try:
        result = solve_nonlinear(problem, fp, growth=growth)
    except NonlinearityError as exc:
        raise RunError(str(exc)) from None
    grid = problem.grid
    times, pts = _probes(cfg, problem)
    u = result.field(times, pts)
    formats = set(cfg.output.formats)
    if "csv" in formats:
        _write_density(out / "mu.csv", result.mu.values, grid)
        _write_density(out / "eta.csv", result.eta.values, grid)
        header = ["t", "x", "y", "u"]
        rows = [[float(t), float(p[0]), float(p[1]), float(v)] for t, p, v in zip(times, pts, u)]
        if z is not None:
            exact = eval_S(times, pts - z)
            header += ["exact", "abs_error"]
            rows = [r + [float(e), abs(r[3] - float(e))] for r, e in zip(rows, exact)]
        _write_rows(out / "probes.csv", header, rows)
    summary = {
        "converged": result.converged, "iterations": result.iterations,
        "residual": result.residual, "message": result.message,
        "sigma_min": result.op.smallest_singular_value(), "N_x": grid.Nx, "N_t": grid.Nt, "T": grid.T,
        "G": problem.G.name,
    }
    if result.growth is not None:
        g = result.growth
        summary["growth"] = {"passed": g.passed, "slope": g.slope, "C_G": g.C_G, "delta": g.delta,
                             "message": g.message}
    if "json" in formats:
        _write_json_lines(out / "iterations.jsonl", result.log())
        _write_json_lines(out / "report.jsonl", [dict(summary, run="solve")])
    if "png" in formats:
        from .plotting import plot_density, plot_residual_history
        plot_residual_history(result.history, out / "residuals.png", s.tol)
        plot_density(result.mu.values, grid.times, out / "mu.png", "outer density")
        plot_density(result.eta.values, grid.times, out / "eta.png", "cavity density")
    print(f"solve: {result.message}; residual {result.residual:.3e}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_verify(cfg: RunConfig, out: Path, seed: int = 0) -> int:
    outer, inner = cfg.curves()
    grid = SpaceTimeGrid(cfg.grid.T, cfg.grid.Nt, cfg.grid.Nx)
    v = cfg.verify
    rows = []
    oracle = JumpOracle(outer, grid)
    for k in range(v.seeds):
        mu = random_density(grid, seed + k)
        js, jd = oracle.single(mu), oracle.double(mu)
        rows.append(("jump-single", seed + k, js.residual, v.jump_tol))
        rows.append(("jump-double", seed + k, jd.residual, v.jump_tol))
        rows.append(("jump-double-continuity", seed + k, jd.continuity, v.jump_tol))
    rows.append(("green", -1, green_identity_residual(outer, grid).residual, v.green_tol))
    suite = SuiteConfig(cfg.grid.T, grid.Nx, grid.Nt, outer, inner, tolerance=v.manufactured_tol)
    for r in manufactured_suite(suite):
        rows.append((r.problem, -1, r.error_sup, v.manufactured_tol))
    table = [(name, s, float(val), tol, bool(val <= tol)) for name, s, val, tol in rows]
    ok = all(r[4] for r in table)
    if "csv" in cfg.output.formats:
        _write_rows(out / "verify.csv", ["check", "seed", "value", "tolerance", "passed"], table)
    if "json" in cfg.output.formats:
        _write_json_lines(out / "verify.jsonl", [dict(zip(["check", "seed", "value", "tolerance", "passed"], r))
                                                 for r in table])
    for name, s, val, tol, passed in table:
        print(f"{'PASS' if passed else 'FAIL'} {name:24s} {val:.3e} (tol {tol:.0e})")
    return EXIT_OK if ok else EXIT_ERROR


def cmd_converge(cfg: RunConfig, out: Path, seed: int = 0) -> int:
    outer, inner = cfg.curves()
    suite = SuiteConfig(cfg.grid.T, cfg.grid.Nx, cfg.grid.Nt, outer, inner)
    rows, monotone = convergence_study(cfg.verify.problem, cfg.verify.levels, suite, seed)
    write_study_csv(rows, out / "convergence.csv")
    if "png" in cfg.output.formats:
        from .plotting import plot_convergence
        plot_convergence(rows, out / "convergence.png", cfg.verify.problem)
    for r in rows:
        print(f"{r.problem} N_x={r.N_x} N_t={r.N_t} error={r.error_sup:.3e} order={r.empirical_order:.2f}")
    return EXIT_OK if monotone else EXIT_ERROR


def kernel_table(cfg: RunConfig):
    rows = []
    for n in cfg.kernels.n:
        for t in cfg.kernels.t:
            for r in cfg.kernels.r:
                x = np.zeros(n)
                x[0] = r
                s = float(eval_S(t, x, n))
                dsdr = float(grad_S(t, x, n)[0]) + 0.0
                if r > 0 and t > 0:
                    ints = float(time_integrated_S(r, 0.0, t, n))
                    intg = float(time_integrated_grad_S(r, 0.0, t, n))
                else:
                    ints = intg = float("nan")
                rows.append([n, float(t), float(r), s, dsdr, ints, intg])
    return rows


def cmd_kernels(cfg: RunConfig, out: Path, seed: int = 0) -> int:
    rows = kernel_table(cfg)
    header = ["n", "t", "r", "S", "dS_dr", "int_S_0_t", "int_grad_factor_0_t"]
    _write_rows(out / "kernels.csv", header, rows)
    w = csv.writer(sys.stdout)
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "converge": cmd_converge, "kernels": cmd_kernels}


def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name, default)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heatbie", description="Space-time boundary integral solver for "
                                "the heat equation with a nonlinear Robin cavity condition.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="TOML run configuration (defaults built in)")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--threads", type=int, help="BLAS threads (default: all cores)")
    p.add_argument("--strict-growth", action="store_true", default=None,
                   help="fail when the growth condition check fails")
    p.add_argument("--seed", type=int, help="base seed of random-density batteries")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config_path = args.config or _env("CONFIG")
    out_dir = args.out or _env("OUT")
    threads = args.threads if args.threads is not None else _env("THREADS")
    strict = args.strict_growth if args.strict_growth is not None else \
        _env("STRICT_GROWTH", "0").lower() in ("1", "true", "yes")
    seed = args.seed if args.seed is not None else int(_env("SEED", "0"))
    try:
        cfg = load_config(config_path) if config_path else RunConfig()
        out = Path(out_dir or cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        limit = threadpool_limits(int(threads)) if threads else contextlib.nullcontext()
        with limit, warnings.catch_warnings():
            warnings.simplefilter("default")
            if args.command == "solve":
                return cmd_solve(cfg, out, strict, seed)
            return COMMANDS[args.command](cfg, out, seed)
    except (ConfigError, RunError, NonlinearityError, ValueError, OSError, RuntimeError) as exc:
        print(f"heatbie {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
