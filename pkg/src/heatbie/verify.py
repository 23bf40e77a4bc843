"""Oracles: jump relations, Green's representation, manufactured solutions, convergence.

The extrapolation oracles only use off-surface evaluations of the potentials;
the assembled boundary operators appear solely on the side being checked.
Normal offsets default to ``(6.4 h_t, 3.2 h_t)`` and are extrapolated
linearly to the boundary, so the oracle error shrinks with the time step.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .bie_linear import JBetaOperator, solve_second_kind
from .geometry import BoundaryCurve, SpaceTimeGrid, make_circle
from .heat_kernel import eval_S, grad_S
from .nonlinear_solver import (
    FixedPointConfig,
    MixedProblem,
    NonlinearResult,
    affine,
    apply_NG,
    sin_perturbed,
    solve_nonlinear,
)
from .potentials import (
    MAX_UPSAMPLED_NODES,
    _values,
    assemble_W,
    assemble_Wstar,
    eval_double_layer,
    eval_single_layer,
    offsurface_operator,
)

OFFSET_FACTOR = 6.4


class OracleWarning(UserWarning):
    pass


def default_offsets(grid: SpaceTimeGrid, limit: float | None = None) -> tuple[float, float]:
    d = OFFSET_FACTOR * grid.ht
    if limit is not None:
        d = min(d, limit)
    return d, d / 2


def _spacing(curve: BoundaryCurve, n: int) -> float:
    return curve.arclength(256) / n


def _check_offsets(curve, offsets):
    offsets = sorted((float(o) for o in offsets), reverse=True)
    if len(offsets) != 2 or offsets[1] <= 0 or offsets[0] == offsets[1]:
        raise ValueError("need two distinct positive offsets")
    theta = 2 * np.pi * np.arange(512) / 512
    need = 3.0 * 2 * np.pi * float(np.max(curve.speed(theta))) / offsets[1]
    if need > MAX_UPSAMPLED_NODES:
        warnings.warn(f"offset {offsets[1]:.3g} needs {need:.0f} source nodes (cap {MAX_UPSAMPLED_NODES}); "
                      "the extrapolation is dominated by quadrature error", OracleWarning, stacklevel=3)
    return offsets


def extrapolate(values_far, values_near, d_far, d_near):
    """Linear extrapolation to offset zero."""
    return values_near + (values_near - values_far) * d_near / (d_far - d_near)


@dataclass
class JumpReport:
    interior: float
    exterior: float
    scale: float
    offsets: tuple
    continuity: float = float("nan")

    @property
    def residual(self) -> float:
        return max(self.interior, self.exterior)


def _rel(diff, scale):
    m = float(np.max(np.abs(diff)))
    return m / scale if scale > 0 else m


class JumpOracle:
    """Off-surface operators at ``x -+ d nu`` for both offsets, built once per curve and grid.

    ``+`` is the interior side. Residuals are sup norms relative to ``|mu|``;
    the normal-derivative continuity of the double layer is relative to the
    size of that derivative.
    """

    def __init__(self, curve: BoundaryCurve, grid: SpaceTimeGrid, offsets=None):
        self.curve, self.grid = curve, grid
        self.offsets = _check_offsets(curve, offsets or default_offsets(grid))
        theta = grid.theta
        self._x, self._nu = curve.position(theta), curve.normal(theta)
        self._ops = {}
        self._boundary = {}

    def _side(self, mu, kind, side):
        vals = []
        for d in self.offsets:
            key = (kind, side, d)
            if key not in self._ops:
                pts = self._x - side * d * self._nu
                dirs = None if kind == "double" else self._nu
                self._ops[key] = offsurface_operator(self.curve, pts, self.grid, kind, directions=dirs)
            vals.append(self._ops[key].apply(mu))
        return extrapolate(vals[0], vals[1], *self.offsets)

    def _op(self, name):
        if name not in self._boundary:
            build = assemble_W if name == "W" else assemble_Wstar
            self._boundary[name] = build(self.curve, self.grid)
        return self._boundary[name]

    def single(self, density) -> JumpReport:
        mu = _values(density)
        scale = float(np.max(np.abs(mu)))
        if scale == 0:
            return JumpReport(0.0, 0.0, 0.0, tuple(self.offsets))
        wmu = self._op("W*").apply(mu)
        out = {side: _rel(self._side(mu, "single_dn", side) - (0.5 * side * mu + wmu), scale)
               for side in (1, -1)}
        return JumpReport(out[1], out[-1], scale, tuple(self.offsets))

    def double(self, density) -> JumpReport:
        mu = _values(density)
        scale = float(np.max(np.abs(mu)))
        if scale == 0:
            return JumpReport(0.0, 0.0, 0.0, tuple(self.offsets), 0.0)
        wmu = self._op("W").apply(mu)
        out = {side: _rel(self._side(mu, "double", side) - (-0.5 * side * mu + wmu), scale)
               for side in (1, -1)}
        dn = {side: self._side(mu, "double_dn", side) for side in (1, -1)}
        dscale = max(float(np.max(np.abs(dn[1]))), float(np.max(np.abs(dn[-1]))))
        return JumpReport(out[1], out[-1], scale, tuple(self.offsets), _rel(dn[1] - dn[-1], dscale))


def jump_residual_single(curve: BoundaryCurve, density, grid: SpaceTimeGrid, offsets=None) -> JumpReport:
    """One-sided normal derivatives of ``v[mu]`` against ``+-1/2 mu + W* mu``."""
    return JumpOracle(curve, grid, offsets).single(density)


def jump_residual_double(curve: BoundaryCurve, density, grid: SpaceTimeGrid, offsets=None) -> JumpReport:
    """One-sided traces of ``w[mu]`` against ``-+1/2 mu + W mu`` and continuity of ``d/dnu w``."""
    return JumpOracle(curve, grid, offsets).double(density)


def random_density(grid: SpaceTimeGrid, seed: int = 0, modes: int = 4) -> np.ndarray:
    """Smooth random density: low Fourier modes in space times sines in time."""
    rng = np.random.default_rng(seed)
    t = grid.times[:, None] / grid.T
    th = grid.theta[None, :]
    out = np.zeros(grid.shape)
    for k in range(modes):
        a, b = rng.normal(size=2)
        w = rng.uniform(0.5, 2.0)
        out += (a * np.cos(k * th) + b * np.sin(k * th)) * np.sin(np.pi * w * t)
    out[0] = 0.0
    return out


# --- point-source samples ---------------------------------------------------------------------------

def source_traces(curve: BoundaryCurve, grid: SpaceTimeGrid, z, n_nodes: int | None = None):
    """Lattice traces of ``S(t, x - z)`` and of its outward normal derivative on ``curve``."""
    theta = 2 * np.pi * np.arange(n_nodes or grid.Nx) / (n_nodes or grid.Nx)
    x, nu = curve.position(theta), curve.normal(theta)
    t = grid.times[:, None]
    pos = t > 0
    tt = np.where(pos, t, 1.0)
    d = x[None] - np.asarray(z, dtype=float)
    val = np.where(pos, eval_S(tt, d), 0.0)
    dn = np.where(pos, np.einsum("mjk,jk->mj", grad_S(tt, d), nu), 0.0)
    return val, dn


def _probe_errors(u, exact):
    err = np.abs(u - exact)
    return float(np.max(err / np.abs(exact))), float(np.linalg.norm(err) / np.linalg.norm(exact))


@dataclass
class GreenReport:
    residual: float
    absolute: float
    probes_used: int
    probes_excluded: int


def default_interior_probes(curve: BoundaryCurve, T: float):
    """A fixed probe set well inside a star-shaped curve."""
    rmin = curve.radius - curve.amplitude
    cx, cy = curve.center
    pts = np.array([[0.3, 0.2], [-0.4, 0.1], [0.0, -0.5], [0.25, 0.45], [-0.2, -0.3], [0.5, -0.1]])
    times = T * np.array([1.0, 0.5, 0.8, 0.6, 0.9, 0.7])
    return times, pts * rmin + np.array([cx, cy])


def green_identity_residual(curve: BoundaryCurve, grid: SpaceTimeGrid, z=None, times=None,
                            points=None) -> GreenReport:
    """Reconstruct ``S(., . - z)`` inside ``curve`` from its own traces, ``u = v[du/dnu] - w[u]``.

    ``z`` must lie outside the closed region so the sample is caloric with zero
    initial data there. Probes closer than one node spacing to the curve are
    excluded. The residual is the sup error relative to the sup of the sample.
    """
    if z is None:
        z = (curve.center[0] + curve.radius + curve.amplitude + 1.0, curve.center[1])
    z = np.asarray(z, dtype=float)
    if curve.contains(z[None])[0]:
        raise ValueError("the source point must lie outside the region")
    if times is None:
        times, points = default_interior_probes(curve, grid.T)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    keep = curve.contains(points) & (curve.distance(points) >= _spacing(curve, grid.Nx))
    if not keep.any():
        raise ValueError("no probe lies inside the region outside the collar")
    times, points_in = times[keep], points[keep]
    val, dn = source_traces(curve, grid, z)
    u = eval_single_layer(curve, dn, times, points_in, grid) - eval_double_layer(curve, val, times, points_in, grid)
    exact = eval_S(times, points_in - z)
    err = np.abs(u - exact)
    return GreenReport(float(np.max(err) / np.max(np.abs(exact))), float(np.max(err)),
                       int(keep.sum()), int((~keep).sum()))


# --- manufactured problems --------------------------------------------------------------------------

@dataclass
class SuiteConfig:
    T: float = 0.5
    Nx: int = 128
    Nt: int = 64
    outer: BoundaryCurve = field(default_factory=lambda: make_circle((0.0, 0.0), 1.0, "outer"))
    inner: BoundaryCurve = field(default_factory=lambda: make_circle((0.0, 0.0), 0.4, "inner"))
    beta: float = 1.0
    sin_coefficient: float = 0.1
    theta: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200
    anderson: int = 0
    tolerance: float = 1e-2

    def grid(self, Nx=None, Nt=None) -> SpaceTimeGrid:
        return SpaceTimeGrid(self.T, Nt or self.Nt, Nx or self.Nx)


@dataclass
class RunResult:
    problem: str
    N_x: int
    N_t: int
    error_sup: float
    error_l2: float
    wall_seconds: float
    iterations: int = 0
    passed: bool = True
    detail: str = ""


def _exterior_probes(curve, T):
    R = curve.radius + curve.amplitude
    cx, cy = curve.center
    return np.array([0.6 * T, T]), np.array([[cx + 2 * R, cy], [cx, cy + 3 * R]])


def _annulus_probes(outer, inner, T):
    """Probes on the mid circle between the cavity and the outer curve."""
    r_in = inner.radius + inner.amplitude
    r_out = outer.radius - outer.amplitude
    cx, cy = inner.center
    phi = np.array([0.0, 1.5 * np.pi, 0.75 * np.pi, 0.5 * np.pi, 1.2 * np.pi])
    times = T * np.array([1.0, 0.6, 0.8, 0.4, 0.9])
    # mid radius measured from the cavity center toward the nearest outer point
    rho = np.empty(len(phi))
    for i, p in enumerate(phi):
        d = np.array([np.cos(p), np.sin(p)])
        ts = np.linspace(r_in, 4 * r_out + 4, 2000)
        inside = outer.contains(np.array([cx, cy]) + ts[:, None] * d)
        edge = ts[np.argmin(inside)] if not inside.all() else ts[-1]
        rho[i] = 0.5 * (r_in + edge)
    pts = np.array([cx, cy]) + rho[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    ok = outer.contains(pts) & ~inner.contains(pts)
    return times[ok], pts[ok]


def run_linear(problem: str, cfg: SuiteConfig, Nx=None, Nt=None) -> RunResult:
    """Manufactured point-source test for one of the four second-kind problems."""
    grid = cfg.grid(Nx, Nt)
    curve = cfg.outer
    t0 = time.perf_counter()
    if problem.startswith("ext"):
        z = np.array(curve.center)
        times, pts = _exterior_probes(curve, cfg.T)
    else:
        z = np.array([curve.center[0] + curve.radius + curve.amplitude + 0.5, curve.center[1]])
        times, pts = default_interior_probes(curve, cfg.T)
    val, dn = source_traces(curve, grid, z)
    sol = solve_second_kind(problem, curve, val if problem.endswith("dirichlet") else dn, grid)
    e_sup, e_l2 = _probe_errors(sol.field(times, pts), eval_S(times, pts - z))
    return RunResult(problem, grid.Nx, grid.Nt, e_sup, e_l2, time.perf_counter() - t0,
                     passed=e_sup <= cfg.tolerance)


def manufactured_mixed(cfg: SuiteConfig, kind: str = "affine", grid: SpaceTimeGrid | None = None):
    """Mixed problem with exact solution ``S(t, x - z)``, ``z`` the cavity center.

    ``kind`` is ``"affine"`` (``G = beta u + g0``), ``"sin"`` (``G = beta u +
    c sin u + g0``) or ``"plain-sin"`` (``G = beta u + c sin u``, only ``f``
    manufactured, so the exact solution is unknown). Returns ``(problem, z)``.
    """
    grid = grid or cfg.grid()
    z = np.array(cfg.inner.center)
    _, f = source_traces(cfg.outer, grid, z)
    ui, dni = source_traces(cfg.inner, grid, z)
    c = cfg.sin_coefficient
    if kind == "affine":
        G = affine(cfg.beta, grid, cfg.inner, dni - cfg.beta * ui)
    elif kind == "sin":
        G = sin_perturbed(cfg.beta, grid, cfg.inner, c, offset=dni - cfg.beta * ui - c * np.sin(ui))
    elif kind == "plain-sin":
        G = sin_perturbed(cfg.beta, grid, cfg.inner, c)
    else:
        raise ValueError(f"unknown manufactured mixed kind {kind!r}")
    return MixedProblem(cfg.outer, cfg.inner, grid, f, G), z


def run_mixed(kind: str, cfg: SuiteConfig, Nx=None, Nt=None, op: JBetaOperator | None = None) -> RunResult:
    grid = cfg.grid(Nx, Nt)
    t0 = time.perf_counter()
    problem, z = manufactured_mixed(cfg, kind, grid)
    fp = FixedPointConfig(1.0 if kind == "affine" else cfg.theta, cfg.tol, cfg.max_iter, cfg.anderson)
    res = solve_nonlinear(problem, fp, op)
    times, pts = _annulus_probes(cfg.outer, cfg.inner, cfg.T)
    e_sup, e_l2 = _probe_errors(res.field(times, pts), eval_S(times, pts - z))
    name = "affine-mixed" if kind == "affine" else "sin-mixed"
    return RunResult(name, grid.Nx, grid.Nt, e_sup, e_l2, time.perf_counter() - t0, res.iterations,
                     res.converged and e_sup <= cfg.tolerance, res.message)


SUITE = ("ext-dirichlet", "ext-neumann", "int-dirichlet", "int-neumann", "affine-mixed", "sin-mixed")


def manufactured_suite(cfg: SuiteConfig | None = None) -> list:
    cfg = cfg or SuiteConfig()
    rows = []
    for name in SUITE:
        try:
            if name.endswith("mixed"):
                rows.append(run_mixed("affine" if name.startswith("affine") else "sin", cfg))
            else:
                rows.append(run_linear(name, cfg))
        except Exception as exc:
            raise RuntimeError(f"manufactured run {name!r} failed: {exc}") from exc
    return rows


# --- boundary-condition residual of a mixed solution ------------------------------------------------

@dataclass
class BoundaryResidual:
    neumann: float
    robin: float
    offsets: tuple

    @property
    def residual(self) -> float:
        return max(self.neumann, self.robin)


def _field_side(result: NonlinearResult, curve, side, offsets, kind):
    """Extrapolated ``u`` (``kind='single'``) or ``d/dnu u`` on ``curve`` from the annulus side."""
    p = result.problem
    grid = p.grid
    x, nu = curve.position(grid.theta), curve.normal(grid.theta)
    vals = []
    for d in offsets:
        pts = x - side * d * nu
        dirs = nu if kind == "single_dn" else None
        v = (offsurface_operator(p.outer, pts, grid, kind, directions=dirs).apply(result.mu)
             + offsurface_operator(p.inner, pts, grid, kind, directions=dirs).apply(result.eta))
        vals.append(v)
    return extrapolate(vals[0], vals[1], *offsets)


def boundary_residual(result: NonlinearResult, offsets=None) -> BoundaryResidual:
    """Neumann and Robin residuals of the reconstructed field, by off-surface extrapolation.

    The outer curve is approached from inside, the cavity from outside. Each
    residual is a sup norm relative to the sup of its data (``f`` and ``G(u)``).
    """
    p = result.problem
    sep = float(np.min(p.outer.distance(p.inner.polyline(256))))
    offsets = sorted(offsets or default_offsets(p.grid, sep / 4), reverse=True)
    dn_out = _field_side(result, p.outer, 1, offsets, "single_dn")
    neumann = _rel(dn_out - p.f, float(np.max(np.abs(p.f))))
    trace = _field_side(result, p.inner, -1, offsets, "single")
    dn_in = _field_side(result, p.inner, -1, offsets, "single_dn")
    trace[0] = 0.0
    g = apply_NG(p.G, trace)
    robin = _rel(dn_in - g, float(np.max(np.abs(g))))
    return BoundaryResidual(neumann, robin, tuple(offsets))


# --- convergence studies ------------------------------------------------------------------------------

CSV_COLUMNS = ("problem", "N_x", "N_t", "error_sup", "error_l2", "empirical_order", "wall_seconds")
STUDY_PROBLEMS = SUITE + ("green", "jump-single", "jump-double")


def _run_level(problem: str, cfg: SuiteConfig, Nx: int, Nt: int, seed: int = 0) -> RunResult:
    if problem in ("ext-dirichlet", "ext-neumann", "int-dirichlet", "int-neumann"):
        return run_linear(problem, cfg, Nx, Nt)
    if problem.endswith("mixed"):
        return run_mixed("affine" if problem.startswith("affine") else "sin", cfg, Nx, Nt)
    grid = cfg.grid(Nx, Nt)
    t0 = time.perf_counter()
    if problem == "green":
        rep = green_identity_residual(cfg.outer, grid)
        return RunResult(problem, Nx, Nt, rep.residual, rep.residual, time.perf_counter() - t0)
    mu = random_density(grid, seed)
    rep = (jump_residual_single if problem == "jump-single" else jump_residual_double)(cfg.outer, mu, grid)
    return RunResult(problem, Nx, Nt, rep.residual, rep.residual, time.perf_counter() - t0)


@dataclass
class StudyRow:
    problem: str
    N_x: int
    N_t: int
    error_sup: float
    error_l2: float
    empirical_order: float
    wall_seconds: float


def empirical_orders(errors, steps) -> list:
    """Successive-ratio orders ``log(e_{i-1}/e_i) / log(h_{i-1}/h_i)``; nan for the first level."""
    out = [math.nan]
    for i in range(1, len(errors)):
        ratio = steps[i - 1] / steps[i]
        if ratio == 1 or errors[i] <= 0 or errors[i - 1] <= 0:
            out.append(math.nan)
        else:
            out.append(math.log(errors[i - 1] / errors[i]) / math.log(ratio))
    return out


def convergence_study(problem: str, levels, cfg: SuiteConfig | None = None, seed: int = 0):
    """Run ``problem`` on each ``(N_x, N_t)`` level.

    Orders are measured against the time step, or against the node spacing
    when only ``N_x`` changes between levels. Returns ``(rows, monotone)``.
    """
    if problem not in STUDY_PROBLEMS:
        raise ValueError(f"unknown study problem {problem!r}; expected one of {STUDY_PROBLEMS}")
    levels = [tuple(int(v) for v in lv) for lv in levels]
    if len(levels) < 3:
        raise ValueError("a convergence study needs at least three levels")
    cfg = cfg or SuiteConfig()
    runs = [_run_level(problem, cfg, nx, nt, seed) for nx, nt in levels]
    errors = [r.error_sup for r in runs]
    if all(levels[i][1] == levels[0][1] for i in range(len(levels))):
        steps = [1.0 / nx for nx, _ in levels]
    else:
        steps = [cfg.T / nt for _, nt in levels]
    orders = empirical_orders(errors, steps)
    monotone = all(errors[i] < errors[i - 1] for i in range(1, len(errors)))
    if not monotone:
        warnings.warn(f"{problem}: errors are not monotonically decreasing: {errors}", OracleWarning,
                      stacklevel=2)
    rows = [StudyRow(r.problem, r.N_x, r.N_t, r.error_sup, r.error_l2, p, r.wall_seconds)
            for r, p in zip(runs, orders)]
    return rows, monotone


def write_study_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([d["problem"], d["N_x"], d["N_t"], repr(d["error_sup"]), repr(d["error_l2"]),
                        repr(d["empirical_order"]), f"{d['wall_seconds']:.3f}"])
