"""Nonlinear Robin condition on the cavity and the fixed-point solve.

The unknown field is represented as ``u = v_O[mu] + v_i[eta]`` (single layers on
the outer curve and on the cavity). Writing ``h = v_O[mu] + V_i eta`` for the
trace of ``u`` on the cavity, the boundary conditions become

    J_beta (mu, eta) = (f, N_G(h) - beta h),

and ``T_beta`` maps a state to ``J_beta^{-1}`` of that right-hand side. The
Robin data is ``d/dnu_i u = G(t, x, u)`` with ``nu_i`` the outward normal of the
cavity (pointing into the annulus).
"""

from __future__ import annotations

import ast
import math
import operator
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bie_linear import JBetaOperator
from .geometry import BoundaryCurve, GeometryError, SpaceTimeGrid, validate_annulus
from .potentials import Density, _values, eval_single_layer

G0_ATOL = 1e-12


class NonlinearityError(ValueError):
    pass


class NonlinearSolverError(RuntimeError):
    def __init__(self, message: str, history=()):
        super().__init__(message)
        self.history = list(history)


class GrowthWarning(UserWarning):
    pass


# --- expressions --------------------------------------------------------------------------------

_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh}
_CONSTS = {"pi": math.pi}
_VARS = {"t", "u", "theta", "θ", "beta", "x", "y"}


class Expression:
    """Arithmetic expression in ``t, u, theta (θ), beta, x, y``.

    Supports ``+ - * / ^`` (``^`` is power), parentheses, numbers, ``pi`` and
    the functions ``sin cos exp tanh``. Evaluation is vectorised.
    """

    def __init__(self, text: str):
        self.text = text
        try:
            tree = ast.parse(text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise NonlinearityError(f"cannot parse expression {text!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body
        self.names = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} - set(_FUNCS) - set(_CONSTS)

    def _check(self, node):
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise NonlinearityError(f"unknown function in {self.text!r}; allowed: {sorted(_FUNCS)}")
            if len(node.args) != 1 or node.keywords:
                raise NonlinearityError(f"{node.func.id} takes exactly one argument")
            self._check(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in _VARS and node.id not in _CONSTS:
                raise NonlinearityError(f"unknown variable {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        else:
            raise NonlinearityError(f"unsupported syntax {type(node).__name__} in {self.text!r}")

    def __call__(self, **env):
        if "theta" in env:
            env.setdefault("θ", env["theta"])
        missing = self.names - set(env)
        if missing:
            raise NonlinearityError(f"expression needs {sorted(missing)}")
        return self._eval(self._tree, env)

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](self._eval(node.args[0], env))
        if isinstance(node, ast.Name):
            return _CONSTS[node.id] if node.id in _CONSTS else env[node.id]
        return float(node.value)


# --- the nonlinearity -----------------------------------------------------------------------------

@dataclass
class GrowthReport:
    scales: list
    residuals: list
    slope: float
    C_G: float
    delta: float
    declared: bool
    passed: bool
    message: str = ""


class RobinNonlinearity:
    """``G(t, x, u) = func(t, theta, u, beta, x, y) + offset`` on the cavity lattice.

    ``func`` is vectorised over lattice-shaped arrays; ``offset`` is an optional
    fixed lattice (used by manufactured data). ``beta`` is the linearization
    coefficient, a lattice or a scalar.
    """

    def __init__(self, func: Callable, beta, grid: SpaceTimeGrid, curve: BoundaryCurve,
                 offset=None, C_G: float | None = None, delta: float | None = None, name: str = "G"):
        self.func, self.grid, self.curve, self.name = func, grid, curve, name
        self.beta = np.broadcast_to(np.asarray(beta, dtype=float), grid.shape).copy()
        if not np.all(np.isfinite(self.beta)):
            raise NonlinearityError("beta must be finite on the lattice")
        self.offset = None if offset is None else np.asarray(offset, dtype=float).reshape(grid.shape)
        if (C_G is None) != (delta is None):
            raise NonlinearityError("declare both C_G and delta, or neither")
        if delta is not None and not (0 < delta < 1 and C_G > 0):
            raise NonlinearityError("growth metadata needs C_G > 0 and 0 < delta < 1")
        self.C_G, self.delta = C_G, delta
        t, th = np.meshgrid(grid.times, grid.theta, indexing="ij")
        pos = curve.position(grid.theta)
        self._env = {"t": t, "theta": th, "x": np.broadcast_to(pos[:, 0], grid.shape),
                     "y": np.broadcast_to(pos[:, 1], grid.shape), "beta": self.beta}
        g0 = self.evaluate(np.zeros(grid.shape))[0]
        if np.max(np.abs(g0)) > G0_ATOL:
            j = int(np.argmax(np.abs(g0)))
            raise NonlinearityError(f"G(0, x, 0) must vanish; G = {g0[j]:.3e} at node {j}")

    def evaluate(self, u) -> np.ndarray:
        env = dict(self._env, u=np.asarray(u, dtype=float))
        with np.errstate(all="ignore"):
            out = np.broadcast_to(self.func(**env), self.grid.shape).astype(float)
        if self.offset is not None:
            out = out + self.offset
        return out


def apply_NG(G: RobinNonlinearity, trace) -> np.ndarray:
    """Pointwise ``G(t_m, x_j, trace[m, j])``; row 0 is zero."""
    u = _values(trace)
    if u.shape != G.grid.shape:
        raise ValueError(f"trace shape {u.shape} does not match the lattice {G.grid.shape}")
    if np.any(u[0] != 0):
        raise ValueError("trace row 0 must be zero")
    out = G.evaluate(u)
    bad = ~np.isfinite(out)
    if bad.any():
        m, j = np.argwhere(bad)[0]
        raise NonlinearityError(
            f"G is not finite at step {m} (t = {G.grid.times[m]:.6g}), node {j}, u = {u[m, j]:.6g}")
    out[0] = 0.0
    return out


def _growth_traces(grid: SpaceTimeGrid, seed: int = 0):
    rng = np.random.default_rng(seed)
    t, th = np.meshgrid(grid.times, grid.theta, indexing="ij")
    shapes = [np.ones(grid.shape), -np.ones(grid.shape),
              np.sin(np.pi * t / grid.T) * np.cos(th), rng.uniform(-1, 1, grid.shape)]
    out = []
    for s in shapes:
        s = s.copy()
        s[0] = 0.0
        out.append(s / np.max(np.abs(s)))
    return out


def check_growth_condition(G: RobinNonlinearity, scales=(1.0, 10.0, 100.0), seed: int = 0) -> GrowthReport:
    """Sampled test of ``|N_G(h) - beta h| <= C_G (1 + |h|)^delta`` in the sup norm.

    Fits the log-log slope of the worst residual against ``1 + |h|``; the check
    passes when the slope is below one and the constants (declared, or fitted
    when none are declared) dominate every sample.
    """
    scales = [float(s) for s in scales]
    if not scales:
        raise ValueError("scale sweep must not be empty")
    res = []
    for s in scales:
        worst = 0.0
        for h in _growth_traces(G.grid, seed):
            try:
                with np.errstate(all="ignore"):
                    r = float(np.max(np.abs(apply_NG(G, s * h) - G.beta * s * h)))
            except NonlinearityError:
                r = np.inf
            worst = max(worst, r if np.isfinite(r) else np.inf)
        res.append(worst)
    res_arr = np.array(res)
    if not np.all(np.isfinite(res_arr)):
        return GrowthReport(scales, res, np.inf, np.inf, 1.0, G.C_G is not None, False,
                            "residual overflows within the sweep")
    if np.all(res_arr <= 1e-300) or len(scales) < 2:
        slope = 0.0
    else:
        x = np.log1p(np.array(scales))
        y = np.log(np.maximum(res_arr, 1e-300))
        slope = float(np.polyfit(x, y, 1)[0])
    declared = G.C_G is not None
    if declared:
        C, delta = G.C_G, G.delta
    else:
        delta = min(max(slope, 0.0), 1.0 - 1e-9)
        C = float(np.max(res_arr / (1 + np.array(scales)) ** delta)) if res_arr.any() else 1.0
        C = max(C, np.finfo(float).tiny)
    bound = C * (1 + np.array(scales)) ** delta
    dominated = bool(np.all(res_arr <= bound * (1 + 1e-12)))
    passed = slope < 1.0 and dominated
    if passed:
        msg = "ok"
    elif slope >= 1.0:
        msg = f"fitted growth exponent {slope:.3f} >= 1"
    else:
        msg = "declared constants do not dominate the sampled residuals"
    return GrowthReport(scales, res, slope, float(C), float(delta), declared, passed, msg)


# --- built-in families ------------------------------------------------------------------------------

def linear(beta, grid, curve, **kw) -> RobinNonlinearity:
    return RobinNonlinearity(lambda u, beta, **_: beta * u, beta, grid, curve, name="linear", **kw)


def sin_perturbed(beta, grid, curve, c: float = 1.0, offset=None, **kw) -> RobinNonlinearity:
    return RobinNonlinearity(lambda u, beta, **_: beta * u + c * np.sin(u), beta, grid, curve,
                             offset=offset, name="sin-perturbed", **kw)


def saturating(beta, grid, curve, c: float = 1.0, **kw) -> RobinNonlinearity:
    return RobinNonlinearity(lambda u, beta, **_: beta * u + c * u / (1 + u * u), beta, grid, curve,
                             name="saturating", **kw)


def affine(beta, grid, curve, g0, **kw) -> RobinNonlinearity:
    """``G = beta u + g0`` with ``g0`` a lattice vanishing at ``t = 0``."""
    return RobinNonlinearity(lambda u, beta, **_: beta * u, beta, grid, curve,
                             offset=g0, name="affine", **kw)


def from_expression(text: str, beta, grid, curve, **kw) -> RobinNonlinearity:
    expr = Expression(text)
    return RobinNonlinearity(lambda **env: expr(**env), beta, grid, curve, name=text, **kw)


def frozen_slope(text: str, grid: SpaceTimeGrid, curve: BoundaryCurve, eps: float = 1e-6) -> np.ndarray:
    """``dG/du`` at ``u = 0`` by central differences, for expressions without ``beta``."""
    expr = Expression(text)
    if "beta" in expr.names:
        raise NonlinearityError("cannot derive beta from an expression that uses beta")
    t, th = np.meshgrid(grid.times, grid.theta, indexing="ij")
    pos = curve.position(grid.theta)
    env = {"t": t, "theta": th, "x": np.broadcast_to(pos[:, 0], grid.shape),
           "y": np.broadcast_to(pos[:, 1], grid.shape)}
    up = np.broadcast_to(expr(u=np.full(grid.shape, eps), **env), grid.shape)
    dn = np.broadcast_to(expr(u=np.full(grid.shape, -eps), **env), grid.shape)
    return (up - dn) / (2 * eps)


# --- problem and solver ---------------------------------------------------------------------------------

@dataclass
class MixedProblem:
    outer: BoundaryCurve
    inner: BoundaryCurve
    grid: SpaceTimeGrid
    f: np.ndarray
    G: RobinNonlinearity

    def __post_init__(self):
        validate_annulus(self.outer, self.inner)
        self.f = _values(self.f)
        if self.f.shape != self.grid.shape:
            raise ValueError(f"Neumann datum shape {self.f.shape} does not match {self.grid.shape}")
        if np.any(self.f[0] != 0):
            raise ValueError("Neumann datum row 0 must be zero")

    def operator(self) -> JBetaOperator:
        return JBetaOperator(self.outer, self.inner, self.grid, self.G.beta)


@dataclass
class FixedPointConfig:
    theta: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200
    anderson: int = 0

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValueError(f"damping theta must lie in (0, 1], got {self.theta}")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 0 or self.anderson < 0:
            raise ValueError("max_iter and anderson must be non-negative")


def _check_operator(problem: MixedProblem, op: JBetaOperator):
    if op.grid != problem.grid or not np.array_equal(op.beta, problem.G.beta):
        raise ValueError("J_beta operator does not match the problem grid and beta")


def T_beta_apply(problem: MixedProblem, mu, eta, op: JBetaOperator) -> tuple[Density, Density]:
    """One application of the fixed-point map."""
    mu, eta = _values(mu), _values(eta)
    if np.any(mu[0] != 0) or np.any(eta[0] != 0):
        raise ValueError("state rows 0 must be zero")
    h = op.cavity_trace(mu, eta)
    h[0] = 0.0
    rhs2 = apply_NG(problem.G, h) - problem.G.beta * h
    return op.solve(problem.f, rhs2)


@dataclass
class NonlinearResult:
    problem: MixedProblem
    mu: Density
    eta: Density
    converged: bool
    iterations: int
    history: list
    best_iteration: int
    message: str = ""
    growth: GrowthReport | None = None
    op: JBetaOperator | None = field(default=None, repr=False)

    @property
    def residual(self) -> float:
        return self.history[self.best_iteration]

    def field(self, times, points) -> np.ndarray:
        return eval_solution(self.problem, self.mu, self.eta, times, points)

    def log(self) -> list:
        return [{"iteration": k, "residual": r} for k, r in enumerate(self.history)]


def _anderson_step(X, R, x, r, theta):
    dX = np.diff(np.array(X), axis=0).T
    dR = np.diff(np.array(R), axis=0).T
    gamma = np.linalg.lstsq(dR, r, rcond=None)[0]
    return x + theta * r - (dX + theta * dR) @ gamma


def solve_nonlinear(problem: MixedProblem, cfg: FixedPointConfig | None = None,
                    op: JBetaOperator | None = None, growth: str = "warn",
                    start=None) -> NonlinearResult:
    """Damped Picard (optionally Anderson-accelerated) iteration for ``x = T_beta(x)``.

    ``growth`` is ``"warn"``, ``"strict"`` (raise on a failed growth check) or
    ``"skip"``. The iterate ``x_k`` is accepted once ``|x_k - T_beta(x_k)| <= tol``
    in the sup norm over both densities.
    """
    cfg = cfg or FixedPointConfig()
    if growth not in ("warn", "strict", "skip"):
        raise ValueError("growth must be 'warn', 'strict' or 'skip'")
    report = None
    if growth != "skip":
        report = check_growth_condition(problem.G)
        if not report.passed:
            msg = f"growth condition fails: {report.message}"
            if growth == "strict":
                raise NonlinearityError(msg)
            warnings.warn(msg, GrowthWarning, stacklevel=2)
    op = op or problem.operator()
    _check_operator(problem, op)
    shape = problem.grid.shape
    n1 = int(np.prod(shape))

    def T(x):
        mu, eta = T_beta_apply(problem, x[:n1].reshape(shape), x[n1:].reshape(shape), op)
        return np.concatenate([mu.values.ravel(), eta.values.ravel()])

    x = np.zeros(2 * n1) if start is None else np.concatenate([_values(s).ravel() for s in start])
    history, X, R = [], [], []
    best, best_x = np.inf, x
    converged, message = False, ""
    for k in range(cfg.max_iter + 1):
        tx = T(x)
        r = tx - x
        res = float(np.max(np.abs(r)))
        history.append(res)
        if not np.isfinite(res):
            raise NonlinearSolverError(f"non-finite state at iteration {k}", history)
        if res < best:
            best, best_x, best_k = res, x, k
        if res <= cfg.tol:
            converged, message = True, f"converged at iteration {k}"
            break
        if k == cfg.max_iter:
            message = f"no convergence in {cfg.max_iter} iterations; best residual {best:.3e}"
            break
        if cfg.anderson > 0:
            X.append(x)
            R.append(r)
            X, R = X[-(cfg.anderson + 1):], R[-(cfg.anderson + 1):]
            x = _anderson_step(X, R, x, r, cfg.theta) if len(X) > 1 else x + cfg.theta * r
        else:
            x = (1 - cfg.theta) * x + cfg.theta * tx
    mu = Density(best_x[:n1].reshape(shape), problem.outer)
    eta = Density(best_x[n1:].reshape(shape), problem.inner)
    return NonlinearResult(problem, mu, eta, converged, len(history) - 1, history, best_k,
                           message, report, op)


def explore_fixed_points(problem: MixedProblem, starts, cfg: FixedPointConfig | None = None,
                         op: JBetaOperator | None = None, distinct_tol: float = 1e-6) -> list:
    """Run the iteration from several starting pairs and keep every distinct converged solution."""
    op = op or problem.operator()
    found = []
    for start in starts:
        res = solve_nonlinear(problem, cfg, op, growth="skip", start=start)
        if not res.converged:
            continue
        vec = np.concatenate([res.mu.values.ravel(), res.eta.values.ravel()])
        if all(np.max(np.abs(vec - v)) > distinct_tol for v, _ in found):
            found.append((vec, res))
    return [r for _, r in found]


def eval_solution(problem: MixedProblem, mu, eta, times, points) -> np.ndarray:
    """``u = v_O[mu] + v_i[eta]`` at probes inside the annulus."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ok = problem.outer.contains(points) & ~problem.inner.contains(points)
    if not np.all(ok):
        raise GeometryError(f"{np.count_nonzero(~ok)} probes lie outside the annulus")
    g = problem.grid
    return (eval_single_layer(problem.outer, mu, times, points, g)
            + eval_single_layer(problem.inner, eta, times, points, g))
