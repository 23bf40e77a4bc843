"""Linear boundary integral equations solved by time marching.

Every equation here has the causal form ``(c I + A)[mu] = g`` with ``A`` a
:class:`~heatbie.potentials.BlockOperator``; step ``m`` solves

    (c I + A[0]) mu[m] = g[m] - sum_{k<m} A[m-k] mu[k]

with one factorization of the same-time block.

Second-kind problems and their representations::

    exterior Dirichlet   ( 1/2 I + W ) mu = g      u = w[mu]  outside
    exterior Neumann     (-1/2 I + W*) mu = g      u = v[mu]  outside
    interior Dirichlet   (-1/2 I + W ) mu = g      u = w[mu]  inside
    interior Neumann     ( 1/2 I + W*) mu = g      u = v[mu]  inside

The normal is outward, so ``d/dnu u`` on an exterior problem points into the
domain's complement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .geometry import BoundaryCurve, GeometryError, SpaceTimeGrid, validate_annulus
from .potentials import (
    BlockOperator,
    Density,
    _values,
    assemble_cross,
    assemble_V,
    assemble_W,
    assemble_Wstar,
    eval_double_layer,
    eval_single_layer,
)

SINGULAR_RTOL = 1e-14


class SolverError(RuntimeError):
    """Singular same-time block; ``sigma_min`` is its smallest singular value."""

    def __init__(self, message: str, sigma_min: float = float("nan")):
        super().__init__(f"{message} (smallest singular value {sigma_min:.3e})")
        self.sigma_min = sigma_min


def _singular_values(block: np.ndarray) -> np.ndarray:
    return linalg.svdvals(block)


def _factor(block: np.ndarray, what: str):
    s = _singular_values(block)
    if not np.all(np.isfinite(s)) or s[-1] <= SINGULAR_RTOL * max(s[0], 1e-300):
        raise SolverError(f"same-time block of {what} is singular", float(s[-1]))
    return linalg.lu_factor(block), s


def _check_datum(g, grid: SpaceTimeGrid) -> np.ndarray:
    g = _values(g)
    if g.shape[0] != grid.Nt + 1:
        raise ValueError(f"datum has {g.shape[0]} time rows, grid needs {grid.Nt + 1}")
    if np.any(g[0] != 0):
        raise ValueError("datum row 0 must be zero (zero initial condition)")
    return g


def march(op: BlockOperator, shift: float, g, what: str = "operator"):
    """Solve ``(shift I + op) mu = g`` step by step; returns ``(mu, singular values)``."""
    g = np.asarray(g, dtype=float)
    block = op.same_time() + shift * np.eye(op.n_target)
    lu, s = _factor(block, what)
    mu = np.zeros((g.shape[0], op.n_source))
    for m in range(1, g.shape[0]):
        mu[m] = linalg.lu_solve(lu, g[m] - op.history(mu, m))
    return mu, s


PROBLEMS = {
    # name: (operator, shift, layer, exterior)
    "ext-dirichlet": ("W", 0.5, "double", True),
    "ext-neumann": ("W*", -0.5, "single", True),
    "int-dirichlet": ("W", -0.5, "double", False),
    "int-neumann": ("W*", 0.5, "single", False),
}


@dataclass
class LinearSolution:
    """Density of a second-kind solve plus its field representation."""

    problem: str
    curve: BoundaryCurve
    grid: SpaceTimeGrid
    mu: Density
    singular_values: np.ndarray = field(repr=False)

    @property
    def condition(self) -> float:
        return float(self.singular_values[0] / self.singular_values[-1])

    def field(self, times, points) -> np.ndarray:
        """Reconstructed solution at probes ``(times[p], points[p])`` in the domain."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.curve.contains(points)
        exterior = PROBLEMS[self.problem][3]
        if np.any(inside == exterior):
            side = "outside" if exterior else "inside"
            raise GeometryError(f"probes must lie {side} the curve for {self.problem}")
        layer = PROBLEMS[self.problem][2]
        ev = eval_double_layer if layer == "double" else eval_single_layer
        return ev(self.curve, self.mu, times, points, self.grid)

    def report(self) -> dict:
        return {"problem": self.problem, "N_x": self.grid.Nx, "N_t": self.grid.Nt,
                "sigma_min": float(self.singular_values[-1]), "condition": self.condition}


def solve_second_kind(problem: str, curve: BoundaryCurve, g, grid: SpaceTimeGrid,
                      op: BlockOperator | None = None) -> LinearSolution:
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}; expected one of {sorted(PROBLEMS)}")
    name, shift, _, _ = PROBLEMS[problem]
    g = _check_datum(g, grid)
    if op is None:
        op = assemble_W(curve, grid) if name == "W" else assemble_Wstar(curve, grid)
    mu, s = march(op, shift, g, f"{problem} operator")
    return LinearSolution(problem, curve, grid, Density(mu, curve), s)


def solve_exterior_dirichlet(curve, g, grid, op=None) -> LinearSolution:
    return solve_second_kind("ext-dirichlet", curve, g, grid, op)


def solve_exterior_neumann(curve, g, grid, op=None) -> LinearSolution:
    return solve_second_kind("ext-neumann", curve, g, grid, op)


def solve_interior_dirichlet(curve, g, grid, op=None) -> LinearSolution:
    return solve_second_kind("int-dirichlet", curve, g, grid, op)


def solve_interior_neumann(curve, g, grid, op=None) -> LinearSolution:
    return solve_second_kind("int-neumann", curve, g, grid, op)


@dataclass
class FirstKindReport:
    condition: float
    rank: int
    size: int
    threshold: float
    singular_values: np.ndarray = field(repr=False)


def solve_first_kind_V(curve: BoundaryCurve, xi, grid: SpaceTimeGrid, threshold: float = 1e-12,
                       op: BlockOperator | None = None) -> tuple[Density, FirstKindReport]:
    """Solve ``V mu = xi`` with a truncated-SVD inverse of the same-time block."""
    xi = _check_datum(xi, grid)
    op = op or assemble_V(curve, grid)
    U, s, Vt = linalg.svd(op.same_time())
    keep = s > threshold * s[0]
    rank = int(np.count_nonzero(keep))
    if rank == 0:
        raise SolverError("truncation removed every singular mode of V", float(s[-1]))
    pinv = (Vt[:rank].T / s[:rank]) @ U[:, :rank].T
    mu = np.zeros((grid.Nt + 1, op.n_source))
    for m in range(1, grid.Nt + 1):
        mu[m] = pinv @ (xi[m] - op.history(mu, m))
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    return Density(mu, curve), FirstKindReport(cond, rank, len(s), threshold, s)


# --- the linearized mixed operator --------------------------------------------------------------

def _beta_lattice(beta, grid: SpaceTimeGrid) -> np.ndarray:
    b = np.broadcast_to(np.asarray(beta, dtype=float), grid.shape).copy()
    if not np.all(np.isfinite(b)):
        bad = np.argwhere(~np.isfinite(b))[0]
        raise ValueError(f"beta is not finite at step {bad[0]}, node {bad[1]}")
    return b


class JBetaOperator:
    """Linearized mixed Neumann/Robin operator on ``(mu, eta)``.

    Row 1 (outer curve ``Omega``)::  (1/2 I + W*_O) mu + d/dnu_O v_i[eta]
    Row 2 (cavity ``omega``)::      (-1/2 I + W*_i) eta + d/dnu_i v_O[mu]
                                       - beta (v_O[mu] + V_i eta)

    The same-time block is factored once per distinct row of ``beta``.
    """

    def __init__(self, outer: BoundaryCurve, inner: BoundaryCurve, grid: SpaceTimeGrid, beta=0.0):
        validate_annulus(outer, inner)
        self.outer, self.inner, self.grid = outer, inner, grid
        self.beta = _beta_lattice(beta, grid)
        self.Wo = assemble_Wstar(outer, grid)
        self.Wi = assemble_Wstar(inner, grid)
        self.Vi = assemble_V(inner, grid)
        self.dn_io = assemble_cross(inner, outer, grid, "normal-derivative")
        self.dn_oi = assemble_cross(outer, inner, grid, "normal-derivative")
        self.val_oi = assemble_cross(outer, inner, grid, "value")
        self._lu = {}

    def with_beta(self, beta) -> "JBetaOperator":
        """Copy sharing the assembled blocks, with a new coefficient."""
        new = object.__new__(JBetaOperator)
        new.__dict__.update(self.__dict__)
        new.beta = _beta_lattice(beta, self.grid)
        new._lu = {}
        return new

    @property
    def n_outer(self) -> int:
        return self.Wo.n_source

    @property
    def n_inner(self) -> int:
        return self.Wi.n_source

    def same_time_block(self, m: int = 1) -> np.ndarray:
        n1, n2 = self.n_outer, self.n_inner
        b = self.beta[m][:, None]
        top = np.hstack([0.5 * np.eye(n1) + self.Wo.same_time(), self.dn_io.same_time()])
        bottom = np.hstack([self.dn_oi.same_time() - b * self.val_oi.same_time(),
                            -0.5 * np.eye(n2) + self.Wi.same_time() - b * self.Vi.same_time()])
        return np.vstack([top, bottom])

    def singular_values(self, m: int = 1) -> np.ndarray:
        return _singular_values(self.same_time_block(m))

    def smallest_singular_value(self) -> float:
        """Minimum over the distinct same-time blocks used by the march."""
        rows = {self.beta[m].tobytes(): m for m in range(1, self.grid.Nt + 1)}
        return float(min(self.singular_values(m)[-1] for m in rows.values()))

    def _factor_at(self, m: int):
        key = self.beta[m].tobytes()
        if key not in self._lu:
            self._lu[key] = _factor(self.same_time_block(m), "J_beta")[0]
        return self._lu[key]

    def cavity_trace(self, mu, eta) -> np.ndarray:
        """``v_O[mu] + V_i eta`` on the cavity boundary."""
        return self.val_oi.apply(mu) + self.Vi.apply(eta)

    def apply(self, mu, eta) -> tuple[np.ndarray, np.ndarray]:
        mu, eta = _values(mu), _values(eta)
        r1 = 0.5 * mu + self.Wo.apply(mu) + self.dn_io.apply(eta)
        r2 = (-0.5 * eta + self.Wi.apply(eta) + self.dn_oi.apply(mu)
              - self.beta * self.cavity_trace(mu, eta))
        r1[0] = 0.0
        r2[0] = 0.0
        return r1, r2

    def solve(self, rhs1, rhs2) -> tuple[Density, Density]:
        rhs1 = _check_datum(rhs1, self.grid)
        rhs2 = _check_datum(rhs2, self.grid)
        n1 = self.n_outer
        mu = np.zeros((self.grid.Nt + 1, n1))
        eta = np.zeros((self.grid.Nt + 1, self.n_inner))
        for m in range(1, self.grid.Nt + 1):
            h1 = self.Wo.history(mu, m) + self.dn_io.history(eta, m)
            h2 = (self.Wi.history(eta, m) + self.dn_oi.history(mu, m)
                  - self.beta[m] * (self.val_oi.history(mu, m) + self.Vi.history(eta, m)))
            x = linalg.lu_solve(self._factor_at(m), np.concatenate([rhs1[m] - h1, rhs2[m] - h2]))
            mu[m], eta[m] = x[:n1], x[n1:]
        return Density(mu, self.outer), Density(eta, self.inner)

    def report(self) -> dict:
        return {"N_x": self.grid.Nx, "N_t": self.grid.Nt,
                "sigma_min": self.smallest_singular_value(),
                "distinct_blocks": len({self.beta[m].tobytes() for m in range(1, self.grid.Nt + 1)})}


def assemble_J_beta(outer: BoundaryCurve, inner: BoundaryCurve, grid: SpaceTimeGrid, beta=0.0) -> JBetaOperator:
    return JBetaOperator(outer, inner, grid, beta)


def solve_J_beta(op: JBetaOperator, rhs1, rhs2) -> tuple[Density, Density]:
    return op.solve(rhs1, rhs2)
