import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatbie.geometry import GeometryError, SpaceTimeGrid, make_circle
from heatbie.nonlinear_solver import (
    Expression,
    FixedPointConfig,
    GrowthWarning,
    MixedProblem,
    NonlinearityError,
    RobinNonlinearity,
    T_beta_apply,
    affine,
    apply_NG,
    check_growth_condition,
    explore_fixed_points,
    frozen_slope,
    from_expression,
    linear,
    saturating,
    sin_perturbed,
    solve_nonlinear,
)
from heatbie.verify import random_density, source_traces

OUTER = make_circle((0.0, 0.0), 1.0, "outer")
INNER = make_circle((0.0, 0.0), 0.4, "inner")


@pytest.fixture(scope="module")
def grid():
    return SpaceTimeGrid(0.5, 8, 32)


@pytest.fixture(scope="module")
def op(grid):
    return MixedProblem(OUTER, INNER, grid, np.zeros(grid.shape), linear(1.0, grid, INNER)).operator()


def _trace(grid, seed=0):
    return random_density(grid, seed)


def _f(grid):
    return source_traces(OUTER, grid, INNER.center)[1]


# --- N_G ------------------------------------------------------------------------------------------

def test_apply_NG_linear_and_sin(grid):
    h = _trace(grid)
    np.testing.assert_allclose(apply_NG(linear(2.0, grid, INNER), h), 2.0 * h, atol=1e-15)
    np.testing.assert_allclose(apply_NG(sin_perturbed(1.0, grid, INNER, 0.1), h), h + 0.1 * np.sin(h),
                               atol=1e-15)


def test_apply_NG_uses_lattice_coordinates(grid):
    G = from_expression("beta*u + t*cos(theta)", 1.0, grid, INNER)
    out = apply_NG(G, np.zeros(grid.shape))
    expected = grid.times[:, None] * np.cos(grid.theta)[None, :]
    np.testing.assert_allclose(out, expected, atol=1e-15)
    assert np.all(out[0] == 0.0)


def test_apply_NG_requires_zero_row_and_shape(grid):
    G = linear(1.0, grid, INNER)
    with pytest.raises(ValueError, match="row 0"):
        apply_NG(G, np.ones(grid.shape))
    with pytest.raises(ValueError, match="shape"):
        apply_NG(G, np.zeros((2, 2)))


def test_apply_NG_reports_non_finite_location(grid):
    G = RobinNonlinearity(lambda u, **_: u / (1 - u), 1.0, grid, INNER)
    h = np.zeros(grid.shape)
    h[3, 5] = 1.0
    with pytest.raises(NonlinearityError, match="step 3.*node 5"):
        apply_NG(G, h)


def test_G_must_vanish_at_origin(grid):
    with pytest.raises(NonlinearityError, match="must vanish"):
        from_expression("beta*u + 1", 1.0, grid, INNER)


def test_growth_metadata_validation(grid):
    with pytest.raises(NonlinearityError):
        linear(1.0, grid, INNER, C_G=1.0)
    with pytest.raises(NonlinearityError):
        linear(1.0, grid, INNER, C_G=1.0, delta=1.5)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=-3, max_value=3), st.floats(min_value=-2, max_value=2))
def test_apply_NG_is_pointwise(beta, c):
    grid = SpaceTimeGrid(0.5, 3, 8)
    G = sin_perturbed(beta, grid, INNER, c)
    h = _trace(grid, 1)
    out = apply_NG(G, h)
    # permuting lattice points commutes with the superposition operator
    perm = np.random.default_rng(0).permutation(grid.Nx)
    np.testing.assert_allclose(apply_NG(G, h[:, perm]), out[:, perm], atol=1e-14)


# --- expressions ------------------------------------------------------------------------------------

def test_expression_caret_is_power():
    assert Expression("2^3")() == 8.0
    assert Expression("u^2 + pi")(u=np.array([2.0]))[0] == pytest.approx(4 + np.pi)


def test_expression_theta_alias():
    e = Expression("cos(θ)")
    assert e(theta=np.array([0.0]))[0] == 1.0


@pytest.mark.parametrize("text", ["__import__('os')", "u.real", "log(u)", "u[0]", "lambda: 1", "z + 1",
                                  "sin(u, u)", "u +"])
def test_expression_rejects(text):
    with pytest.raises(NonlinearityError):
        Expression(text)


def test_expression_missing_variable():
    with pytest.raises(NonlinearityError, match="needs"):
        Expression("u + t")(u=1.0)


def test_frozen_slope(grid):
    s = frozen_slope("2*u + 0.5*sin(u) + u^2", grid, INNER)
    np.testing.assert_allclose(s, 2.5, rtol=1e-8)
    with pytest.raises(NonlinearityError):
        frozen_slope("beta*u", grid, INNER)


# --- growth condition ------------------------------------------------------------------------------

@pytest.mark.parametrize("make", [
    lambda g: linear(1.0, g, INNER),
    lambda g: sin_perturbed(1.0, g, INNER, 1.0),
    lambda g: saturating(1.0, g, INNER, 0.5),
])
def test_growth_accepts_sublinear_families(make, grid):
    rep = check_growth_condition(make(grid))
    assert rep.passed, rep.message
    assert rep.slope < 1.0


def test_growth_rejects_quadratic(grid):
    rep = check_growth_condition(from_expression("beta*u + u^2", 1.0, grid, INNER))
    assert not rep.passed
    assert rep.slope > 1.0
    assert "exponent" in rep.message


def test_growth_declared_constants_must_dominate(grid):
    G = sin_perturbed(1.0, grid, INNER, 1.0, C_G=1e-3, delta=0.5)
    rep = check_growth_condition(G)
    assert rep.declared and not rep.passed
    G = sin_perturbed(1.0, grid, INNER, 1.0, C_G=1.0, delta=0.5)
    assert check_growth_condition(G).passed


def test_growth_overflow_fails(grid):
    rep = check_growth_condition(from_expression("beta*u + exp(u) - 1", 1.0, grid, INNER),
                                 scales=(1, 10, 1000))
    assert not rep.passed


# --- T_beta and the fixed-point iteration ----------------------------------------------------------

def test_T_beta_is_constant_for_affine_G(grid, op):
    g0 = random_density(grid, 3)
    problem = MixedProblem(OUTER, INNER, grid, _f(grid), affine(1.0, grid, INNER, g0))
    a = T_beta_apply(problem, np.zeros(grid.shape), np.zeros(grid.shape), op)
    b = T_beta_apply(problem, random_density(grid, 4), random_density(grid, 5), op)
    np.testing.assert_allclose(a[0].values, b[0].values, atol=1e-12)
    np.testing.assert_allclose(a[1].values, b[1].values, atol=1e-12)


def test_fixed_point_satisfies_linear_system(grid, op):
    problem = MixedProblem(OUTER, INNER, grid, _f(grid), sin_perturbed(1.0, grid, INNER, 0.1))
    res = solve_nonlinear(problem, FixedPointConfig(0.5, 1e-10, 200), op)
    assert res.converged
    h = op.cavity_trace(res.mu, res.eta)
    h[0] = 0.0
    r1, r2 = op.apply(res.mu, res.eta)
    np.testing.assert_allclose(r1, problem.f, atol=1e-9)
    np.testing.assert_allclose(r2, apply_NG(problem.G, h) - h, atol=1e-9)


def test_affine_converges_in_one_iteration(grid, op):
    g0 = random_density(grid, 3)
    problem = MixedProblem(OUTER, INNER, grid, _f(grid), affine(1.0, grid, INNER, g0))
    res = solve_nonlinear(problem, FixedPointConfig(theta=1.0), op)
    assert res.converged and res.iterations == 1


def test_zero_data_is_a_fixed_point_at_iteration_zero(grid, op):
    problem = MixedProblem(OUTER, INNER, grid, np.zeros(grid.shape), sin_perturbed(1.0, grid, INNER, 0.1))
    res = solve_nonlinear(problem, op=op)
    assert res.converged and res.iterations == 0
    assert np.all(res.mu.values == 0.0) and np.all(res.eta.values == 0.0)


def test_anderson_reaches_same_fixed_point(grid, op):
    problem = MixedProblem(OUTER, INNER, grid, _f(grid), sin_perturbed(1.0, grid, INNER, 0.1))
    plain = solve_nonlinear(problem, FixedPointConfig(0.5, 1e-10), op)
    acc = solve_nonlinear(problem, FixedPointConfig(0.5, 1e-10, anderson=3), op)
    assert acc.converged and acc.iterations < plain.iterations
    np.testing.assert_allclose(acc.mu.values, plain.mu.values, atol=1e-8)


def test_non_convergence_returns_best_iterate(grid, op):
    problem = MixedProblem(OUTER, INNER, grid, _f(grid), sin_perturbed(1.0, grid, INNER, 0.1))
    res = solve_nonlinear(problem, FixedPointConfig(0.5, 1e-14, max_iter=3), op)
    assert not res.converged
    assert res.iterations == 3 and len(res.history) == 4
    assert res.residual == min(res.history)
    assert "no convergence" in res.message


def test_growth_modes(grid, op):
    problem = MixedProblem(OUTER, INNER, grid, np.zeros(grid.shape),
                           from_expression("beta*u + u^2", 1.0, grid, INNER))
    with pytest.raises(NonlinearityError):
        solve_nonlinear(problem, op=op, growth="strict")
    with pytest.warns(GrowthWarning):
        solve_nonlinear(problem, op=op, growth="warn")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = solve_nonlinear(problem, op=op, growth="skip")
    assert res.growth is None


def test_operator_must_match_problem(grid, op):
    problem = MixedProblem(OUTER, INNER, grid, np.zeros(grid.shape), linear(2.0, grid, INNER))
    with pytest.raises(ValueError, match="does not match"):
        solve_nonlinear(problem, op=op)


def test_explore_fixed_points_deduplicates(grid, op):
    problem = MixedProblem(OUTER, INNER, grid, _f(grid), sin_perturbed(1.0, grid, INNER, 0.1))
    starts = [(np.zeros(grid.shape), np.zeros(grid.shape)),
              (random_density(grid, 1), random_density(grid, 2))]
    found = explore_fixed_points(problem, starts, FixedPointConfig(0.5, 1e-10), op)
    assert len(found) == 1


def test_field_rejects_probes_outside_annulus(grid, op):
    problem = MixedProblem(OUTER, INNER, grid, _f(grid), linear(1.0, grid, INNER))
    res = solve_nonlinear(problem, op=op)
    with pytest.raises(GeometryError):
        res.field([0.5], [[0.1, 0.0]])


def test_fixed_point_config_validation():
    with pytest.raises(ValueError):
        FixedPointConfig(theta=0.0)
    with pytest.raises(ValueError):
        FixedPointConfig(tol=0.0)
    with pytest.raises(ValueError):
        FixedPointConfig(max_iter=-1)


def test_mixed_problem_checks_datum(grid):
    with pytest.raises(ValueError, match="row 0"):
        MixedProblem(OUTER, INNER, grid, np.ones(grid.shape), linear(1.0, grid, INNER))
