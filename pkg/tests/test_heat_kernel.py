import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from conftest import kernel, log_quad
from heatbie.heat_kernel import (
    check_decay_bounds,
    decay_ratios,
    eval_S,
    grad_S,
    time_integrated_grad_S,
    time_integrated_grad_S_dr,
    time_integrated_S,
    time_moment_S,
)


def test_zero_branch():
    assert eval_S(-1.0, [1.0, 0.0]) == 0.0
    assert eval_S(0.0, [1.0, 0.0]) == 0.0


def test_unit_value_at_origin():
    assert abs(eval_S(1 / (4 * np.pi), [0.0, 0.0]) - 1.0) <= 1e-15


def test_value_quarter():
    assert abs(eval_S(0.25, [1.0, 0.0]) - np.exp(-1) / np.pi) <= 1e-15
    assert abs(eval_S(0.25, [1.0, 0.0]) - 0.1170996630) <= 1e-10


def test_three_dimensional_value():
    t, x = 0.3, np.array([0.2, -0.1, 0.4])
    expected = (4 * np.pi * t) ** -1.5 * np.exp(-x @ x / (4 * t))
    assert abs(eval_S(t, x, 3) - expected) <= 1e-15 * expected


def test_excluded_point_rejected():
    with pytest.raises(ValueError):
        eval_S(0.0, [0.0, 0.0])
    with pytest.raises(ValueError):
        eval_S(0.1, [0.0, 0.0, 0.0], 2)
    with pytest.raises(ValueError):
        eval_S(0.1, [0.0, 0.0], 4)


def test_gradient_examples():
    np.testing.assert_array_equal(grad_S(0.5, [0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_array_equal(grad_S(-1.0, [1.0, 0.0]), [0.0, 0.0])
    g = grad_S(0.25, [1.0, 0.0])
    assert abs(g[0] + 0.2341993260) <= 1e-10 and g[1] == 0.0


def test_gradient_matches_finite_difference():
    h = 1e-6
    fd = (eval_S(0.25, [1 + h, 0.0]) - eval_S(0.25, [1 - h, 0.0])) / (2 * h)
    assert abs(grad_S(0.25, [1.0, 0.0])[0] - fd) <= 1e-7


def test_heat_equation_residual():
    rng = np.random.default_rng(3)
    h = 1e-4
    for _ in range(100):
        t = rng.uniform(0.2, 1.0)
        x = rng.uniform(-1.5, 1.5, 2)
        dt = (eval_S(t + h, x) - eval_S(t - h, x)) / (2 * h)
        lap = sum((eval_S(t, x + h * e) - 2 * eval_S(t, x) + eval_S(t, x - h * e)) / h ** 2 for e in np.eye(2))
        assert abs(dt - lap) <= 1e-5


# --- time primitives ---------------------------------------------------------------------------

def test_empty_window():
    assert time_integrated_S(1.0, 0.3, 0.3) == 0.0
    assert time_integrated_grad_S(1.0, 0.3, 0.3) == 0.0
    assert time_moment_S(1.0, 0.3, 0.3) == 0.0


def test_underflow_is_exact_zero():
    for f in (time_integrated_S, time_integrated_grad_S, time_moment_S):
        v = f(100.0, 0.1, 0.2)
        assert v == 0.0 and not np.isnan(v)
    assert time_integrated_grad_S_dr(100.0, 0.1, 0.2) == 0.0


def test_integral_against_quadrature():
    q = log_quad(lambda s: kernel(s, 1.0, 2), 0.1, 0.2, 1.0)
    assert abs(time_integrated_S(1.0, 0.1, 0.2) - q) <= 1e-10 * q


def test_gradient_integral_against_quadrature():
    # |grad S(s, (1, 0))| = S / (2 s)
    q = log_quad(lambda s: kernel(s, 1.0, 2) / (2 * s), 0.1, 0.2, 1.0)
    assert abs(time_integrated_grad_S(1.0, 0.1, 0.2) - q) <= 1e-10 * q


def test_gradient_is_radial_derivative():
    h = 1e-6
    fd = (time_integrated_S(1.0 + h, 0.1, 0.2) - time_integrated_S(1.0 - h, 0.1, 0.2)) / (2 * h)
    assert abs(fd + 1.0 * time_integrated_grad_S(1.0, 0.1, 0.2)) <= 1e-6


@pytest.mark.parametrize("n", [2, 3])
def test_gradient_radial_derivative_closed_form(n):
    r, h = 0.7, 1e-5
    if n == 2:
        fd = (time_integrated_grad_S(r + h, 0.05, 0.3) - time_integrated_grad_S(r - h, 0.05, 0.3)) / (2 * h)
        assert abs(time_integrated_grad_S_dr(r, 0.05, 0.3) - fd) <= 1e-7 * abs(fd)


def test_three_dimensional_erfc_form():
    r, a, b = 0.8, 0.05, 0.4
    expected = (special.erfc(r / (2 * np.sqrt(b))) - special.erfc(r / (2 * np.sqrt(a)))) / (4 * np.pi * r)
    assert abs(time_integrated_S(r, a, b, 3) - expected) <= 1e-13 * expected


@pytest.mark.parametrize("n", [2, 3])
def test_log_grid_against_oracle(n):
    worst = 0.0
    for r in np.logspace(-3, 1, 8):
        for step in np.logspace(-3, 0, 8):
            for a, b in [(0.0, step), (0.3 * step, step)]:
                for f, F in [(lambda s: kernel(s, r, n), time_integrated_S),
                             (lambda s: s * kernel(s, r, n), time_moment_S),
                             (lambda s: kernel(s, r, n) / (2 * s), time_integrated_grad_S)]:
                    q = log_quad(f, a, b, r)
                    v = F(r, a, b, n)
                    if abs(v - q) > 1e-300:
                        worst = max(worst, abs(v - q) / abs(q))
    assert worst <= 1e-10


def test_rejects_bad_slab():
    with pytest.raises(ValueError):
        time_integrated_S(0.0, 0.1, 0.2)
    with pytest.raises(ValueError):
        time_integrated_S(1.0, 0.3, 0.2)
    with pytest.raises(ValueError):
        time_integrated_grad_S(-1.0, 0.1, 0.2)


def test_translation_invariance_by_lag():
    h = 0.03
    vals = {m - k: time_integrated_S(0.4, (m - k) * h, (m - k + 1) * h) for m in range(6) for k in range(m + 1)}
    for m in range(6):
        for k in range(m + 1):
            assert time_integrated_S(0.4, (m - k) * h, (m - k + 1) * h) == vals[m - k]


@settings(max_examples=60, deadline=None)
@given(r=st.floats(1e-3, 5.0), a=st.floats(0.0, 0.5), d1=st.floats(1e-4, 0.5), d2=st.floats(1e-4, 0.5),
       n=st.sampled_from([2, 3]))
def test_window_additivity(r, a, d1, d2, n):
    b, c = a + d1, a + d1 + d2
    for F in (time_integrated_S, time_moment_S, time_integrated_grad_S):
        whole = F(r, a, c, n)
        parts = F(r, a, b, n) + F(r, b, c, n)
        assert abs(whole - parts) <= 1e-11 * max(abs(whole), 1e-290)


@settings(max_examples=60, deadline=None)
@given(r=st.floats(1e-3, 5.0), a=st.floats(0.0, 0.5), d=st.floats(1e-4, 0.5), n=st.sampled_from([2, 3]))
def test_moment_bracketed(r, a, d, n):
    b = a + d
    m0, m1 = time_integrated_S(r, a, b, n), time_moment_S(r, a, b, n)
    assert m0 >= 0 and m1 >= 0
    assert a * m0 * (1 - 1e-12) <= m1 <= b * m0 * (1 + 1e-12)


# --- decay bounds ---------------------------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3])
def test_decay_bounds_pass(n):
    rep = check_decay_bounds(0.5, 10_000, n)
    assert rep.passed and np.isfinite(rep.K1) and np.isfinite(rep.K2) and rep.K1 > 0


def test_decay_ratio_shrinks_with_distance():
    tau = 0.3
    r1, g1 = decay_ratios(tau, np.array([10.0, 0.0]), 0.5)
    r2, g2 = decay_ratios(tau, np.array([20.0, 0.0]), 0.5)
    assert r2 < r1 and g2 < g1


def test_decay_ratio_small_tau_bounded():
    taus = np.array([1e-1, 1e-2, 1e-3, 1e-4, 0.0])
    rs, gs = decay_ratios(taus, np.tile([1.0, 0.0], (5, 1)), 0.5)
    assert np.all(np.isfinite(rs)) and rs[-1] == 0.0 and np.all(np.diff(rs[:-1]) < 0)


def test_decay_rejects_nonpositive_t0():
    with pytest.raises(ValueError):
        check_decay_bounds(0.0)
