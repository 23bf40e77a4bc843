import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heatbie.geometry import (
    BoundaryCurve,
    GeometryError,
    SpaceTimeGrid,
    curve_from_dict,
    make_circle,
    make_star,
    validate_annulus,
)


def test_circle_position_and_normal():
    c = make_circle((0, 0), 1.0)
    np.testing.assert_allclose(c.position(0.0), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(c.normal(0.0), [1.0, 0.0], atol=1e-15)


def test_circle_normal_is_radial():
    c = make_circle((0.3, -0.2), 2.0)
    th = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    expected = (c.position(th) - np.array([0.3, -0.2])) / 2.0
    np.testing.assert_allclose(c.normal(th), expected, atol=1e-14)


def test_circle_arclength():
    assert abs(make_circle((0, 0), 2.0).arclength(64) - 4 * np.pi) <= 1e-10


@pytest.mark.parametrize("radius", [0.0, -1.0])
def test_circle_rejects_bad_radius(radius):
    with pytest.raises(GeometryError):
        make_circle((0, 0), radius)


def test_star_degenerates_to_circle():
    th = np.linspace(0, 2 * np.pi, 257)
    d = make_star((0, 0), 1.0, 0.0, 5).position(th) - make_circle((0, 0), 1.0).position(th)
    assert np.max(np.abs(d)) <= 1e-14


def test_star_position_at_zero():
    np.testing.assert_allclose(make_star((0, 0), 1.0, 0.3, 5).position(0.0), [1.3, 0.0], atol=1e-15)


def test_star_normal_unit_and_matches_finite_difference():
    c = make_star((0, 0), 1.0, 0.3, 5)
    th = 2 * np.pi * np.arange(256) / 256
    n = c.normal(th)
    assert np.max(np.abs(np.linalg.norm(n, axis=1) - 1)) <= 1e-12
    h = 1e-6
    tan = (c.position(th + h) - c.position(th - h)) / (2 * h)
    tan /= np.linalg.norm(tan, axis=1, keepdims=True)
    np.testing.assert_allclose(n, np.stack([tan[:, 1], -tan[:, 0]], axis=1), atol=1e-8)


@pytest.mark.parametrize("a,k", [(1.0, 3), (1.5, 2), (-0.1, 3)])
def test_star_rejects_bad_amplitude(a, k):
    with pytest.raises(GeometryError):
        make_star((0, 0), 1.0, a, k)


def test_star_rejects_negative_wobbles():
    with pytest.raises(GeometryError):
        make_star((0, 0), 1.0, 0.2, -1)


def test_curvature_of_circle():
    c = make_circle((1, 1), 0.5)
    np.testing.assert_allclose(c.curvature(np.linspace(0, 6, 11)), 2.0, rtol=1e-13)


@settings(max_examples=25, deadline=None)
@given(R=st.floats(0.5, 2.0), frac=st.floats(0.0, 0.6), k=st.integers(0, 6),
       eps=st.floats(1e-4, 1e-2))
def test_normal_points_outward(R, frac, k, eps):
    c = make_star((0.1, -0.2), R, frac * R / (1 + k * k), k)
    th = np.linspace(0, 2 * np.pi, 37, endpoint=False)
    p, n = c.position(th), c.normal(th)
    assert not c.contains(p + eps * n).any()
    assert c.contains(p - eps * n).all()


@settings(max_examples=20, deadline=None)
@given(R=st.floats(0.3, 3.0))
def test_arclength_spectral_for_circles(R):
    assert abs(make_circle((0, 0), R).arclength(64) - 2 * np.pi * R) <= 1e-10 * R


def test_winding_number():
    c = make_star((0.1, 0), 1, 0.3, 5)
    np.testing.assert_array_equal(c.winding_number([[0, 0], [2, 0], [0.1, 1.25]]), [1, 0, 0])


def test_distance_to_circle():
    c = make_circle((0, 0), 1.0)
    np.testing.assert_allclose(c.distance([[0, 0], [2, 0], [0.5, 0]]), [1.0, 1.0, 0.5], atol=1e-6)


def test_validate_concentric():
    rep = validate_annulus(make_circle((0, 0), 1.0), make_circle((0, 0), 0.4))
    assert rep.valid and abs(rep.separation - 0.6) < 1e-5


def test_validate_offset():
    rep = validate_annulus(make_circle((0, 0), 1.0), make_circle((0.5, 0), 0.3))
    assert rep.valid and abs(rep.separation - 0.2) < 1e-5


def test_validate_rejects_larger_inner():
    with pytest.raises(GeometryError):
        validate_annulus(make_circle((0, 0), 1.0), make_circle((0, 0), 1.2))
    rep = validate_annulus(make_circle((0, 0), 1.0), make_circle((0, 0), 1.2), raise_on_error=False)
    assert not rep.valid


def test_validate_rejects_overlap():
    with pytest.raises(GeometryError, match="outside"):
        validate_annulus(make_circle((0, 0), 1.0), make_circle((0.9, 0), 0.3))


def test_curve_dict_roundtrip():
    c = make_star((0.5, 0.1), 1.0, 0.2, 3, name="outer")
    assert curve_from_dict(c.to_dict(), "outer") == c
    with pytest.raises(GeometryError):
        curve_from_dict({"kind": "ellipse", "radius": 1.0})


def test_grid_properties():
    g = SpaceTimeGrid(0.5, 16, 64)
    assert g.ht == 0.5 / 16 and g.shape == (17, 64)
    np.testing.assert_allclose(np.diff(g.times), g.ht)
    np.testing.assert_allclose(g.theta[1], 2 * np.pi / 64)


@pytest.mark.parametrize("T,Nt,Nx", [(0.0, 4, 8), (1.0, 0, 8), (1.0, 4, 4)])
def test_grid_rejects(T, Nt, Nx):
    with pytest.raises(GeometryError):
        SpaceTimeGrid(T, Nt, Nx)


def test_curve_is_immutable():
    c = BoundaryCurve((0.0, 0.0), 1.0)
    with pytest.raises(Exception):
        c.radius = 2.0
