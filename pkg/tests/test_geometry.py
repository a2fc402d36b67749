import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panoshift.geometry import (
    CartesianPoint,
    GeometryError,
    SphericalPoint,
    cartesian_to_spherical,
    direction_to_pixel,
    pixel_to_direction,
    sample_equirect,
    spherical_to_cartesian,
    unit_rays,
)


def test_forward_axis():
    c = spherical_to_cartesian(SphericalPoint(0.0, 0.0, 1.0))
    assert (c.x, c.y, c.z) == pytest.approx((0, 0, 1))


def test_zenith():
    c = spherical_to_cartesian(SphericalPoint(0.0, math.pi / 2, 2.0))
    assert (c.x, c.y, c.z) == pytest.approx((0, 2, 0), abs=1e-12)


def test_diagonal_point():
    # sin(pi/2) cos(pi/4) sqrt(2) = 1, sin(pi/4) sqrt(2) = 1, cos(pi/2) ~ 0
    c = spherical_to_cartesian(SphericalPoint(math.pi / 2, math.pi / 4, math.sqrt(2)))
    assert (c.x, c.y, c.z) == pytest.approx((1, 1, 0), abs=1e-12)


def test_inverse_examples():
    p = cartesian_to_spherical(CartesianPoint(0.0, 0.0, 1.0))
    assert (p.phi, p.theta, p.r) == pytest.approx((0, 0, 1))
    nadir = cartesian_to_spherical(CartesianPoint(0.0, -3.0, 0.0))
    assert (nadir.phi, nadir.theta, nadir.r) == (0.0, -math.pi / 2, 3.0)
    p = cartesian_to_spherical(CartesianPoint(1.0, 1.0, 0.0))
    assert (p.phi, p.theta, p.r) == pytest.approx((math.pi / 2, math.pi / 4, math.sqrt(2)))


@pytest.mark.parametrize("r", [0.0, -1.0, np.inf, np.nan])
def test_rejects_bad_radius(r):
    with pytest.raises(GeometryError):
        SphericalPoint(0.0, 0.0, r)


def test_rejects_latitude_out_of_range():
    with pytest.raises(GeometryError):
        SphericalPoint(0.0, 2.0, 1.0)


def test_longitude_wraps_into_half_open_range():
    assert SphericalPoint(math.pi, 0.0).phi == pytest.approx(-math.pi)
    assert SphericalPoint(3 * math.pi / 2, 0.0).phi == pytest.approx(-math.pi / 2)


def test_zero_vector_rejected():
    with pytest.raises(GeometryError):
        cartesian_to_spherical(CartesianPoint(0.0, 0.0, 0.0))


def test_round_trip_bulk():
    rng = np.random.default_rng(0)
    n = 100_000
    p = SphericalPoint(rng.uniform(-np.pi, np.pi, n), rng.uniform(-np.pi / 2, np.pi / 2, n),
                       rng.uniform(0.1, 50.0, n))
    c = spherical_to_cartesian(p)
    assert np.allclose(c.norm, p.r, rtol=1e-12)
    q = cartesian_to_spherical(c)
    back = spherical_to_cartesian(q)
    err = np.linalg.norm(back.as_array() - c.as_array(), axis=1) / p.r
    assert err.max() < 1e-9
    assert np.max(np.abs(q.r - p.r) / p.r) < 1e-9


def test_pixel_center_examples():
    w, h = 16, 8
    p = pixel_to_direction(w // 2, h // 2, w, h)
    assert p.phi == pytest.approx(math.pi / w)
    assert p.theta == pytest.approx(-math.pi / (2 * h))
    p = pixel_to_direction(0, 0, w, h)
    assert p.phi == pytest.approx(-math.pi + math.pi / w)
    assert p.theta == pytest.approx(math.pi / 2 - math.pi / (2 * h))


@pytest.mark.parametrize("args", [(-1, 0, 8, 4), (8, 0, 8, 4), (0, 4, 8, 4), (0, 0, 8, 5)])
def test_pixel_to_direction_errors(args):
    with pytest.raises(GeometryError):
        pixel_to_direction(*args)


def test_pixel_round_trip_every_center():
    w, h = 64, 32
    j, i = np.mgrid[0:h, 0:w]
    u, v = direction_to_pixel(pixel_to_direction(i, j, w, h), w, h)
    assert np.array_equal(np.rint(u).astype(int), i)
    assert np.array_equal(np.rint(v).astype(int), j)
    assert np.max(np.abs(u - i)) < 1e-9 and np.max(np.abs(v - j)) < 1e-9


@given(st.floats(-50, 50), st.floats(-1.5, 1.5))
def test_longitude_wrap_invariance(phi, theta):
    a = direction_to_pixel(SphericalPoint(phi, theta), 64, 32)
    b = direction_to_pixel(SphericalPoint(phi + 2 * np.pi, theta), 64, 32)
    assert a[1] == b[1]
    # same column modulo the grid width
    assert abs(((a[0] - b[0] + 32) % 64) - 32) < 1e-6


def test_unit_rays_match_pixel_to_direction():
    w, h = 32, 16
    rays = unit_rays(w, h)
    j, i = np.mgrid[0:h, 0:w]
    c = spherical_to_cartesian(pixel_to_direction(i, j, w, h))
    assert np.allclose(rays, c.as_array())


def test_sample_equirect_wraps_columns():
    img = np.zeros((4, 8))
    img[:, 0] = 1.0
    # halfway between last column and column 0
    assert sample_equirect(img, np.array([7.5]), np.array([1.0]))[0] == pytest.approx(0.5)
    assert sample_equirect(img, np.array([-0.5]), np.array([1.0]))[0] == pytest.approx(0.5)


@settings(max_examples=50)
@given(st.floats(-np.pi, np.pi), st.floats(-1.5, 1.5), st.floats(0.01, 100))
def test_cartesian_round_trip_property(phi, theta, r):
    p = SphericalPoint(phi, theta, r)
    q = cartesian_to_spherical(spherical_to_cartesian(p))
    assert q.r == pytest.approx(r, rel=1e-9)
    assert q.theta == pytest.approx(p.theta, abs=1e-9)
    if abs(math.cos(p.theta)) > 1e-6:
        assert abs(((q.phi - p.phi + np.pi) % (2 * np.pi)) - np.pi) < 1e-7
