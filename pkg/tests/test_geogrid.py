import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoensemble.geogrid import (
    EARTH_RADIUS_KM,
    GeoPoint,
    GlobalGrid,
    area_from_row_counts,
    great_circle_distance,
    latlon_to_index,
    pixel_area,
    spherical_cap_area,
)

R = EARTH_RADIUS_KM
SPHERE = 4 * math.pi * R ** 2

lats = st.floats(-90, 90, allow_nan=False)
lons = st.floats(-180, 180, allow_nan=False, exclude_max=True)
points = st.builds(GeoPoint, lats, lons)


def test_full_grid_sums_to_sphere():
    grid = GlobalGrid(5400, 10800)
    total = sum(pixel_area(grid, i) for i in range(grid.height)) * grid.width
    assert math.isclose(total, SPHERE, rel_tol=1e-9)
    assert math.isclose(total, 5.10066e8, rel_tol=1e-5)


def test_row_just_north_of_equator():
    # R^2 * (2 pi / 10800) * sin(1/30 deg), evaluated with mpmath at 40 digits
    assert math.isclose(pixel_area(GlobalGrid(5400, 10800), 2699), 13.738161300734726, rel_tol=1e-12)


def test_two_by_two_pixels_are_equal():
    grid = GlobalGrid(2, 2)
    for row in range(2):
        assert math.isclose(pixel_area(grid, row), SPHERE / 4, rel_tol=1e-12)


def test_pixel_area_out_of_range():
    with pytest.raises(IndexError):
        pixel_area(GlobalGrid(4, 8), 4)
    with pytest.raises(IndexError):
        pixel_area(GlobalGrid(4, 8), -1)


@given(st.integers(1, 400), st.integers(1, 400))
def test_area_sum_any_grid(h, w):
    grid = GlobalGrid(h, w)
    assert math.isclose(grid.areas.total, SPHERE, rel_tol=1e-9)


@given(st.integers(1, 500))
def test_areas_symmetric_and_peak_at_equator(h):
    a = GlobalGrid(h, 7).areas.areas
    assert np.all(a > 0)
    assert np.array_equal(a, a[::-1])
    half = a[: (h + 1) // 2]
    assert np.all(np.diff(half) > 0)


def test_latlon_to_index_examples():
    assert latlon_to_index(GlobalGrid(5400, 10800), GeoPoint(0.001, 0.001)) == (2699, 5400)
    assert latlon_to_index(GlobalGrid(180, 360), GeoPoint(89.9, -179.9)) == (0, 0)
    assert latlon_to_index(GlobalGrid(180, 360), GeoPoint(-90.0, 180.0)) == (179, 0)


def test_edges_go_south_and_east():
    grid = GlobalGrid(180, 360)
    assert latlon_to_index(grid, GeoPoint(10.0, 20.0)) == (80, 200)
    assert latlon_to_index(grid, GeoPoint(90.0, 0.0)) == (0, 180)
    assert latlon_to_index(grid, GeoPoint(0.0, 0.0)) == (90, 180)


@given(st.integers(1, 300), st.integers(1, 300), st.data())
def test_center_round_trip(h, w, data):
    grid = GlobalGrid(h, w)
    i = data.draw(st.integers(0, h - 1))
    j = data.draw(st.integers(0, w - 1))
    assert latlon_to_index(grid, grid.index_to_center(i, j)) == (i, j)


def test_longitude_normalised():
    assert GeoPoint(0, 180).lon == -180.0
    assert GeoPoint(0, 540).lon == -180.0
    assert GeoPoint(0, -190).lon == 170.0
    with pytest.raises(ValueError):
        GeoPoint(91, 0)


def test_gcd_examples():
    p = GeoPoint(12.5, -40.0)
    assert great_circle_distance(p, p) == 0.0
    assert math.isclose(great_circle_distance(GeoPoint(0, 0), GeoPoint(0, 180)), 20015.11444203592, rel_tol=1e-12)
    assert math.isclose(great_circle_distance(GeoPoint(90, 0), GeoPoint(0, 0)), 10007.557221017962, rel_tol=1e-12)


@given(points, points)
def test_gcd_symmetric_and_bounded(a, b):
    d = great_circle_distance(a, b)
    assert d == great_circle_distance(b, a)
    assert 0 <= d <= math.pi * R


@given(points, points, points)
def test_gcd_triangle(a, b, c):
    assert great_circle_distance(a, c) <= great_circle_distance(a, b) + great_circle_distance(b, c) + 1e-6


@pytest.mark.parametrize("radius, expected", [
    (1, 3.1415926471399046),
    (25, 1963.4928890071621),
    (200, 125653.38666075033),
    (750, 1765106.0250507626),
    (2500, 19384294.927062812),
])
def test_cap_area_matches_high_precision(radius, expected):
    assert math.isclose(spherical_cap_area(radius), expected, rel_tol=1e-12)


def test_cap_area_limits():
    assert spherical_cap_area(0) == 0
    assert math.isclose(spherical_cap_area(math.pi * R), SPHERE, rel_tol=1e-9)
    with pytest.raises(ValueError):
        spherical_cap_area(-1)
    with pytest.raises(ValueError):
        spherical_cap_area(math.pi * R * 1.01)


@given(st.lists(st.integers(0, 5000), min_size=1, max_size=40), st.integers(0, 2 ** 32))
def test_area_from_row_counts_is_exactly_rounded(counts, seed):
    from fractions import Fraction

    areas = np.random.default_rng(seed).random(len(counts)) * 100
    exact = sum(Fraction(int(n)) * Fraction(float(a)) for n, a in zip(counts, areas))
    assert area_from_row_counts(np.array(counts), areas) == float(exact)


def test_grid_validation():
    with pytest.raises(ValueError):
        GlobalGrid(0, 10)
    with pytest.raises(ValueError):
        GlobalGrid(10, 10, -1.0)
