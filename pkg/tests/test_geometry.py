import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patsample.geometry import (
    CoefficientImage,
    ImageGrid,
    SensorGeometry,
    Sinogram,
    TimeGrid,
    rescale_time,
    sensor_positions,
    signal_window,
)


def test_four_sensors_on_full_circle():
    pts = sensor_positions(SensorGeometry(40.0, 4))
    expected = 40.0 * np.array([[1, 0], [0, 1], [-1, 0], [0, -1]])
    np.testing.assert_allclose(pts, expected, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 40.0, rtol=1e-15)


def test_partial_arc_step_matches_reported_value():
    geom = SensorGeometry(40.0, 64, coverage=math.radians(289))
    assert geom.angular_step_h_theta == pytest.approx(0.078, abs=1e-3)


def test_endpoint_convention_gives_larger_step():
    geom = SensorGeometry(40.0, 64, coverage=math.radians(289), step_convention="endpoints")
    assert geom.angular_step_h_theta == pytest.approx(math.radians(289) / 63)
    ang = geom.angles()
    assert ang[-1] == pytest.approx(math.radians(289))


def test_single_sensor_at_pi():
    pts = sensor_positions(SensorGeometry(1.0, 1, start_angle=math.pi))
    np.testing.assert_allclose(pts, [[-1.0, 0.0]], atol=1e-15)


@given(
    R=st.floats(0.1, 100),
    M=st.integers(1, 50),
    start=st.floats(-7, 7),
    delta=st.floats(-3.5, 3.5),
)
def test_rotation_equivariance(R, M, start, delta):
    base = sensor_positions(SensorGeometry(R, M, start_angle=start))
    moved = sensor_positions(SensorGeometry(R, M, start_angle=start + delta))
    c, s = math.cos(delta), math.sin(delta)
    rotated = base @ np.array([[c, s], [-s, c]])
    np.testing.assert_allclose(moved, rotated, rtol=0, atol=1e-12 * R)
    np.testing.assert_allclose(np.linalg.norm(moved, axis=1), R, rtol=1e-13)


def test_rescale_time_examples():
    geom = SensorGeometry(1.0, 1, sound_speed=1.5)  # mm per microsecond
    assert rescale_time(geom, 26.7) == pytest.approx(40.05)
    assert rescale_time(SensorGeometry(1.0, 1, sound_speed=1.0), 5.0) == 5.0
    assert rescale_time(SensorGeometry(1.0, 1, sound_speed=2.0), 0.0) == 0.0


def test_rescale_time_rejects_nonpositive_speed():
    with pytest.raises(ValueError):
        rescale_time(SensorGeometry(1.0, 1, sound_speed=0.0), 1.0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(radius=0.0, num_sensors=3), dict(radius=1.0, num_sensors=0), dict(radius=1.0, num_sensors=3, coverage=7.0)],
)
def test_invalid_geometry(kwargs):
    with pytest.raises(ValueError):
        SensorGeometry(**kwargs)


def test_decimate_keeps_every_nth_position():
    geom = SensorGeometry(40.0, 64, coverage=math.radians(289))
    sub = geom.decimate(4)
    assert sub.num_sensors == 16
    np.testing.assert_allclose(sub.positions(), geom.positions()[::4], atol=1e-12)
    assert sub.angular_step_h_theta == pytest.approx(4 * geom.angular_step_h_theta)
    assert geom.decimate(1) is geom


def test_image_grid_layout():
    grid = ImageGrid(0.5, 4, center=(1.0, -2.0))
    X, Y = grid.node_coordinates()
    assert X[0, 0] == pytest.approx(1.0 - 0.75)
    assert Y[-1, 0] == pytest.approx(-2.0 + 0.75)
    assert grid.half_width == pytest.approx(1.0)
    assert grid.active_mask().all()


def test_support_mask_limits_centres():
    grid = ImageGrid(1.0, 20, support_radius=5.0)
    X, Y = grid.node_coordinates()
    r = np.hypot(X, Y)
    assert np.all(r[grid.active_mask()] <= 5.0 + 1e-12)
    assert np.all(r[~grid.active_mask()] > 5.0)


def test_time_grid_spanning_covers_interval():
    tg = TimeGrid.spanning(0.3, 2.05, 7.3)
    assert tg.covers(2.05, 7.3)
    assert tg.start_time <= 2.05 < tg.start_time + tg.step
    assert tg.end_time - tg.step < 7.3


def test_time_grid_refine_aligns():
    tg = TimeGrid(0.5, 11, 1.0)
    fine = tg.refine(4)
    np.testing.assert_allclose(fine.times()[::4], tg.times())


def test_signal_window():
    geom = SensorGeometry(40.0, 8)
    grid = ImageGrid(1.0, 8, support_radius=3.0)
    assert signal_window(geom, grid) == (36.0, 44.0)


def test_coefficient_image_validation():
    grid = ImageGrid(1.0, 3)
    with pytest.raises(ValueError):
        CoefficientImage(grid, np.zeros(8))
    with pytest.raises(ValueError):
        CoefficientImage(grid, np.full(9, np.nan))
    x = CoefficientImage(grid, np.arange(9.0))
    assert x.coefficients.shape == (3, 3)
    with pytest.raises(ValueError):
        x.coefficients[0, 0] = 1.0


def test_sinogram_shape_and_finiteness():
    geom = SensorGeometry(1.0, 2)
    tg = TimeGrid(0.1, 5)
    with pytest.raises(ValueError):
        Sinogram(geom, tg, np.zeros((5, 2)))
    with pytest.raises(ValueError):
        Sinogram(geom, tg, np.full((2, 5), np.inf))
    s = Sinogram(geom, tg, np.ones((2, 5)))
    assert s.norm() == pytest.approx(math.sqrt(10))
