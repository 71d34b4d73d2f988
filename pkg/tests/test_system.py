import math

import numpy as np
import pytest

from patsample.bandlimit import FilterSpec, filter_traces
from patsample.geometry import CoefficientImage, SensorGeometry, Sinogram, TimeGrid
from patsample.system import DenseOperator, build_system, required_refinement
from patsample.wave import build_forward


@pytest.fixture(scope="module")
def sys_op(small_setup):
    grid, geom, tgrid = small_setup
    return build_system(geom, TimeGrid(1.0, tgrid.num_samples // 2 + 1, tgrid.start_time), grid, FilterSpec(1.0))


def test_refinement_factor():
    assert required_refinement(None, 1.0) == 1
    spec = FilterSpec(math.pi)
    # Gaussian band reaches about 1.73 Omega
    assert required_refinement(spec, 1.0) == 2
    assert required_refinement(FilterSpec(math.pi, "ideal"), 1.0) == 1
    assert required_refinement(FilterSpec(1.0), 0.1) == 1


def test_system_dot_product(sys_op):
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.standard_normal(sys_op.shape[1])
        y = rng.standard_normal(sys_op.shape[0])
        Ax = sys_op.matvec(x)
        assert abs(Ax @ y - x @ sys_op.rmatvec(y)) <= 1e-12 * np.linalg.norm(Ax) * np.linalg.norm(y)


def test_dense_equals_matrix_free(sys_op):
    D = DenseOperator.from_operator(sys_op)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(sys_op.shape[1])
    y = rng.standard_normal(sys_op.shape[0])
    ref = sys_op.matvec(x)
    np.testing.assert_allclose(D.matvec(x), ref, rtol=0, atol=1e-12 * np.abs(ref).max())
    ref = sys_op.rmatvec(y)
    np.testing.assert_allclose(D.rmatvec(y), ref, rtol=0, atol=1e-12 * np.abs(ref).max())


def test_system_is_filter_then_subsample(sys_op):
    x = np.random.default_rng(2).standard_normal(sys_op.shape[1])
    fw = sys_op.forward
    fine = fw.matvec(x).reshape(fw.data_shape)
    ref = filter_traces(fine, sys_op.spec, fw.time_grid.step)[:, :: sys_op.refine]
    np.testing.assert_allclose(sys_op.matvec(x).reshape(sys_op.data_shape), ref, atol=1e-12 * np.abs(ref).max())
    np.testing.assert_allclose(fw.time_grid.times()[:: sys_op.refine], sys_op.output_grid.times())


def test_unfiltered_system_is_subsampled_forward(small_setup):
    grid, geom, tgrid = small_setup
    coarse = TimeGrid(2 * tgrid.step, tgrid.num_samples // 2 + 1, tgrid.start_time)
    op = build_system(geom, coarse, grid, None, refine=2)
    fw = build_forward(geom, coarse.refine(2), grid)
    x = np.random.default_rng(3).standard_normal(op.shape[1])
    np.testing.assert_array_equal(op.matvec(x), fw.matvec(x).reshape(fw.data_shape)[:, ::2].ravel())


def test_linear_operator_wrapper(sys_op):
    L = sys_op.aslinearoperator()
    x = np.ones(sys_op.shape[1])
    np.testing.assert_array_equal(L.matvec(x), sys_op.matvec(x))
    assert L.shape == sys_op.shape


def test_sinogram_wrappers(sys_op):
    x = CoefficientImage.zeros(sys_op.image_grid)
    g = sys_op.apply(x)
    assert isinstance(g, Sinogram)
    assert g.data.shape == sys_op.data_shape
    assert sys_op.apply_adjoint(g).grid == sys_op.image_grid


def test_unrepresentable_filter_rejected(small_setup):
    grid, geom, tgrid = small_setup
    with pytest.raises(ValueError, match="Nyquist"):
        build_system(geom, tgrid, grid, FilterSpec(10.0), refine=1)
    with pytest.raises(ValueError):
        build_system(SensorGeometry(12.0, 4), tgrid, grid, None, refine=0)
