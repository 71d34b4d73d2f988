import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import alias_mismatch_prediction
from patsample.bandlimit import (
    FilterSpec,
    apply_psf,
    check_lattice,
    check_time_step,
    estimate_resolution_constant,
    filter_matrix,
    filter_traces,
    filter_traces_adjoint,
    verify_convolution_identity,
)
from patsample.geometry import CoefficientImage, ImageGrid
from patsample.phantom import lattice_frequencies, random_bandlimited_phantom


def test_gaussian_width_from_attenuation():
    spec = FilterSpec(2.0, attenuation_at_Omega=0.01)
    assert float(spec.transfer(2.0)) == pytest.approx(0.01, rel=1e-12)
    assert float(spec.transfer(0.0)) == 1.0
    assert float(spec.transfer(-2.0)) == pytest.approx(0.01, rel=1e-12)


def test_dc_gain_is_one():
    spec = FilterSpec(3.0)
    out = filter_traces(np.full((2, 200), 4.0), spec, 0.05)
    np.testing.assert_allclose(out, 4.0, rtol=1e-12)


def test_sinusoid_at_cutoff_is_attenuated():
    Omega = 2.0
    spec = FilterSpec(Omega)
    step = 0.05
    t = step * np.arange(4000)
    out = filter_traces(np.sin(Omega * t)[None], spec, step)[0]
    mid = slice(1000, 3000)
    amp = np.max(np.abs(out[mid]))
    assert amp == pytest.approx(0.01, abs=1e-3)


def test_sinusoid_in_ideal_band_passes():
    step = 0.1
    n = 1000
    t = step * np.arange(n)
    # periodic with the padded length 3n so the ideal filter is exact
    w = 2 * np.pi * 7 / (3 * n * step)
    x = np.cos(w * t)
    out = filter_traces(x[None], FilterSpec(1.0, "ideal"), step)[0]
    assert np.max(np.abs(out[200:800] - x[200:800])) < 0.05


def test_adjoint_is_transpose():
    spec = FilterSpec(1.5)
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((2, 3, 150))
    lhs = np.sum(filter_traces(x, spec, 0.2) * y)
    rhs = np.sum(x * filter_traces_adjoint(y, spec, 0.2))
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert not filter_matrix(spec, 150, 0.2).flags.writeable


def test_time_step_check():
    with pytest.raises(ValueError, match="Nyquist"):
        check_time_step(FilterSpec(3.0), 1.0)
    check_time_step(FilterSpec(30.0, "ideal"), 1.0)


def test_lattice_check():
    with pytest.raises(ValueError):
        check_lattice(FilterSpec(math.pi), 1.0)
    check_lattice(FilterSpec(math.pi / 1.8), 1.0)
    check_lattice(FilterSpec(2 * math.pi, "ideal"), 1.0)


def test_psf_spectrum_equals_transfer():
    grid = ImageGrid(1.0, 32)
    spec = FilterSpec(1.2)
    delta = np.zeros(grid.shape)
    delta[0, 0] = 1.0
    psf = apply_psf(CoefficientImage(grid, delta), spec).coefficients
    np.testing.assert_allclose(np.fft.fft2(psf).real, spec.transfer(lattice_frequencies(32, 1.0)), atol=1e-13)


def test_psf_is_rotationally_symmetric():
    grid = ImageGrid(0.5, 33)
    delta = np.zeros(grid.shape)
    delta[16, 16] = 1.0
    psf = apply_psf(CoefficientImage(grid, delta), FilterSpec(2.0), pad=2).coefficients
    np.testing.assert_allclose(psf, np.rot90(psf), atol=1e-14)
    np.testing.assert_allclose(psf, psf.T, atol=1e-14)


def test_wide_ideal_filter_is_identity():
    grid = ImageGrid(1.0, 20)
    x = CoefficientImage(grid, np.random.default_rng(1).standard_normal(grid.shape))
    y = apply_psf(x, FilterSpec(math.sqrt(2) * math.pi * 1.01, "ideal"))
    np.testing.assert_allclose(y.coefficients, x.coefficients, atol=1e-12)


@given(seed=st.integers(0, 10_000), omega=st.floats(0.2, 1.7))
def test_psf_is_a_contraction(seed, omega):
    grid = ImageGrid(1.0, 16)
    x = CoefficientImage(grid, np.random.default_rng(seed).standard_normal(grid.shape))
    y = apply_psf(x, FilterSpec(omega))
    assert y.norm() <= x.norm() * (1 + 1e-12)


def _subspace(k=6):
    grid = ImageGrid(1.0, 32)
    return [random_bandlimited_phantom(grid, 1.0, s, support_radius=12.0) for s in range(k)]


def test_single_vector_constant_matches_direct_ratio():
    x = _subspace(1)
    spec = FilterSpec(1.3)
    a = estimate_resolution_constant(x, spec, norm="coefficient")
    y = apply_psf(x[0], spec)
    assert a == pytest.approx((y.norm() / x[0].norm()) ** 2, rel=1e-10)


@pytest.mark.parametrize("norm", ["coefficient", "function"])
def test_resolution_constant_grows_with_band(norm):
    vecs = _subspace()
    vals = [estimate_resolution_constant(vecs, FilterSpec(w), norm=norm) for w in (0.5, 1.0, 1.5)]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert vals[0] < vals[1] < vals[2]


def test_in_band_ideal_filter_keeps_everything():
    a = estimate_resolution_constant(_subspace(), FilterSpec(1.5, "ideal"), norm="function")
    assert a > 0.95


def test_rank_deficient_subspace_rejected():
    v = _subspace(1)[0]
    with pytest.raises(ValueError, match="rank"):
        estimate_resolution_constant([v, v], FilterSpec(1.0))


def test_filter_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec(0.0)
    with pytest.raises(ValueError):
        FilterSpec(1.0, "boxcar")
    with pytest.raises(ValueError):
        FilterSpec(1.0, attenuation_at_Omega=1.0)


@pytest.fixture(scope="module")
def identity_setup():
    from patsample.geometry import SensorGeometry, TimeGrid, signal_window
    from patsample.wave import build_forward

    grid = ImageGrid(1.0, 40, support_radius=18.0)
    geom = SensorGeometry(21.0, 16, start_angle=0.05)
    lo, hi = signal_window(geom, grid)
    fine = build_forward(geom, TimeGrid.spanning(0.25, 0.0, hi + 10.0), grid)
    coarse = build_forward(geom, TimeGrid.spanning(1.0, 0.0, hi + 10.0), grid)
    return grid, fine, coarse


def test_identity_exact_when_both_filters_are_identities(identity_setup):
    grid, _, coarse = identity_setup
    x = random_bandlimited_phantom(grid, 1.5, seed=0, support_radius=7.0)
    # step 1 has Nyquist pi; an ideal cut-off above sqrt(2) pi passes both the data and the lattice band
    assert verify_convolution_identity(coarse, FilterSpec(4.5, "ideal"), x) <= 1e-8


@pytest.mark.parametrize("omega", [1.0, 1.5])
def test_identity_misfit_matches_alias_prediction(identity_setup, omega):
    grid, fine, _ = identity_setup
    spec = FilterSpec(omega)
    x = random_bandlimited_phantom(grid, 1.0, seed=1, support_radius=6.0)
    measured = verify_convolution_identity(fine, spec, x)
    predicted = alias_mismatch_prediction(x.coefficients, 1.0, spec.transfer)
    assert measured == pytest.approx(predicted, rel=0.15)


def test_identity_rejects_zero_phantom(identity_setup):
    grid, fine, _ = identity_setup
    with pytest.raises(ValueError, match="zero"):
        verify_convolution_identity(fine, FilterSpec(1.0), CoefficientImage.zeros(grid))
