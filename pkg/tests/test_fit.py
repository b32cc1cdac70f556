import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biphoton_epr.fit import (DIMS, FitError, FitResult, NoPeakError, crystal_scale,
                              fit_gaussian_peak, locate_peak, to_crystal_plane)
from biphoton_epr.jpd import Projection
from biphoton_epr.optics import OpticalConfig


def gaussian_projection(sigma=4.0, amp=1.0, offset=0.0, shift=(0.0, 0.0), half=30,
                        kind="sum_momentum", bin_size=1.0, noise=0.0, seed=0):
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(float)
    values = amp * np.exp(-((y - shift[0]) ** 2 + (x - shift[1]) ** 2) / (2 * sigma**2)) + offset
    if noise:
        values = values + np.random.default_rng(seed).normal(0, noise, values.shape)
    return Projection(values=values, axis_kind=kind, bin_size=bin_size,
                      center_index=(half, half), n_pairs=1)


@pytest.mark.parametrize("dims", DIMS)
def test_noiseless_recovery(dims):
    fit = fit_gaussian_peak(gaussian_projection(4.0, offset=0.01), dims)
    assert fit.width == pytest.approx(4.0, rel=1e-6)
    assert fit.dims == dims


@given(sigma=st.floats(1.5, 8.0), dy=st.floats(-5, 5), dx=st.floats(-5, 5),
       amp=st.floats(0.01, 100.0), offset=st.floats(-0.1, 0.1))
def test_translation_and_scale_equivariance(sigma, dy, dx, amp, offset):
    fit = fit_gaussian_peak(gaussian_projection(sigma, amp, offset * amp, (dy, dx)))
    assert fit.width == pytest.approx(sigma, rel=1e-5)
    assert fit.center[0] == pytest.approx(dy, abs=1e-4)
    assert fit.center[1] == pytest.approx(dx, abs=1e-4)
    assert fit.amplitude == pytest.approx(amp, rel=1e-5)


@given(k=st.floats(0.1, 50.0))
def test_bin_size_scales_width(k):
    base = fit_gaussian_peak(gaussian_projection(3.0))
    scaled = fit_gaussian_peak(gaussian_projection(3.0, bin_size=k))
    assert scaled.width == pytest.approx(k * base.width, rel=1e-9)


def test_noisy_fit_uncertainty_is_realistic():
    widths, errs = [], []
    for seed in range(12):
        fit = fit_gaussian_peak(gaussian_projection(4.0, noise=0.05, seed=seed))
        widths.append(fit.width)
        errs.append(fit.width_uncertainty)
    assert np.mean(widths) == pytest.approx(4.0, rel=0.03)
    # covariance-based errors agree with the actual scatter within a factor of 2
    ratio = np.std(widths, ddof=1) / np.mean(errs)
    assert 0.5 < ratio < 2.0


def test_bootstrap_from_blocks():
    rng = np.random.default_rng(3)
    base = gaussian_projection(4.0).values
    blocks = np.stack([base * 10 + rng.normal(0, 0.3, base.shape) for _ in range(10)])
    pairs = np.full(10, 10)
    proj = Projection(values=blocks.sum(0) / 100, axis_kind="sum_momentum", bin_size=1.0,
                      center_index=(30, 30), n_pairs=100, block_values=blocks, block_pairs=pairs)
    fit = fit_gaussian_peak(proj, bootstrap=30, seed=1)
    assert fit.width_uncertainty_bootstrap is not None
    assert fit.width_uncertainty == fit.width_uncertainty_bootstrap
    assert 0 < fit.width_uncertainty < 0.2
    again = fit_gaussian_peak(proj, bootstrap=30, seed=1)
    assert again.width_uncertainty == fit.width_uncertainty


def test_flat_projection_has_no_peak():
    flat = gaussian_projection(4.0, amp=0.0, offset=1.0, noise=0.01)
    with pytest.raises(NoPeakError) as err:
        fit_gaussian_peak(flat)
    assert "amplitude" in err.value.diagnostics


def test_locate_peak_initial_width():
    (iy, ix), sigma0, background = locate_peak(gaussian_projection(5.0, shift=(3, -2)).values)
    assert (iy, ix) == (33, 28)
    assert sigma0 == pytest.approx(5.0, rel=0.25)


def test_unknown_dims():
    with pytest.raises(FitError):
        fit_gaussian_peak(gaussian_projection(), dims="3d")


def test_fit_result_rejects_nonpositive_width():
    with pytest.raises(FitError):
        FitResult(width=0.0, amplitude=1.0, center=(0, 0), offset=0.0,
                  width_uncertainty=0.1, goodness=0.0)


def test_crystal_plane_conversion():
    optics = OpticalConfig(imaging_magnification=3.0, fourier_focal_effective=20.0)
    assert to_crystal_plane(22.5, "minus_position", optics) == pytest.approx(7.5)
    # camera sigma q -> dp = 2 pi q / (lambda_s f); 24.6 hbar/mm at 910 nm, f = 20 mm
    q = 20.0 * 910e-6 * 24.6 / (2 * math.pi) * 1e3
    assert to_crystal_plane(q, "corrected_sum_momentum", optics) == pytest.approx(24.6, rel=1e-12)
    assert crystal_scale("sum_momentum", optics) == crystal_scale("corrected_sum_momentum", optics)
    with pytest.raises(ValueError):
        crystal_scale("diagonal", optics)


def test_crystal_plane_conversion_of_fit_result():
    fit = fit_gaussian_peak(gaussian_projection(4.0, kind="minus_position", bin_size=8.0,
                                                noise=0.01))
    conv = to_crystal_plane(fit, "minus_position", OpticalConfig(imaging_magnification=4.0))
    assert conv.width == pytest.approx(fit.width / 4)
    assert conv.width_uncertainty == pytest.approx(fit.width_uncertainty / 4)
    assert conv.units == "um"
