import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biphoton_epr.fit import fit_gaussian_peak
from biphoton_epr.jpd import (ProjectionError, corrected_sum_projection, minus_projection,
                              project, resample_idler, stretch_matrix, stretch_table,
                              sum_projection)
from biphoton_epr.optics import GaussianPairState
from biphoton_epr.synth import synthesize_stack

from conftest import random_stack, small_sensor

KINDS = ["minus_position", "sum_momentum", "corrected_sum_momentum"]
LAMBDAS = dict(lambda_signal=910.0, lambda_idler=730.0)


def _basis(kind):
    return "position" if kind == "minus_position" else "momentum"


@given(n=st.integers(2, 40), r=st.floats(0.5, 2.0))
def test_stretch_conserves_counts_and_centroid(n, r):
    mat, j0 = stretch_matrix(n, r)
    np.testing.assert_allclose(mat.sum(axis=0), 1.0, atol=1e-12)
    c = (n - 1) / 2
    out_pos = np.arange(mat.shape[0]) + j0
    centroid = out_pos @ mat
    np.testing.assert_allclose(centroid, c + r * (np.arange(n) - c), atol=1e-9)


@given(n=st.integers(1, 40))
def test_stretch_identity_at_unit_factor(n):
    mat, j0 = stretch_matrix(n, 1.0)
    assert j0 == 0
    np.testing.assert_array_equal(mat, np.eye(n))


def test_resample_idler_guard():
    img = np.ones((1, 10, 10))
    out, (oy, ox) = resample_idler(img, 910 / 730)
    assert out.sum() == pytest.approx(100.0)
    with pytest.raises(ProjectionError, match="bound"):
        resample_idler(img, 3.0, max_size=20)
    j, w, j_min, n_out = stretch_table(10, 910 / 730)
    assert n_out == out.shape[-1] and j_min == ox


@pytest.mark.parametrize("kind", KINDS)
@given(seed=st.integers(0, 2**32 - 1), n_frames=st.integers(2, 9), h=st.integers(1, 7),
       w=st.integers(1, 7), chunk=st.integers(1, 5))
def test_fft_equals_sparse(kind, seed, n_frames, h, w, chunk):
    stack = random_stack(np.random.default_rng(seed), n_frames, basis=_basis(kind), rect=(h, w),
                         density=0.3)
    kw = dict(LAMBDAS, chunk_frames=chunk, n_blocks=3)
    fft = project(stack, kind, method="fft", **kw)
    sparse = project(stack, kind, method="sparse", **kw)
    tol = 0 if kind != "corrected_sum_momentum" else 1e-12
    np.testing.assert_allclose(fft.values, sparse.values, rtol=0, atol=tol)
    np.testing.assert_allclose(fft.block_values, sparse.block_values, rtol=0, atol=tol * n_frames)


@pytest.mark.parametrize("accidentals", ["consecutive", "product_of_means"])
def test_fft_equals_sparse_product_of_means(rng, accidentals):
    stack = random_stack(rng, 20, n=9)
    a = sum_projection(stack, method="fft", accidentals=accidentals)
    b = sum_projection(stack, method="sparse", accidentals=accidentals)
    np.testing.assert_allclose(a.values, b.values, atol=1e-12)


@pytest.mark.parametrize("kind", ["minus_position", "sum_momentum"])
@given(seed=st.integers(0, 2**32 - 1), chunk=st.integers(1, 12), blocks=st.integers(1, 6))
def test_chunking_does_not_change_integer_projections(kind, seed, chunk, blocks):
    stack = random_stack(np.random.default_rng(seed), 13, n=6, basis=_basis(kind))
    ref = project(stack, kind, chunk_frames=4096, n_blocks=1)
    alt = project(stack, kind, chunk_frames=chunk, n_blocks=blocks)
    np.testing.assert_array_equal(ref.values, alt.values)
    np.testing.assert_allclose(alt.block_values.sum(axis=0) / alt.n_pairs, alt.values, atol=1e-15)


@given(seed=st.integers(0, 2**32 - 1), split=st.integers(2, 18))
def test_projection_is_linear_in_frame_pairs(seed, split):
    # consecutive pairs of the full stack = pairs of [0, split) plus pairs of [split-1, n)
    stack = random_stack(np.random.default_rng(seed), 20, n=6)
    full = corrected_sum_projection(stack, **LAMBDAS)
    a = corrected_sum_projection(stack.slice(0, split), **LAMBDAS)
    b = corrected_sum_projection(stack.slice(split - 1, 20), **LAMBDAS)
    combined = (a.values * a.n_pairs + b.values * b.n_pairs) / full.n_pairs
    np.testing.assert_allclose(combined, full.values, atol=1e-12)


def test_degenerate_corrected_equals_sum(pair_stack):
    plain = sum_projection(pair_stack)
    corrected = corrected_sum_projection(pair_stack, 810.0, 810.0)
    np.testing.assert_allclose(corrected.values, plain.values, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_threads_are_bit_identical(kind, optics):
    state = GaussianPairState(7.5, 24.6, 40.0, 90.0)
    sensor = small_sensor(24, mean_pairs_per_frame=3.0, dark_count_prob=1e-3)
    stack = synthesize_stack(optics, state, sensor, 900, master_seed=2, basis=_basis(kind))
    runs = [project(stack, kind, threads=t, chunk_frames=64, **LAMBDAS) for t in (1, 2, 8)]
    for r in runs[1:]:
        assert r.values.tobytes() == runs[0].values.tobytes()
        assert r.block_values.tobytes() == runs[0].block_values.tobytes()


@pytest.mark.parametrize("accidentals", ["consecutive", "product_of_means"])
def test_accidentals_have_zero_mean_without_pairs(optics, accidentals):
    # dark counts only: every coincidence is accidental
    state = GaussianPairState(7.5, 24.6, 40.0, 90.0)
    sensor = small_sensor(16, mean_pairs_per_frame=0.0, dark_count_prob=0.05)
    stack = synthesize_stack(optics, state, sensor, 3000, master_seed=4, basis="momentum")
    proj = sum_projection(stack, accidentals=accidentals)
    raw = sum_projection(stack, accidentals=accidentals)
    assert raw.values.size == 31 * 31
    rate = 0.05 ** 2
    # mean over bins is consistent with zero at the level of its standard error
    bins_mean = proj.values.mean()
    assert abs(bins_mean) < 5 * np.sqrt(2 * rate / stack.n_frames / proj.values.size) * 16
    assert abs(proj.values).max() < 0.05 * rate * 16 * 16 * 10


def test_correlation_peak_at_center(optics):
    state = GaussianPairState(7.5, 24.6, 40.0, 90.0)
    sensor = small_sensor(32, mean_pairs_per_frame=2.0)
    pos = synthesize_stack(optics, state, sensor, 2000, master_seed=8, basis="position")
    mom = synthesize_stack(optics, state, sensor, 2000, master_seed=8, basis="momentum")
    for proj in (minus_projection(pos), corrected_sum_projection(mom, **LAMBDAS)):
        fit = fit_gaussian_peak(proj, bootstrap=0)
        assert np.all(np.abs(np.array(fit.center) / proj.bin_size) < 1.0)


def test_uncorrected_is_broader_than_corrected(optics):
    # marginal per photon ~27 px at the signal camera, well inside the 96 px ROI
    state = GaussianPairState(7.5, 10.0, 40.0, 150.0)
    sensor = small_sensor(96, mean_pairs_per_frame=3.0)
    mom = synthesize_stack(optics, state, sensor, 3000, master_seed=8, basis="momentum")
    plain = fit_gaussian_peak(sum_projection(mom), bootstrap=0)
    corr = fit_gaussian_peak(corrected_sum_projection(mom, **LAMBDAS), bootstrap=0)
    assert plain.width > 1.4 * corr.width


def test_block_bookkeeping(pair_stack):
    proj = sum_projection(pair_stack, n_blocks=7)
    assert proj.block_values.shape[0] == 7
    assert proj.block_pairs.sum() == proj.n_pairs == pair_stack.n_frames - 1
    np.testing.assert_allclose(proj.resample_blocks(np.ones(7)), proj.values, atol=1e-15)


def test_projection_errors(pair_stack):
    with pytest.raises(ProjectionError, match="basis"):
        minus_projection(pair_stack)
    with pytest.raises(ProjectionError):
        project(pair_stack, "diagonal")
    with pytest.raises(ProjectionError):
        project(pair_stack, "corrected_sum_momentum")
    with pytest.raises(ProjectionError):
        sum_projection(pair_stack.slice(0, 1))
    with pytest.raises(ProjectionError):
        sum_projection(pair_stack, method="magic")
    with pytest.raises(ProjectionError, match="bound"):
        corrected_sum_projection(pair_stack, 910.0, 730.0, max_stretch_size=20)


def test_projection_axis_metadata(pair_stack):
    proj = corrected_sum_projection(pair_stack, **LAMBDAS)
    assert proj.shape == (63, 63)
    assert proj.center_index == (31, 31)
    assert proj.axis(0)[31] == 0
    assert proj.stretch == pytest.approx(910 / 730)
    assert proj.bin_size == 8.0
    assert proj.config_hash == pair_stack.config_hash
