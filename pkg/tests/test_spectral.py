"""Spectral machinery: transforms, shifts, truncation, filtering, energy."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specseg import Tensor, ops
from specseg.errors import ShapeError
from specseg.spectral import (
    ComplexTensor,
    SpectralFilter,
    center_shift,
    crop_center,
    crop_pad,
    energy_retention,
    fft2d,
    ifft2d,
    pad_center,
    parseval_gap,
    spectral_branch,
)

import oracles


def _rand_complex(rng, shape):
    return ComplexTensor(
        Tensor(rng.standard_normal(shape)), Tensor(rng.standard_normal(shape))
    )


# -- fft2d -------------------------------------------------------------------


def test_fft_constant_image_is_dc_only():
    H, W, c = 6, 4, 0.37
    X = fft2d(Tensor(np.full((H, W), c))).numpy()
    assert X[0, 0] == pytest.approx(c * H * W, rel=1e-12)
    rest = X.copy()
    rest[0, 0] = 0
    assert np.abs(rest).max() < 1e-10


def test_fft_impulse_has_flat_spectrum():
    img = np.zeros((5, 7))
    img[0, 0] = 1.0
    X = fft2d(Tensor(img)).numpy()
    np.testing.assert_allclose(np.abs(X), 1.0, atol=1e-12)


def test_fft_matches_naive_dft(rng):
    x = rng.standard_normal((8, 8))
    X = fft2d(Tensor(x)).numpy()
    ref = np.asarray(oracles.dft2_naive(x.tolist()))
    np.testing.assert_allclose(X, ref, atol=1e-10)


def test_fft_roundtrip_identity(rng):
    x = rng.standard_normal((2, 9, 12))
    back = ifft2d(fft2d(Tensor(x)))
    np.testing.assert_allclose(back.re.data, x, atol=1e-12)
    np.testing.assert_allclose(back.im.data, 0.0, atol=1e-12)


# -- center_shift ------------------------------------------------------------


def test_shift_moves_dc_to_center():
    X = fft2d(Tensor(np.full((4, 4), 1.0)))
    S = center_shift(X, "forward").numpy()
    assert S[2, 2] == pytest.approx(16.0)
    S[2, 2] = 0
    assert np.abs(S).max() < 1e-12


@given(st.integers(2, 9), st.integers(2, 9), st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_shift_roundtrip_any_parity(h, w, seed):
    rng = np.random.default_rng(seed)
    X = ComplexTensor(Tensor(rng.standard_normal((h, w))), Tensor(rng.standard_normal((h, w))))
    back = center_shift(center_shift(X, "forward"), "inverse")
    np.testing.assert_array_equal(back.re.data, X.re.data)
    np.testing.assert_array_equal(back.im.data, X.im.data)


def test_shift_rotates_rows_cols_by_half():
    grid = np.arange(9, dtype=np.float64).reshape(3, 3)
    X = ComplexTensor(Tensor(grid), Tensor(np.zeros((3, 3))))
    S = center_shift(X, "forward").re.data
    # forward shift rolls every index down/right by floor(n/2) = 1
    expected = np.array([[8, 6, 7], [2, 0, 1], [5, 3, 4]], dtype=np.float64)
    np.testing.assert_array_equal(S, expected)


# -- crop / pad --------------------------------------------------------------


def test_crop_full_size_is_identity(rng):
    X = _rand_complex(rng, (6, 6))
    C = crop_center(X, 6)
    np.testing.assert_array_equal(C.re.data, X.re.data)


def test_crop_k2_of_labeled_grid():
    grid = np.arange(36, dtype=np.float64).reshape(6, 6)
    X = ComplexTensor(Tensor(grid), Tensor(np.zeros((6, 6))))
    C = crop_center(X, 2).re.data
    # center index 3, window [2, 4): rows/cols {2, 3}
    np.testing.assert_array_equal(C, grid[2:4, 2:4])


def test_pad_crop_idempotent(rng):
    X = _rand_complex(rng, (8, 8))
    c1 = crop_center(X, 4)
    padded = pad_center(c1, (8, 8))
    c2 = crop_center(padded, 4)
    np.testing.assert_array_equal(c1.re.data, c2.re.data)
    np.testing.assert_array_equal(c1.im.data, c2.im.data)


@given(st.integers(1, 6), st.integers(6, 11), st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_pad_then_crop_recovers_block(k, n, seed):
    rng = np.random.default_rng(seed)
    block = ComplexTensor(Tensor(rng.standard_normal((k, k))), Tensor(rng.standard_normal((k, k))))
    again = crop_center(pad_center(block, (n, n)), k)
    np.testing.assert_array_equal(again.re.data, block.re.data)


def test_crop_too_large_errors(rng):
    X = _rand_complex(rng, (4, 4))
    with pytest.raises(ShapeError) as exc:
        crop_center(X, 5)
    assert "stage-adaptive" in str(exc.value)


def test_crop_pad_wrapper(rng):
    X = _rand_complex(rng, (6, 6))
    c = crop_pad(X, 2, mode="crop")
    p = crop_pad(c, 2, mode="pad", hw=(6, 6))
    assert p.shape == (6, 6)


# -- spectral branch ---------------------------------------------------------


def test_identity_filter_full_k_is_identity(rng):
    x = rng.standard_normal((1, 3, 8, 8))
    filt = SpectralFilter(8, 3, dtype=np.float64)
    y = spectral_branch(Tensor(x), filt)
    assert np.abs(y.data - x).max() < 1e-10


def test_identity_filter_truncated_matches_naive_lowpass(rng):
    x = rng.standard_normal((8, 8))
    k = 4
    filt = SpectralFilter(k, 1, dtype=np.float64)
    y = spectral_branch(Tensor(x[None, None]), filt).data[0, 0]
    # naive low-pass: full DFT, keep the centered k x k shifted window, invert
    X = np.asarray(oracles.dft2_naive(x.tolist()))
    S = np.fft.fftshift(X)
    keep = np.zeros_like(S)
    c = 8 // 2
    keep[c - k // 2 : c - k // 2 + k, c - k // 2 : c - k // 2 + k] = S[
        c - k // 2 : c - k // 2 + k, c - k // 2 : c - k // 2 + k
    ]
    ref = np.fft.ifft2(np.fft.ifftshift(keep)).real
    np.testing.assert_allclose(y, ref, atol=1e-10)


def test_spectral_branch_output_real_residue_small(rng):
    x = rng.standard_normal((1, 2, 8, 8))
    filt = SpectralFilter(8, 2, dtype=np.float64)
    re, im = spectral_branch(Tensor(x), filt, return_residue=True)
    assert np.abs(im.data).max() < 1e-9


def test_spectral_branch_grad_check(rng):
    filt = SpectralFilter(4, 2, dtype=np.float64)
    fw = filt.weights
    fw.re.data = fw.re.data + 0.2 * rng.standard_normal(fw.re.shape)
    fw.im.data = fw.im.data + 0.2 * rng.standard_normal(fw.im.shape)
    x = Tensor(rng.standard_normal((1, 2, 8, 8)), requires_grad=True)
    err = ops.grad_check(
        lambda t: ops.sum_(ops.mul(spectral_branch(t, filt), spectral_branch(t, filt))),
        x, eps=1e-6, n_samples=40,
    )
    assert err < 1e-4


def test_spectral_branch_filter_weight_gradients(rng):
    x = Tensor(rng.standard_normal((1, 2, 8, 8)))
    filt = SpectralFilter(4, 2, dtype=np.float64)
    # move off the identity point, where several im-derivatives vanish
    filt.weights.re.data += 0.3 * rng.standard_normal(filt.weights.re.shape)
    filt.weights.im.data += 0.3 * rng.standard_normal(filt.weights.im.shape)

    def f_im(t):
        filt.weights.im = t
        y = spectral_branch(x, filt)
        return ops.sum_(ops.mul(y, y))

    assert ops.grad_check(f_im, filt.weights.im, eps=1e-6, n_samples=20) < 1e-4


def test_single_pixel_perturbation_reaches_every_output(rng):
    """Truncated spectrum still mixes globally: one input pixel influences all outputs."""
    x0 = rng.standard_normal((1, 1, 8, 8))
    filt = SpectralFilter(4, 1, dtype=np.float64)
    filt.weights.re.data += 0.3 * rng.standard_normal(filt.weights.re.shape)
    filt.weights.im.data += 0.3 * rng.standard_normal(filt.weights.im.shape)
    x = Tensor(x0, requires_grad=True)
    from specseg import Tape

    with Tape() as t:
        y = spectral_branch(x, filt)
        t.backward(ops.sum_(ops.mul(y, Tensor(rng.standard_normal(y.shape)))))
    assert np.all(np.abs(x.grad) > 0)


# -- energy ------------------------------------------------------------------


def test_retention_constant_image_is_one():
    stats = energy_retention(np.full((16, 16), 0.5), 1)
    assert stats.retention_ratio == pytest.approx(1.0)


def test_retention_impulse_exact():
    img = np.zeros((32, 32))
    img[0, 0] = 1.0
    stats = energy_retention(img, 8)
    assert stats.retention_ratio == 64.0 / 1024.0


def test_retention_monotone_in_k(rng):
    x = rng.standard_normal((16, 16))
    ratios = [energy_retention(x, k).retention_ratio for k in range(1, 17)]
    assert all(b >= a - 1e-12 for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] == pytest.approx(1.0)


def test_parseval(rng):
    x = rng.standard_normal((3, 16, 16))
    assert parseval_gap(x) < 1e-9


def test_retention_smooth_blob_at_352():
    from specseg.data import ShapeSpec, gen_shape

    sample = gen_shape(ShapeSpec("blob", size_fraction=0.2, seed=7), (352, 352))
    stats = energy_retention(sample.image.astype(np.float64), 32)
    assert stats.retention_ratio >= 0.95
