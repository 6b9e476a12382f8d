"""2D spectral machinery: FFT, center shift, truncation, learnable filtering.

Convention used throughout: unnormalized forward DFT, inverse scaled by
1/(HW), so ifft(fft(x)) == x. After the forward center shift the DC bin
sits at (H//2, W//2); a centered k x k crop keeps the window
[c - k//2, c - k//2 + k) on each axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError
from .tensor import Tensor, as_tensor


@dataclass
class ComplexTensor:
    """Complex values carried as two same-shape real tensors."""

    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError("ComplexTensor", self.re.shape, self.im.shape)

    @property
    def shape(self):
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    @classmethod
    def from_numpy(cls, z: np.ndarray, dtype=np.float64):
        return cls(Tensor(z.real.copy(), dtype=dtype), Tensor(z.imag.copy(), dtype=dtype))


@dataclass
class SpectrumStats:
    total_energy: float
    retained_energy: float
    retention_ratio: float
    k: int


class SpectralFilter:
    """Learnable complex filter bank applied to the truncated spectrum.

    Weights have shape (channels, k, k) per component and start as the
    identity filter (re=1, im=0), so an untrained spectral branch is an
    ideal low-pass.
    """

    def __init__(self, k: int, channels: int, dtype=np.float32):
        self.k = k
        self.channels = channels
        self.weights = ComplexTensor(
            Tensor(np.ones((channels, k, k)), requires_grad=True, dtype=dtype),
            Tensor(np.zeros((channels, k, k)), requires_grad=True, dtype=dtype),
        )


def fft2d(x: Tensor) -> ComplexTensor:
    """Per-channel unnormalized forward DFT of a real tensor."""
    x = as_tensor(x)
    zero = Tensor(np.zeros_like(x.data))
    re, im = ops.fft2(x, zero)
    return ComplexTensor(re, im)


def ifft2d(X: ComplexTensor) -> ComplexTensor:
    re, im = ops.ifft2(X.re, X.im)
    return ComplexTensor(re, im)


def center_shift(X: ComplexTensor, direction: str = "forward") -> ComplexTensor:
    """Move the DC bin to (H//2, W//2) (forward) or back (inverse)."""
    H, W = X.shape[-2], X.shape[-1]
    sh, sw = H // 2, W // 2
    if direction == "inverse":
        sh, sw = -sh, -sw
    elif direction != "forward":
        raise ValueError(f"direction must be forward|inverse, got {direction!r}")
    return ComplexTensor(ops.roll2(X.re, sh, sw), ops.roll2(X.im, sh, sw))


def _crop_window(size: int, k: int):
    c = size // 2
    lo = c - k // 2
    return lo, lo + k


def crop_center(X: ComplexTensor, k: int) -> ComplexTensor:
    """Extract the centered k x k window of a shifted spectrum."""
    H, W = X.shape[-2], X.shape[-1]
    if k > min(H, W):
        raise ShapeError(
            "crop_center",
            X.shape,
            (k, k),
            detail="truncation size exceeds spatial extent; clamp k per stage (stage-adaptive truncation)",
        )
    h0, h1 = _crop_window(H, k)
    w0, w1 = _crop_window(W, k)
    idx = (..., slice(h0, h1), slice(w0, w1))
    return ComplexTensor(ops.slice_(X.re, idx), ops.slice_(X.im, idx))


def pad_center(X: ComplexTensor, hw) -> ComplexTensor:
    """Place a k x k block back at the center of an H x W spectrum of zeros."""
    H, W = hw
    k = X.shape[-1]
    if X.shape[-2] != k:
        raise ShapeError("pad_center", X.shape, detail="expected square block")
    if H < k or W < k:
        raise ShapeError("pad_center", X.shape, (H, W), detail="target smaller than block")
    h0, _ = _crop_window(H, k)
    w0, _ = _crop_window(W, k)
    pads = (h0, H - k - h0, w0, W - k - w0)
    return ComplexTensor(ops.pad2d(X.re, pads, "zero"), ops.pad2d(X.im, pads, "zero"))


def crop_pad(X: ComplexTensor, k: int, mode: str = "crop", hw=None) -> ComplexTensor:
    """Spec-shaped wrapper over crop_center / pad_center."""
    if mode == "crop":
        return crop_center(X, k)
    if mode == "pad":
        return pad_center(X, hw)
    raise ValueError(f"mode must be crop|pad, got {mode!r}")


def complex_mul(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    re = ops.sub(ops.mul(a.re, b.re), ops.mul(a.im, b.im))
    im = ops.add(ops.mul(a.re, b.im), ops.mul(a.im, b.re))
    return ComplexTensor(re, im)


def spectral_branch(x: Tensor, filt: SpectralFilter, return_residue: bool = False):
    """Global mixing branch: FFT -> shift -> crop -> filter -> pad -> unshift -> iFFT -> real.

    x has shape (..., C, H, W) with C == filt.channels. The real/imaginary
    filter components are independent real parameters, so the whole chain is
    differentiable end to end. The imaginary output of the inverse transform
    is discarded by construction (returned only when return_residue is set).
    """
    x = as_tensor(x)
    C = x.shape[-3]
    if C != filt.channels:
        raise ShapeError("spectral_branch", x.shape, (filt.channels,), detail="channel mismatch")
    H, W = x.shape[-2], x.shape[-1]
    k = filt.k
    X = fft2d(x)
    Xs = center_shift(X, "forward")
    Xc = crop_center(Xs, k)
    Xf = complex_mul(Xc, filt.weights)
    Xp = pad_center(Xf, (H, W))
    Xu = center_shift(Xp, "inverse")
    y = ifft2d(Xu)
    if return_residue:
        return y.re, y.im
    return y.re


def energy_retention(x, k: int) -> SpectrumStats:
    """Fraction of squared spectral magnitude inside the centered k x k window.

    Diagnostic only (plain numpy, no gradients). Energy is summed over all
    leading axes (channels/batch).
    """
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    H, W = arr.shape[-2], arr.shape[-1]
    if k > min(H, W):
        raise ShapeError("energy_retention", arr.shape, (k, k), detail="k exceeds spatial extent")
    X = np.fft.fft2(arr)
    power = np.abs(X) ** 2
    total = float(power.sum())
    shifted = np.fft.fftshift(power, axes=(-2, -1))
    h0, h1 = _crop_window(H, k)
    w0, w1 = _crop_window(W, k)
    retained = float(shifted[..., h0:h1, w0:w1].sum())
    ratio = retained / total if total > 0.0 else 0.0
    return SpectrumStats(total_energy=total, retained_energy=retained, retention_ratio=ratio, k=k)


def parseval_gap(x) -> float:
    """Relative gap |spectral energy - HW * spatial energy| / spectral energy."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    H, W = arr.shape[-2], arr.shape[-1]
    spectral = float((np.abs(np.fft.fft2(arr)) ** 2).sum())
    spatial = float((arr ** 2).sum()) * H * W
    if spectral == 0.0:
        return 0.0
    return abs(spectral - spatial) / spectral
