"""Differentiable primitive operations.

Every op validates shapes, checks outputs for NaN/Inf, and registers a
backward rule on the active tape when any input requires grad. Gradients
accumulate additively, so reusing a tensor is safe.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, ShapeError
from .tensor import Node, Tensor, accumulate, active_tape, as_tensor, check_finite


def _make(op, data, dtype):
    out = Tensor(np.asarray(data, dtype=dtype))
    check_finite(op, out.data)
    return out


def _record(op, inputs, outputs, backward):
    tape = active_tape()
    if tape is None:
        return
    if not any(i.requires_grad for i in inputs):
        return
    for o in outputs:
        o.requires_grad = True
    tape.nodes.append(Node(op, inputs, outputs, backward))


def _grad_of(t: Tensor) -> np.ndarray:
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to the given shape (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_shapes(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    _binary_shapes("add", a, b)
    out = _make("add", a.data + b.data, a.dtype)

    def bw():
        g = out.grad
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    _record("add", (a, b), (out,), bw)
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    _binary_shapes("sub", a, b)
    out = _make("sub", a.data - b.data, a.dtype)

    def bw():
        g = out.grad
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(-g, b.shape))

    _record("sub", (a, b), (out,), bw)
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    _binary_shapes("mul", a, b)
    out = _make("mul", a.data * b.data, a.dtype)

    def bw():
        g = out.grad
        accumulate(a, _unbroadcast(g * b.data, a.shape))
        accumulate(b, _unbroadcast(g * a.data, b.shape))

    _record("mul", (a, b), (out,), bw)
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)
    _binary_shapes("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _make("div", a.data / b.data, a.dtype)

    def bw():
        g = out.grad
        accumulate(a, _unbroadcast(g / b.data, a.shape))
        accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    _record("div", (a, b), (out,), bw)
    return out


def neg(a):
    a = as_tensor(a)
    out = _make("neg", -a.data, a.dtype)

    def bw():
        accumulate(a, -out.grad)

    _record("neg", (a,), (out,), bw)
    return out


def pow_const(a, exponent: float):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _make("pow", a.data ** exponent, a.dtype)

    def bw():
        accumulate(a, out.grad * exponent * a.data ** (exponent - 1.0))

    _record("pow", (a,), (out,), bw)
    return out


def sqrt(a):
    return pow_const(a, 0.5)


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = _make("exp", np.exp(a.data), a.dtype)

    def bw():
        accumulate(a, out.grad * out.data)

    _record("exp", (a,), (out,), bw)
    return out


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _make("log", np.log(a.data), a.dtype)

    def bw():
        accumulate(a, out.grad / a.data)

    _record("log", (a,), (out,), bw)
    return out


def abs_(a):
    a = as_tensor(a)
    out = _make("abs", np.abs(a.data), a.dtype)

    def bw():
        accumulate(a, out.grad * np.sign(a.data))

    _record("abs", (a,), (out,), bw)
    return out


def clamp(a, lo: float, hi: float):
    a = as_tensor(a)
    out = _make("clamp", np.clip(a.data, lo, hi), a.dtype)
    inside = ((a.data >= lo) & (a.data <= hi)).astype(a.dtype)

    def bw():
        accumulate(a, out.grad * inside)

    _record("clamp", (a,), (out,), bw)
    return out


def select(cond: np.ndarray, a, b):
    """Elementwise a-where-cond-else-b; cond is a constant boolean mask."""
    a, b = as_tensor(a), as_tensor(b, like=a)
    _binary_shapes("select", a, b)
    mask = np.asarray(cond, dtype=bool)
    out = _make("select", np.where(mask, a.data, b.data), a.dtype)

    def bw():
        g = out.grad
        accumulate(a, _unbroadcast(np.where(mask, g, 0.0), a.shape))
        accumulate(b, _unbroadcast(np.where(mask, 0.0, g), b.shape))

    _record("select", (a, b), (out,), bw)
    return out


# ---------------------------------------------------------------------------
# activations


def relu(a):
    a = as_tensor(a)
    out = _make("relu", np.maximum(a.data, 0.0), a.dtype)

    def bw():
        accumulate(a, out.grad * (a.data > 0))

    _record("relu", (a,), (out,), bw)
    return out


def elu(a):
    a = as_tensor(a)
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    out = _make("elu", np.where(a.data > 0, a.data, neg_part), a.dtype)

    def bw():
        local = np.where(a.data > 0, 1.0, neg_part + 1.0)
        accumulate(a, out.grad * local.astype(a.dtype))

    _record("elu", (a,), (out,), bw)
    return out


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = _make("sigmoid", s, a.dtype)

    def bw():
        accumulate(a, out.grad * out.data * (1.0 - out.data))

    _record("sigmoid", (a,), (out,), bw)
    return out


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a, axes=None, keepdims=False):
    a = as_tensor(a)
    out = _make("sum", a.data.sum(axis=axes, keepdims=keepdims), a.dtype)

    def bw():
        g = out.grad
        if axes is None:
            accumulate(a, np.broadcast_to(g, a.shape).astype(a.dtype))
            return
        if not keepdims:
            ax = axes if isinstance(axes, tuple) else (axes,)
            shp = list(a.shape)
            for i in sorted(d % a.data.ndim for d in ax):
                shp[i] = 1
            g = g.reshape(shp)
        accumulate(a, np.broadcast_to(g, a.shape).astype(a.dtype))

    _record("sum", (a,), (out,), bw)
    return out


def mean_(a, axes=None, keepdims=False):
    a = as_tensor(a)
    if axes is None:
        n = a.size
    else:
        ax = axes if isinstance(axes, tuple) else (axes,)
        n = 1
        for d in ax:
            n *= a.shape[d]
    return mul(sum_(a, axes=axes, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out = _make("reshape", a.data.reshape(shape), a.dtype)

    def bw():
        accumulate(a, out.grad.reshape(a.shape))

    _record("reshape", (a,), (out,), bw)
    return out


def slice_(a, index):
    """Basic (non-fancy) slicing; gradient scatters back into place."""
    a = as_tensor(a)
    out = _make("slice", a.data[index], a.dtype)

    def bw():
        g = np.zeros_like(a.data)
        g[index] += out.grad
        accumulate(a, g)

    _record("slice", (a,), (out,), bw)
    return out


def concat(tensors, axis: int):
    tensors = [as_tensor(t) for t in tensors]
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError("concat", tensors[0].shape, t.shape)
    out = _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors[0].dtype)
    sizes = [t.shape[axis] for t in tensors]

    def bw():
        g = out.grad
        start = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + n)
            accumulate(t, g[tuple(idx)])
            start += n

    _record("concat", tuple(tensors), (out,), bw)
    return out


def roll2(a, shift_h: int, shift_w: int):
    """Circular shift over the last two axes."""
    a = as_tensor(a)
    out = _make("roll2", np.roll(a.data, (shift_h, shift_w), axis=(-2, -1)), a.dtype)

    def bw():
        accumulate(a, np.roll(out.grad, (-shift_h, -shift_w), axis=(-2, -1)))

    _record("roll2", (a,), (out,), bw)
    return out


# ---------------------------------------------------------------------------
# padding


def pad2d(a, pads, mode="zero"):
    """Pad the last two axes. pads = (top, bottom, left, right)."""
    a = as_tensor(a)
    pt, pb, pl, pr = pads
    width = [(0, 0)] * (a.data.ndim - 2) + [(pt, pb), (pl, pr)]
    if mode == "zero":
        padded = np.pad(a.data, width, mode="constant")
    elif mode == "replicate":
        padded = np.pad(a.data, width, mode="edge")
    else:
        raise ValueError(f"unknown pad mode {mode!r}")
    out = _make("pad2d", padded, a.dtype)
    H, W = a.shape[-2], a.shape[-1]

    def bw():
        g = out.grad
        core = g[..., pt : pt + H, pl : pl + W].copy()
        if mode == "replicate":
            if pt:
                core[..., 0, :] += g[..., :pt, pl : pl + W].sum(axis=-2)
            if pb:
                core[..., -1, :] += g[..., pt + H :, pl : pl + W].sum(axis=-2)
            if pl:
                core[..., :, 0] += g[..., pt : pt + H, :pl].sum(axis=-1)
            if pr:
                core[..., :, -1] += g[..., pt : pt + H, pl + W :].sum(axis=-1)
            if pt and pl:
                core[..., 0, 0] += g[..., :pt, :pl].sum(axis=(-2, -1))
            if pt and pr:
                core[..., 0, -1] += g[..., :pt, pl + W :].sum(axis=(-2, -1))
            if pb and pl:
                core[..., -1, 0] += g[..., pt + H :, :pl].sum(axis=(-2, -1))
            if pb and pr:
                core[..., -1, -1] += g[..., pt + H :, pl + W :].sum(axis=(-2, -1))
        accumulate(a, core)

    _record("pad2d", (a,), (out,), bw)
    return out


def same_pads(size: int, kernel: int, stride: int = 1):
    """TF-style 'same' padding split for one axis."""
    out_size = -(-size // stride)
    total = max((out_size - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


# ---------------------------------------------------------------------------
# convolutions


def _conv_windows(x: np.ndarray, kh: int, kw: int, stride: int):
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    if stride != 1:
        win = win[:, :, ::stride, ::stride]
    return win


def conv2d(x, w, b=None, stride: int = 1, padding: str = "same", pad_mode: str = "zero"):
    """2D convolution (cross-correlation). x: (B,C,H,W), w: (O,C,kh,kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d", x.shape, w.shape, detail="expect 4-D input and kernel")
    if x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape, detail="channel mismatch")
    O, C, kh, kw = w.shape
    if padding == "same":
        pt, pb = same_pads(x.shape[2], kh, stride)
        pl, pr = same_pads(x.shape[3], kw, stride)
        if pt or pb or pl or pr:
            x = pad2d(x, (pt, pb, pl, pr), mode=pad_mode)
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")

    if kh == 1 and kw == 1 and stride == 1:
        out_data = np.einsum("bchw,oc->bohw", x.data, w.data[:, :, 0, 0], optimize=True)
    else:
        win = _conv_windows(x.data, kh, kw, stride)
        out_data = np.einsum("bchwkl,ockl->bohw", win, w.data, optimize=True)
    if b is not None:
        b = as_tensor(b, like=x)
        if b.shape != (O,):
            raise ShapeError("conv2d.bias", b.shape, (O,))
        out_data = out_data + b.data[None, :, None, None]
    out = _make("conv2d", out_data, x.dtype)
    Ho, Wo = out.shape[2], out.shape[3]
    Hp, Wp = x.shape[2], x.shape[3]

    def bw():
        g = out.grad
        if kh == 1 and kw == 1 and stride == 1:
            if w.requires_grad:
                gw = np.einsum("bohw,bchw->oc", g, x.data, optimize=True)
                accumulate(w, gw[:, :, None, None])
            if x.requires_grad:
                accumulate(x, np.einsum("bohw,oc->bchw", g, w.data[:, :, 0, 0], optimize=True))
        else:
            win = _conv_windows(x.data, kh, kw, stride)
            if w.requires_grad:
                accumulate(w, np.einsum("bchwkl,bohw->ockl", win, g, optimize=True))
            if x.requires_grad:
                gx = np.zeros((x.shape[0], C, Hp, Wp), dtype=x.dtype)
                gp = np.einsum("bohw,ockl->bchwkl", g, w.data, optimize=True)
                for i in range(kh):
                    for j in range(kw):
                        gx[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gp[:, :, :, :, i, j]
                accumulate(x, gx)
        if b is not None and b.requires_grad:
            accumulate(b, g.sum(axis=(0, 2, 3)))

    inputs = (x, w) if b is None else (x, w, b)
    _record("conv2d", inputs, (out,), bw)
    return out


def depthwise_conv2d(x, w, b=None, padding: str = "same", pad_mode: str = "zero"):
    """Per-channel convolution. x: (B,C,H,W), w: (C,kh,kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[1] != w.shape[0]:
        raise ShapeError("depthwise_conv2d", x.shape, w.shape, detail="channel mismatch")
    C, kh, kw = w.shape
    if padding == "same":
        pt, pb = same_pads(x.shape[2], kh, 1)
        pl, pr = same_pads(x.shape[3], kw, 1)
        if pt or pb or pl or pr:
            x = pad2d(x, (pt, pb, pl, pr), mode=pad_mode)
    win = _conv_windows(x.data, kh, kw, 1)
    out_data = np.einsum("bchwkl,ckl->bchw", win, w.data, optimize=True)
    if b is not None:
        b = as_tensor(b, like=x)
        out_data = out_data + b.data[None, :, None, None]
    out = _make("depthwise_conv2d", out_data, x.dtype)
    Ho, Wo = out.shape[2], out.shape[3]

    def bw():
        g = out.grad
        win_ = _conv_windows(x.data, kh, kw, 1)
        if w.requires_grad:
            accumulate(w, np.einsum("bchwkl,bchw->ckl", win_, g, optimize=True))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gp = np.einsum("bchw,ckl->bchwkl", g, w.data, optimize=True)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + Ho, j : j + Wo] += gp[:, :, :, :, i, j]
            accumulate(x, gx)
        if b is not None and b.requires_grad:
            accumulate(b, g.sum(axis=(0, 2, 3)))

    inputs = (x, w) if b is None else (x, w, b)
    _record("depthwise_conv2d", inputs, (out,), bw)
    return out


# ---------------------------------------------------------------------------
# pooling and resampling


def _extremum_pool3(a, mode: str):
    a = as_tensor(a)
    B, C, H, W = a.shape
    xp = np.pad(a.data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    win = sliding_window_view(xp, (3, 3), axis=(2, 3)).reshape(B, C, H, W, 9)
    if mode == "max":
        idx = win.argmax(axis=-1)
    else:
        idx = win.argmin(axis=-1)
    out_data = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    out = _make(f"{mode}pool3", out_data, a.dtype)

    def bw():
        g = out.grad
        gp = np.zeros((B, C, H + 2, W + 2), dtype=a.dtype)
        bi, ci, hi, wi = np.indices((B, C, H, W), sparse=True)
        rows = hi + idx // 3
        cols = wi + idx % 3
        np.add.at(gp, (bi, ci, rows, cols), g)
        core = gp[:, :, 1:-1, 1:-1].copy()
        core[:, :, 0, :] += gp[:, :, 0, 1:-1]
        core[:, :, -1, :] += gp[:, :, -1, 1:-1]
        core[:, :, :, 0] += gp[:, :, 1:-1, 0]
        core[:, :, :, -1] += gp[:, :, 1:-1, -1]
        core[:, :, 0, 0] += gp[:, :, 0, 0]
        core[:, :, 0, -1] += gp[:, :, 0, -1]
        core[:, :, -1, 0] += gp[:, :, -1, 0]
        core[:, :, -1, -1] += gp[:, :, -1, -1]
        accumulate(a, core)

    _record(f"{mode}pool3", (a,), (out,), bw)
    return out


def maxpool3(a):
    """3x3 stride-1 max pool with replicate padding (morphological dilation)."""
    return _extremum_pool3(a, "max")


def minpool3(a):
    """3x3 stride-1 min pool with replicate padding (morphological erosion)."""
    return _extremum_pool3(a, "min")


def avg_pool(a, factor: int):
    """Non-overlapping factor x factor mean pooling (trailing remainder cropped)."""
    a = as_tensor(a)
    if factor == 1:
        return a
    H, W = a.shape[-2], a.shape[-1]
    Hc, Wc = (H // factor) * factor, (W // factor) * factor
    if Hc == 0 or Wc == 0:
        raise ShapeError("avg_pool", a.shape, detail=f"smaller than factor {factor}")
    if (Hc, Wc) != (H, W):
        a = slice_(a, (..., slice(0, Hc), slice(0, Wc)))
    lead = a.shape[:-2]
    r = reshape(a, lead + (Hc // factor, factor, Wc // factor, factor))
    nd = len(lead)
    return mean_(r, axes=(nd + 1, nd + 3))


def upsample_nearest2x(a):
    a = as_tensor(a)
    out = _make("upsample2x", a.data.repeat(2, axis=-2).repeat(2, axis=-1), a.dtype)
    H, W = a.shape[-2], a.shape[-1]

    def bw():
        g = out.grad
        g = g.reshape(g.shape[:-2] + (H, 2, W, 2)).sum(axis=(-3, -1))
        accumulate(a, g)

    _record("upsample2x", (a,), (out,), bw)
    return out


def global_avg_pool(a):
    """(B,C,H,W) -> (B,C,1,1) spatial mean."""
    return mean_(a, axes=(2, 3), keepdims=True)


# ---------------------------------------------------------------------------
# FFT pair ops (complex values carried as separate real/imag tensors)


def fft2(re, im):
    """Unnormalized forward 2D DFT over the last two axes."""
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape:
        raise ShapeError("fft2", re.shape, im.shape)
    z = re.data + 1j * im.data
    Z = np.fft.fft2(z)
    out_re = _make("fft2", Z.real, re.dtype)
    out_im = _make("fft2", Z.imag, re.dtype)
    n = re.shape[-2] * re.shape[-1]

    def bw():
        G = _grad_of(out_re) + 1j * _grad_of(out_im)
        gin = np.fft.ifft2(G) * n
        accumulate(re, gin.real.astype(re.dtype))
        accumulate(im, gin.imag.astype(re.dtype))

    _record("fft2", (re, im), (out_re, out_im), bw)
    return out_re, out_im


def ifft2(re, im):
    """Inverse 2D DFT with 1/(HW) normalization (round-trip identity with fft2)."""
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape:
        raise ShapeError("ifft2", re.shape, im.shape)
    z = re.data + 1j * im.data
    Z = np.fft.ifft2(z)
    out_re = _make("ifft2", Z.real, re.dtype)
    out_im = _make("ifft2", Z.imag, re.dtype)
    n = re.shape[-2] * re.shape[-1]

    def bw():
        G = _grad_of(out_re) + 1j * _grad_of(out_im)
        gin = np.fft.fft2(G) / n
        accumulate(re, gin.real.astype(re.dtype))
        accumulate(im, gin.imag.astype(re.dtype))

    _record("ifft2", (re, im), (out_re, out_im), bw)
    return out_re, out_im


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, x: Tensor, eps: float = 1e-5, n_samples: int | None = None, rng=None):
    """Compare analytic gradients of scalar f(x) against central differences.

    Returns the max over checked elements of |analytic - numeric| / (|numeric| + 1e-8).
    With n_samples set, a random subset of coordinates is checked.
    """
    from .tensor import Tape

    y1 = f(x)
    y2 = f(x)
    if not np.array_equal(y1.data, y2.data):
        raise GraphError("grad_check requires a deterministic function (two passes differ)")

    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        y = f(x)
        tape.backward(y)
    analytic = x.grad.copy()
    x.grad = None

    flat = x.data.reshape(-1)
    aflat = analytic.reshape(-1)
    if n_samples is None or n_samples >= flat.size:
        coords = np.arange(flat.size)
    else:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(flat.size, size=n_samples, replace=False)

    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x).data)
        flat[i] = orig - eps
        fm = float(f(x).data)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * eps)
        rel = abs(aflat[i] - numeric) / (abs(numeric) + 1e-8)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# operator sugar on Tensor

Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(as_tensor(other, like=self), self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(self, other)
Tensor.__truediv__ = div
Tensor.__rtruediv__ = lambda self, other: div(as_tensor(other, like=self), self)
Tensor.__neg__ = neg
Tensor.__pow__ = pow_const
