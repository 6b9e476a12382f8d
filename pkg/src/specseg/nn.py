"""Layer classes: thin parameter holders over the primitive ops.

Layers expose named_params()/named_buffers() so the model can assemble a
stable name -> tensor map for optimizers and checkpoints. Train/eval mode
is passed explicitly through forward calls; nothing is global.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    limit = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, dtype=dtype)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def ones_param(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, dtype=dtype)


class Conv2d:
    def __init__(self, rng, in_ch, out_ch, kernel, stride=1, padding="same", dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.w = he_uniform(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel, dtype)
        self.b = zeros_param((out_ch,), dtype)

    def __call__(self, x):
        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def named_params(self, prefix):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b

    def named_buffers(self, prefix):
        return ()


class DepthwiseConv2d:
    def __init__(self, rng, channels, kernel, dtype=np.float32):
        self.w = he_uniform(rng, (channels, kernel, kernel), kernel * kernel, dtype)
        self.b = zeros_param((channels,), dtype)

    def __call__(self, x):
        return ops.depthwise_conv2d(x, self.w, self.b, padding="same")

    def named_params(self, prefix):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b

    def named_buffers(self, prefix):
        return ()


class BatchNorm2d:
    """Per-channel batch normalization over (B, H, W).

    Train mode uses batch statistics (with batch size 1 this degenerates to
    per-sample statistics); eval mode uses running averages with momentum 0.9.
    """

    eps = 1e-5
    momentum = 0.9

    def __init__(self, channels, dtype=np.float32):
        self.gamma = ones_param((channels,), dtype)
        self.beta = zeros_param((channels,), dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x, train=False):
        C = x.shape[1]
        if train:
            mu = ops.mean_(x, axes=(0, 2, 3), keepdims=True)
            xc = ops.sub(x, mu)
            var = ops.mean_(ops.mul(xc, xc), axes=(0, 2, 3), keepdims=True)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mu.data.reshape(C)
            self.running_var = m * self.running_var + (1 - m) * var.data.reshape(C)
            inv = ops.pow_const(ops.add(var, self.eps), -0.5)
            xn = ops.mul(xc, inv)
        else:
            mu = self.running_mean[None, :, None, None]
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xn = ops.mul(ops.sub(x, Tensor(mu, dtype=x.dtype)), Tensor(inv[None, :, None, None], dtype=x.dtype))
        g = ops.reshape(self.gamma, (1, C, 1, 1))
        b = ops.reshape(self.beta, (1, C, 1, 1))
        return ops.add(ops.mul(xn, g), b)

    def named_params(self, prefix):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_buffers(self, prefix):
        yield f"{prefix}.rmean", self, "running_mean"
        yield f"{prefix}.rvar", self, "running_var"


class LayerNormChannels:
    """Normalization across the channel axis at each spatial location."""

    eps = 1e-5

    def __init__(self, channels, dtype=np.float32):
        self.gamma = ones_param((channels,), dtype)
        self.beta = zeros_param((channels,), dtype)

    def __call__(self, x, train=False):
        C = x.shape[1]
        mu = ops.mean_(x, axes=(1,), keepdims=True)
        xc = ops.sub(x, mu)
        var = ops.mean_(ops.mul(xc, xc), axes=(1,), keepdims=True)
        inv = ops.pow_const(ops.add(var, self.eps), -0.5)
        g = ops.reshape(self.gamma, (1, C, 1, 1))
        b = ops.reshape(self.beta, (1, C, 1, 1))
        return ops.add(ops.mul(ops.mul(xc, inv), g), b)

    def named_params(self, prefix):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_buffers(self, prefix):
        return ()


class Dropout:
    """Inverted dropout; identity in eval mode."""

    def __init__(self, p):
        self.p = p

    def __call__(self, x, train=False, rng=None):
        if not train or self.p <= 0.0:
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        return ops.mul(x, Tensor(keep))

    def named_params(self, prefix):
        return ()

    def named_buffers(self, prefix):
        return ()


class SqueezeExcite:
    """Global-average squeeze, two 1x1 excite convs, sigmoid channel gate."""

    def __init__(self, rng, channels, reduction, dtype=np.float32):
        hidden = max(1, channels // reduction)
        self.fc1 = Conv2d(rng, channels, hidden, 1, dtype=dtype)
        self.fc2 = Conv2d(rng, hidden, channels, 1, dtype=dtype)

    def gate(self, x):
        s = ops.global_avg_pool(x)
        return ops.sigmoid(self.fc2(ops.elu(self.fc1(s))))

    def __call__(self, x):
        return ops.mul(x, self.gate(x))

    def named_params(self, prefix):
        yield from self.fc1.named_params(f"{prefix}.fc1")
        yield from self.fc2.named_params(f"{prefix}.fc2")

    def named_buffers(self, prefix):
        return ()
