"""Encoder building blocks.

MultiScaleLocalBlock: 1x1 channel expansion, parallel depthwise convolutions
at kernel sizes {3,5,7}, squeeze-and-excitation recalibration, 1x1 projection
and a residual connection. Purely local receptive field when the SE gate is
disabled.

SpectralMixerBlock: dual-branch global mixer. A spectral branch filters the
centered k x k low-frequency window of the per-channel 2D spectrum with a
learnable complex filter; a content gate modulates channels per location
through a bottleneck; the branches are concatenated, fused by a 1x1 conv,
layer-normalized over channels, dropped out and added back to the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .nn import BatchNorm2d, Conv2d, DepthwiseConv2d, Dropout, LayerNormChannels, SqueezeExcite
from .spectral import SpectralFilter, spectral_branch


@dataclass
class LocalBlockConfig:
    in_channels: int
    expansion: int = 6
    kernels: tuple = (3, 5, 7)
    se_reduction: int = 16
    use_se: bool = True

    def __post_init__(self):
        if self.expansion < 1:
            raise ValueError("expansion must be >= 1")
        if any(k % 2 == 0 for k in self.kernels):
            raise ValueError("kernels must be odd")


@dataclass
class MixerConfig:
    channels: int
    k: int = 32
    gate_bottleneck: int = 16
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.gate_bottleneck < 1:
            raise ValueError("gate_bottleneck must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")


class MultiScaleLocalBlock:
    def __init__(self, rng, cfg: LocalBlockConfig, dtype=np.float32):
        self.cfg = cfg
        c = cfg.in_channels
        e = cfg.expansion * c
        self.expand = Conv2d(rng, c, e, 1, dtype=dtype)
        self.bn0 = BatchNorm2d(e, dtype=dtype)
        self.dw = [DepthwiseConv2d(rng, e, k, dtype=dtype) for k in cfg.kernels]
        self.bns = [BatchNorm2d(e, dtype=dtype) for _ in cfg.kernels]
        wide = e * len(cfg.kernels)
        self.se = SqueezeExcite(rng, wide, cfg.se_reduction, dtype=dtype) if cfg.use_se else None
        self.proj = Conv2d(rng, wide, c, 1, dtype=dtype)

    def __call__(self, x, train=False):
        z = ops.elu(self.bn0(self.expand(x), train))
        branches = [ops.elu(bn(dw(z), train)) for dw, bn in zip(self.dw, self.bns)]
        h = ops.concat(branches, axis=1)
        if self.se is not None:
            h = self.se(h)
        return ops.add(x, self.proj(h))

    def named_params(self, prefix):
        yield from self.expand.named_params(f"{prefix}.expand")
        yield from self.bn0.named_params(f"{prefix}.bn0")
        for k, dw, bn in zip(self.cfg.kernels, self.dw, self.bns):
            yield from dw.named_params(f"{prefix}.dw{k}")
            yield from bn.named_params(f"{prefix}.bn{k}")
        if self.se is not None:
            yield from self.se.named_params(f"{prefix}.se")
        yield from self.proj.named_params(f"{prefix}.proj")

    def named_buffers(self, prefix):
        yield from self.bn0.named_buffers(f"{prefix}.bn0")
        for k, bn in zip(self.cfg.kernels, self.bns):
            yield from bn.named_buffers(f"{prefix}.bn{k}")


class ContentGate:
    """Per-location channel mixing gated through a bottleneck.

    gate = sigmoid(fc2(elu(fc1(x)))); output = mix(x * gate), all 1x1 convs.
    """

    def __init__(self, rng, channels, bottleneck, dtype=np.float32):
        self.fc1 = Conv2d(rng, channels, bottleneck, 1, dtype=dtype)
        self.fc2 = Conv2d(rng, bottleneck, channels, 1, dtype=dtype)
        self.mix = Conv2d(rng, channels, channels, 1, dtype=dtype)

    def __call__(self, x):
        g = ops.sigmoid(self.fc2(ops.elu(self.fc1(x))))
        return self.mix(ops.mul(x, g))

    def named_params(self, prefix):
        yield from self.fc1.named_params(f"{prefix}.fc1")
        yield from self.fc2.named_params(f"{prefix}.fc2")
        yield from self.mix.named_params(f"{prefix}.mix")

    def named_buffers(self, prefix):
        return ()


class SpectralMixerBlock:
    """Residual fusion of the spectral branch and the content gate.

    cfg.k must already be clamped to the stage resolution (k <= min(H, W));
    the filter bank is allocated at that size.
    """

    def __init__(self, rng, cfg: MixerConfig, dtype=np.float32):
        self.cfg = cfg
        c = cfg.channels
        self.wspec = SpectralFilter(cfg.k, c, dtype=dtype)
        self.gate = ContentGate(rng, c, cfg.gate_bottleneck, dtype=dtype)
        self.fuse = Conv2d(rng, 2 * c, c, 1, dtype=dtype)
        self.ln = LayerNormChannels(c, dtype=dtype)
        self.dropout = Dropout(cfg.dropout_p)

    def __call__(self, x, train=False, rng=None):
        spec = spectral_branch(x, self.wspec)
        gated = self.gate(x)
        fused = self.fuse(ops.concat([spec, gated], axis=1))
        fused = self.dropout(self.ln(fused), train=train, rng=rng)
        return ops.add(x, fused)

    def named_params(self, prefix):
        yield f"{prefix}.wspec.re", self.wspec.weights.re
        yield f"{prefix}.wspec.im", self.wspec.weights.im
        yield from self.gate.named_params(f"{prefix}.gate")
        yield from self.fuse.named_params(f"{prefix}.fuse")
        yield from self.ln.named_params(f"{prefix}.ln")

    def named_buffers(self, prefix):
        return ()
