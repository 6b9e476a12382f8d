"""Boundary-routed decoder stage.

Each stage upsamples the previous decoder output, concatenates the encoder
skip, and runs two parallel streams at the concatenated width: a region
stream (two 3x3 conv+BN+ELU) and a boundary stream that predicts a one
channel spatial gate in (0,1) and edge-enhanced features. The streams are
blended per pixel by the gate and projected by a 1x1 conv to the stage
output width. The gate is returned for diagnostics.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ShapeError
from .nn import BatchNorm2d, Conv2d


def soft_route(r, b, gate):
    """Convex per-pixel blend r*(1-gate) + b*gate; gate broadcasts over channels."""
    if r.shape != b.shape:
        raise ShapeError("soft_route", r.shape, b.shape)
    g = gate.data
    if g.min() < 0.0 or g.max() > 1.0:
        raise ValueError(f"soft_route: gate outside [0,1] (min={g.min():.3g}, max={g.max():.3g})")
    one_minus = ops.sub(1.0, gate)
    return ops.add(ops.mul(r, one_minus), ops.mul(b, gate))


class DecoderStage:
    def __init__(self, rng, prev_channels, skip_channels, out_channels, dtype=np.float32):
        cv = prev_channels + skip_channels
        self.r1 = Conv2d(rng, cv, cv, 3, dtype=dtype)
        self.r1bn = BatchNorm2d(cv, dtype=dtype)
        self.r2 = Conv2d(rng, cv, cv, 3, dtype=dtype)
        self.r2bn = BatchNorm2d(cv, dtype=dtype)
        self.b1 = Conv2d(rng, cv, cv, 3, dtype=dtype)
        self.gate_head = Conv2d(rng, cv, 1, 1, dtype=dtype)
        self.b2 = Conv2d(rng, cv, cv, 3, dtype=dtype)
        self.b2bn = BatchNorm2d(cv, dtype=dtype)
        self.proj = Conv2d(rng, cv, out_channels, 1, dtype=dtype)
        self.projbn = BatchNorm2d(out_channels, dtype=dtype)

    def __call__(self, d_prev, skip, train=False):
        up = ops.upsample_nearest2x(d_prev)
        if up.shape[-2:] != skip.shape[-2:]:
            raise ShapeError("decoder_stage", up.shape, skip.shape, detail="upsampled input vs skip")
        v = ops.concat([up, skip], axis=1)
        r = ops.elu(self.r2bn(self.r2(ops.elu(self.r1bn(self.r1(v), train))), train))
        b1 = ops.elu(self.b1(r))
        gate = ops.sigmoid(self.gate_head(b1))
        b = ops.elu(self.b2bn(self.b2(ops.mul(b1, gate)), train))
        z = soft_route(r, b, gate)
        d_next = ops.elu(self.projbn(self.proj(z), train))
        return d_next, gate

    def named_params(self, prefix):
        for name, layer in (
            ("r1", self.r1), ("r1bn", self.r1bn), ("r2", self.r2), ("r2bn", self.r2bn),
            ("b1", self.b1), ("gate", self.gate_head), ("b2", self.b2), ("b2bn", self.b2bn),
            ("proj", self.proj), ("projbn", self.projbn),
        ):
            yield from layer.named_params(f"{prefix}.{name}")

    def named_buffers(self, prefix):
        for name, layer in (
            ("r1bn", self.r1bn), ("r2bn", self.r2bn), ("b2bn", self.b2bn), ("projbn", self.projbn),
        ):
            yield from layer.named_buffers(f"{prefix}.{name}")


class PredictionHead:
    """Final 2x nearest upsample to input resolution, 3x3 conv, sigmoid.

    The conv kernel is 3x3 rather than 1x1: after nearest upsampling the
    four pixels of each 2x2 block share one feature vector, and a 1x1 head
    cannot vary inside a block, which caps achievable Dice near a blocky
    boundary. A 3x3 window sees a different neighborhood per pixel and can
    learn the de-blocking.
    """

    def __init__(self, rng, in_channels, dtype=np.float32):
        self.conv = Conv2d(rng, in_channels, 1, 3, dtype=dtype)

    def __call__(self, x):
        return ops.sigmoid(self.conv(ops.upsample_nearest2x(x)))

    def named_params(self, prefix):
        yield from self.conv.named_params(f"{prefix}.conv")

    def named_buffers(self, prefix):
        return ()
