"""Five-stage encoder / four-stage decoder segmentation network.

Each encoder stage opens with a stride-2 3x3 conv to the stage width, then
one multi-scale local block and one spectral mixer block. Skips are taken
after the mixer. The decoder walks back up through four boundary-routed
stages and a prediction head that restores input resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import ops
from .blocks import LocalBlockConfig, MixerConfig, MultiScaleLocalBlock, SpectralMixerBlock
from .decoder import DecoderStage, PredictionHead
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d
from .tensor import Tensor


@dataclass
class ModelConfig:
    input_size: tuple = (352, 352)
    stage_channels: tuple = (24, 32, 64, 80, 128)
    k: int = 32
    expansion: int = 6
    kernels: tuple = (3, 5, 7)
    se_reduction: int = 16
    gate_bottleneck: int = 16
    dropout: float = 0.1
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.input_size = tuple(self.input_size)
        self.stage_channels = tuple(self.stage_channels)
        self.kernels = tuple(self.kernels)
        H, W = self.input_size
        if H % 32 or W % 32:
            raise ConfigError(f"input size {self.input_size} must be divisible by 32")
        if len(self.stage_channels) != 5:
            raise ConfigError("stage_channels must list exactly 5 stages")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32|float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def stage_resolutions(self):
        H, W = self.input_size
        return [(H >> (i + 1), W >> (i + 1)) for i in range(5)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        return cls(**d)


class _EncoderStage:
    def __init__(self, rng, in_ch, out_ch, k_eff, cfg: ModelConfig, dtype):
        self.stem = Conv2d(rng, in_ch, out_ch, 3, stride=2, dtype=dtype)
        self.stembn = BatchNorm2d(out_ch, dtype=dtype)
        self.local = MultiScaleLocalBlock(
            rng,
            LocalBlockConfig(out_ch, cfg.expansion, cfg.kernels, cfg.se_reduction),
            dtype=dtype,
        )
        self.mixer = SpectralMixerBlock(
            rng,
            MixerConfig(out_ch, k_eff, cfg.gate_bottleneck, cfg.dropout),
            dtype=dtype,
        )

    def __call__(self, x, train=False, rng=None):
        x = ops.elu(self.stembn(self.stem(x), train))
        x = self.local(x, train)
        return self.mixer(x, train=train, rng=rng)

    def named_params(self, prefix):
        yield from self.stem.named_params(f"{prefix}.stem")
        yield from self.stembn.named_params(f"{prefix}.stembn")
        yield from self.local.named_params(f"{prefix}.local")
        yield from self.mixer.named_params(f"{prefix}.mix")

    def named_buffers(self, prefix):
        yield from self.stembn.named_buffers(f"{prefix}.stembn")
        yield from self.local.named_buffers(f"{prefix}.local")


class SegModel:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        dtype = cfg.np_dtype
        rng = np.random.default_rng(cfg.seed)
        chans = cfg.stage_channels
        res = cfg.stage_resolutions()
        self.encoder = []
        in_ch = 3
        for i in range(5):
            k_eff = min(cfg.k, res[i][0], res[i][1])
            self.encoder.append(_EncoderStage(rng, in_ch, chans[i], k_eff, cfg, dtype))
            in_ch = chans[i]
        self.decoder = []
        prev = chans[4]
        for m in range(4, 0, -1):
            skip_ch = chans[m - 1]
            self.decoder.append(DecoderStage(rng, prev, skip_ch, skip_ch, dtype=dtype))
            prev = skip_ch
        self.head = PredictionHead(rng, prev, dtype=dtype)

    def forward(self, x: Tensor, train: bool = False, rng=None):
        """Run the network; returns (prediction in (0,1), decoder gate maps)."""
        H, W = self.cfg.input_size
        if x.shape[-2:] != (H, W) or x.shape[1] != 3:
            raise ShapeError("model.forward", x.shape, (None, 3, H, W))
        skips = []
        h = x
        for stage in self.encoder:
            h = stage(h, train=train, rng=rng)
            skips.append(h)
        d = skips[-1]
        gates = []
        for stage, skip in zip(self.decoder, reversed(skips[:-1])):
            d, gate = stage(d, skip, train=train)
            gates.append(gate)
        return self.head(d), gates

    def __call__(self, x, train=False, rng=None):
        return self.forward(x, train=train, rng=rng)

    # -- state handling ------------------------------------------------

    def named_params(self):
        for i, stage in enumerate(self.encoder, start=1):
            yield from stage.named_params(f"enc{i}")
        for m, stage in enumerate(self.decoder, start=1):
            yield from stage.named_params(f"dec{m}")
        yield from self.head.named_params("head")

    def named_buffers(self):
        for i, stage in enumerate(self.encoder, start=1):
            yield from stage.named_buffers(f"enc{i}")
        for m, stage in enumerate(self.decoder, start=1):
            yield from stage.named_buffers(f"dec{m}")

    def param_dict(self):
        return dict(self.named_params())

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_params())

    def decay_param_names(self):
        """Conv and spectral-filter weights; biases and norm params excluded."""
        return {
            name
            for name, _ in self.named_params()
            if name.endswith(".w") or name.endswith("wspec.re") or name.endswith("wspec.im")
        }

    def state_arrays(self) -> dict:
        state = {name: t.data for name, t in self.named_params()}
        for name, obj, attr in self.named_buffers():
            state[name] = getattr(obj, attr)
        return state

    def load_state_arrays(self, arrays: dict):
        params = dict(self.named_params())
        buffers = {name: (obj, attr) for name, obj, attr in self.named_buffers()}
        expected = set(params) | set(buffers)
        missing = expected - set(arrays)
        if missing:
            raise ConfigError(f"checkpoint missing tensors: {sorted(missing)[:5]} ...")
        for name, t in params.items():
            arr = np.asarray(arrays[name], dtype=t.dtype)
            if arr.shape != t.shape:
                raise ShapeError("load_state", arr.shape, t.shape, detail=name)
            t.data = arr.copy()
        for name, (obj, attr) in buffers.items():
            cur = getattr(obj, attr)
            setattr(obj, attr, np.asarray(arrays[name], dtype=cur.dtype).copy())


def build(cfg: ModelConfig) -> SegModel:
    return SegModel(cfg)
