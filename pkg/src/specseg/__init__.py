"""specseg: spectral-mixing segmentation at desk scale.

A dense-tensor reverse-mode autodiff engine, FFT-truncation token mixing
blocks, a boundary-routed decoder, and a morphology-adaptive loss, with a
training/evaluation/analysis CLI.
"""

from . import ops  # noqa: F401  (attaches Tensor operators)
from .tensor import Tape, Tensor
from .spectral import (
    ComplexTensor,
    SpectralFilter,
    SpectrumStats,
    center_shift,
    crop_pad,
    energy_retention,
    fft2d,
    spectral_branch,
)
from .model import ModelConfig, SegModel, build
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "ComplexTensor",
    "SpectralFilter",
    "SpectrumStats",
    "center_shift",
    "crop_pad",
    "energy_retention",
    "fft2d",
    "spectral_branch",
    "ModelConfig",
    "SegModel",
    "build",
    "TrainConfig",
    "evaluate",
    "train",
    "__version__",
]
