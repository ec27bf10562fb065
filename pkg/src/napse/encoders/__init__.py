"""Latent-representation producers: a sinc-filter convolutional encoder over
raw waveforms and a masked transformer encoder over log-Mel frames."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LatentSequence:
    """Time-major encoder output (T x D) with its temporal granularity."""

    frames: np.ndarray
    hop_samples: int

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError("latent must be a T x D matrix with T >= 1")
        if not np.all(np.isfinite(frames)):
            raise ValueError("latent contains non-finite entries")
        object.__setattr__(self, "frames", frames)

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


from .masked import (  # noqa: E402
    MaskedEncoder,
    MaskedEncoderConfig,
    MaskPlan,
    apply_mask,
    masked_encode,
    plan_mask,
    reconstruction_loss,
)
from .pase import PaseEncoder, PaseEncoderConfig, SincConv, pase_encode  # noqa: E402

__all__ = [
    "LatentSequence",
    "MaskedEncoder",
    "MaskedEncoderConfig",
    "MaskPlan",
    "PaseEncoder",
    "PaseEncoderConfig",
    "SincConv",
    "apply_mask",
    "masked_encode",
    "pase_encode",
    "plan_mask",
    "reconstruction_loss",
]
