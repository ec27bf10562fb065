"""Waveform encoder: a learnable sinc band-pass filterbank followed by seven
strided convolution blocks and a linear projection to a 100-dim latent.

The sinc layer keeps only two trainable scalars per filter (low cutoff and
bandwidth); kernels are rebuilt from them on every forward pass, so gradient
steps move the filters while the clamping below keeps every filter a valid
band-pass inside (0, Nyquist).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..dsp import NYQUIST_HZ, SAMPLE_RATE_HZ, AudioClip, ClipTooShortError
from . import LatentSequence

MIN_LOW_HZ = 50.0
MIN_BAND_HZ = 50.0
# Cutoffs are clamped so low < high < Nyquist with at least MIN_BAND_HZ of band.
MAX_LOW_HZ = NYQUIST_HZ - 3 * MIN_BAND_HZ
MAX_HIGH_HZ = NYQUIST_HZ - MIN_BAND_HZ

PASE_LATENT_DIM = 100
PASE_DECIMATION = 160

DEFAULT_CONV_BLOCKS = (
    (128, 21, 10),
    (256, 11, 2),
    (256, 11, 2),
    (512, 11, 2),
    (512, 11, 2),
    (512, 11, 1),
    (512, 11, 1),
)
DESK_CONV_BLOCKS = (
    (32, 21, 10),
    (32, 11, 2),
    (48, 11, 2),
    (48, 11, 2),
    (64, 5, 2),
    (64, 5, 1),
    (64, 5, 1),
)


@dataclass(frozen=True)
class PaseEncoderConfig:
    """Architecture of the sinc+conv encoder. The stride ladder (including the
    sinc layer's stride of 1) must multiply to 160 so the latent advances one
    frame per 10 ms of input."""

    sinc_filters: int = 64
    sinc_kernel: int = 251
    conv_blocks: tuple = DEFAULT_CONV_BLOCKS
    projection_dim: int = PASE_LATENT_DIM

    def __post_init__(self):
        if len(self.conv_blocks) != 7:
            raise ValueError(f"exactly 7 conv blocks required, got {len(self.conv_blocks)}")
        if self.sinc_kernel % 2 != 1:
            raise ValueError("sinc kernel length must be odd")
        stride_product = int(np.prod([s for _, _, s in self.conv_blocks]))
        if stride_product != PASE_DECIMATION:
            raise ValueError(
                f"stride product (incl. sinc stride 1) must be {PASE_DECIMATION}, got {stride_product}"
            )
        if self.projection_dim != PASE_LATENT_DIM:
            raise ValueError(f"projection dim is pinned to {PASE_LATENT_DIM}")

    @staticmethod
    def desk() -> "PaseEncoderConfig":
        """Small variant for CPU-scale runs; same shape contract."""
        return PaseEncoderConfig(sinc_filters=16, sinc_kernel=65, conv_blocks=DESK_CONV_BLOCKS)

    def to_dict(self) -> dict:
        return {
            "sinc_filters": self.sinc_filters,
            "sinc_kernel": self.sinc_kernel,
            "conv_blocks": [list(b) for b in self.conv_blocks],
            "projection_dim": self.projection_dim,
        }

    @staticmethod
    def from_dict(obj: dict) -> "PaseEncoderConfig":
        return PaseEncoderConfig(
            sinc_filters=obj["sinc_filters"],
            sinc_kernel=obj["sinc_kernel"],
            conv_blocks=tuple(tuple(b) for b in obj["conv_blocks"]),
            projection_dim=obj["projection_dim"],
        )


def sinc_kernels(low_hz: torch.Tensor, band_hz: torch.Tensor, kernel_len: int) -> torch.Tensor:
    """Hamming-windowed ideal band-pass impulse responses, one per filter row.

    low/band are raw trainable values; effective cutoffs are
    low = MIN_LOW_HZ + |low|, high = low + MIN_BAND_HZ + |band|, both clamped
    below Nyquist. Kernels are symmetric (linear phase) by construction and
    mean-removed so the DC gain is exactly zero despite truncation.
    """
    low = torch.clamp(MIN_LOW_HZ + torch.abs(low_hz), max=MAX_LOW_HZ)
    high = torch.clamp(low + MIN_BAND_HZ + torch.abs(band_hz), max=MAX_HIGH_HZ)
    t = (torch.arange(kernel_len, dtype=low.dtype, device=low.device) - (kernel_len - 1) / 2)
    t = t / SAMPLE_RATE_HZ
    window = 0.54 - 0.46 * torch.cos(
        2 * np.pi * torch.arange(kernel_len, dtype=low.dtype, device=low.device) / (kernel_len - 1)
    )
    f_hi = high[:, None]
    f_lo = low[:, None]
    ideal = 2 * f_hi * torch.sinc(2 * f_hi * t[None, :]) - 2 * f_lo * torch.sinc(2 * f_lo * t[None, :])
    kernels = ideal / SAMPLE_RATE_HZ * window[None, :]
    return kernels - kernels.mean(dim=1, keepdim=True)


class SincConv(nn.Module):
    """Convolution whose kernels are parameterized band-pass filters."""

    def __init__(self, n_filters: int, kernel_len: int, stride: int = 1):
        super().__init__()
        if kernel_len % 2 != 1:
            raise ValueError("kernel length must be odd")
        self.n_filters = n_filters
        self.kernel_len = kernel_len
        self.stride = stride
        # Initialize band edges uniformly on the Mel scale, PASE-style.
        mel = np.linspace(
            2595 * np.log10(1 + MIN_LOW_HZ / 700),
            2595 * np.log10(1 + (NYQUIST_HZ - 200) / 700),
            n_filters + 1,
        )
        hz = 700 * (10 ** (mel / 2595) - 1)
        self.low_hz = nn.Parameter(torch.tensor(hz[:-1] - MIN_LOW_HZ, dtype=torch.float32))
        self.band_hz = nn.Parameter(torch.tensor(np.diff(hz) - MIN_BAND_HZ, dtype=torch.float32))
        self.register_buffer("clamp_events", torch.zeros((), dtype=torch.int64))

    def effective_band(self) -> tuple[torch.Tensor, torch.Tensor]:
        low = torch.clamp(MIN_LOW_HZ + torch.abs(self.low_hz), max=MAX_LOW_HZ)
        high = torch.clamp(low + MIN_BAND_HZ + torch.abs(self.band_hz), max=MAX_HIGH_HZ)
        return low.detach(), high.detach()

    def kernels(self) -> torch.Tensor:
        with torch.no_grad():
            over_low = (MIN_LOW_HZ + torch.abs(self.low_hz)) > MAX_LOW_HZ
            low = torch.clamp(MIN_LOW_HZ + torch.abs(self.low_hz), max=MAX_LOW_HZ)
            over_high = (low + MIN_BAND_HZ + torch.abs(self.band_hz)) > MAX_HIGH_HZ
            n_clamped = int((over_low | over_high).sum())
            if n_clamped:
                self.clamp_events += n_clamped
        return sinc_kernels(self.low_hz, self.band_hz, self.kernel_len)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        kernels = self.kernels().unsqueeze(1)
        return F.conv1d(x, kernels, stride=self.stride, padding=self.kernel_len // 2)


class PaseEncoder(nn.Module):
    """Sinc filterbank, seven (conv, batch norm, PReLU) blocks, and a 1x1
    projection with batch norm to the 100-dim latent."""

    def __init__(self, cfg: PaseEncoderConfig = PaseEncoderConfig()):
        super().__init__()
        self.cfg = cfg
        self.sinc = SincConv(cfg.sinc_filters, cfg.sinc_kernel, stride=1)
        blocks = []
        in_ch = cfg.sinc_filters
        for out_ch, kernel, stride in cfg.conv_blocks:
            blocks.append(
                nn.Sequential(
                    nn.Conv1d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2),
                    nn.BatchNorm1d(out_ch),
                    nn.PReLU(out_ch, init=0.25),
                )
            )
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.projection = nn.Conv1d(in_ch, cfg.projection_dim, 1)
        self.out_norm = nn.BatchNorm1d(cfg.projection_dim)

    @property
    def latent_dim(self) -> int:
        return self.cfg.projection_dim

    @property
    def hop_samples(self) -> int:
        return PASE_DECIMATION

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        """(B, 1, L) waveform -> (B, T, D) latent with T = ceil(L / 160)."""
        if wave.shape[-1] < PASE_DECIMATION:
            raise ClipTooShortError(
                f"need at least {PASE_DECIMATION} samples, got {wave.shape[-1]}"
            )
        h = self.sinc(wave)
        for block in self.blocks:
            h = block(h)
        h = self.out_norm(self.projection(h))
        return h.transpose(1, 2)


def pase_encode(clip: AudioClip, model: PaseEncoder) -> LatentSequence:
    """Deterministic inference-mode encoding of one clip."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            wave = torch.as_tensor(clip.samples, dtype=next(model.parameters()).dtype)
            latent = model(wave.view(1, 1, -1))[0]
    finally:
        model.train(was_training)
    return LatentSequence(frames=latent.cpu().numpy(), hop_samples=model.hop_samples)
