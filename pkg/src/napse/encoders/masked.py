"""Masked transformer encoder over log-Mel frames.

Training masks 15% of time frames; a masked frame is zeroed 80% of the time,
replaced with standard-normal values 10% of the time, and left unchanged
otherwise. A linear head reconstructs the unmasked input and the L1 error over
the masked frames is the self-supervised objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..dsp import FeatureMatrix
from . import LatentSequence

MASKED_LATENT_DIM = 256


class FeatureKindError(ValueError):
    """Masked encoder consumes log-Mel features only."""


@dataclass(frozen=True)
class MaskedEncoderConfig:
    layers: int = 3
    heads: int = 8
    ff_dim: int = 1024
    hidden: int = MASKED_LATENT_DIM
    dropout: float = 0.1
    mask_frac: float = 0.15
    zero_frac: float = 0.8
    random_frac: float = 0.1
    keep_frac: float = 0.1
    n_mels: int = 80

    def __post_init__(self):
        if abs(self.zero_frac + self.random_frac + self.keep_frac - 1.0) > 1e-9:
            raise ValueError("zero/random/keep fractions must sum to 1")
        if self.hidden % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if not 0 <= self.mask_frac <= 1:
            raise ValueError("mask_frac must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "heads": self.heads,
            "ff_dim": self.ff_dim,
            "hidden": self.hidden,
            "dropout": self.dropout,
            "mask_frac": self.mask_frac,
            "zero_frac": self.zero_frac,
            "random_frac": self.random_frac,
            "keep_frac": self.keep_frac,
            "n_mels": self.n_mels,
        }

    @staticmethod
    def from_dict(obj: dict) -> "MaskedEncoderConfig":
        return MaskedEncoderConfig(**obj)


ACTION_ZERO, ACTION_RANDOM, ACTION_KEEP = 0, 1, 2


@dataclass(frozen=True)
class MaskPlan:
    """Which frames to mask and how; carries its own seed for the random rows."""

    n_frames: int
    indices: np.ndarray
    actions: np.ndarray
    noise_seed: int

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        actions = np.asarray(self.actions, dtype=np.int64)
        if indices.shape != actions.shape:
            raise ValueError("indices and actions must align")
        if indices.size and (indices.min() < 0 or indices.max() >= self.n_frames):
            raise IndexError("mask index out of range")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "actions", actions)

    def __len__(self) -> int:
        return self.indices.size

    @property
    def is_empty(self) -> bool:
        return self.indices.size == 0


def plan_mask(n_frames: int, cfg: MaskedEncoderConfig, seed: int) -> MaskPlan:
    """Pick round(mask_frac * T) distinct frames uniformly; assign each the
    zero/random/keep action with probabilities (0.8, 0.1, 0.1)."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    n_masked = round(cfg.mask_frac * n_frames)
    indices = np.sort(rng.choice(n_frames, size=n_masked, replace=False))
    draws = rng.random(n_masked)
    actions = np.where(
        draws < cfg.zero_frac,
        ACTION_ZERO,
        np.where(draws < cfg.zero_frac + cfg.random_frac, ACTION_RANDOM, ACTION_KEEP),
    )
    return MaskPlan(
        n_frames=n_frames,
        indices=indices,
        actions=actions,
        noise_seed=int(rng.integers(0, 2**63)),
    )


def apply_mask(mel: FeatureMatrix, plan: MaskPlan, seed: int | None = None) -> FeatureMatrix:
    """Return a copy of the features with the plan's actions applied."""
    frames = np.array(mel.frames, copy=True)
    if plan.indices.size and plan.indices.max() >= frames.shape[0]:
        raise IndexError("mask plan index exceeds frame count")
    rng = np.random.default_rng(plan.noise_seed if seed is None else seed)
    for idx, action in zip(plan.indices, plan.actions):
        if action == ACTION_ZERO:
            frames[idx] = 0.0
        elif action == ACTION_RANDOM:
            frames[idx] = rng.standard_normal(frames.shape[1])
    return FeatureMatrix(
        kind=mel.kind,
        frames=frames,
        frame_hop_samples=mel.frame_hop_samples,
        frame_len_samples=mel.frame_len_samples,
    )


def sinusoidal_positions(n_frames: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed sin/cos positional encodings, (T, dim)."""
    position = torch.arange(n_frames, dtype=dtype).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    enc = torch.zeros(n_frames, dim, dtype=dtype)
    enc[:, 0::2] = torch.sin(position * div)
    enc[:, 1::2] = torch.cos(position * div)
    return enc


class MaskedEncoder(nn.Module):
    """Input projection + sinusoidal positions + transformer stack, with a
    linear head mapping the latent back to the Mel dimension."""

    def __init__(self, cfg: MaskedEncoderConfig = MaskedEncoderConfig()):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(cfg.n_mels, cfg.hidden)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.hidden,
            nhead=cfg.heads,
            dim_feedforward=cfg.ff_dim,
            dropout=cfg.dropout,
            batch_first=True,
        )
        self.transformer = nn.TransformerEncoder(layer, num_layers=cfg.layers)
        self.recon_head = nn.Linear(cfg.hidden, cfg.n_mels)

    @property
    def latent_dim(self) -> int:
        return self.cfg.hidden

    def forward(self, mel: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, T, n_mels) -> latent (B, T, hidden), reconstruction (B, T, n_mels)."""
        h = self.input_proj(mel)
        h = h + sinusoidal_positions(mel.shape[1], self.cfg.hidden, dtype=h.dtype).to(h.device)
        latent = self.transformer(h)
        return latent, self.recon_head(latent)


def masked_encode(
    mel: FeatureMatrix,
    model: MaskedEncoder,
    plan: MaskPlan | None = None,
) -> tuple[LatentSequence, FeatureMatrix]:
    """Inference-mode encoding of one utterance's Mel features.

    A plan, if given, is applied to the input first (pre-training behaviour);
    downstream use passes no plan and hits the deterministic unmasked path.
    """
    if mel.kind != "mel":
        raise FeatureKindError(f"masked encoder expects mel features, got {mel.kind!r}")
    features = mel if plan is None or plan.is_empty else apply_mask(mel, plan)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            x = torch.as_tensor(
                features.frames, dtype=next(model.parameters()).dtype
            ).unsqueeze(0)
            latent, recon = model(x)
    finally:
        model.train(was_training)
    latent_seq = LatentSequence(
        frames=latent[0].cpu().numpy(), hop_samples=mel.frame_hop_samples
    )
    recon_mat = FeatureMatrix(
        kind="mel",
        frames=recon[0].cpu().numpy(),
        frame_hop_samples=mel.frame_hop_samples,
        frame_len_samples=mel.frame_len_samples,
    )
    return latent_seq, recon_mat


def reconstruction_loss(
    reconstruction: FeatureMatrix, target: FeatureMatrix, plan: MaskPlan | None
) -> float:
    """Mean absolute error over the masked frames (all frames if none masked)."""
    if reconstruction.frames.shape != target.frames.shape:
        raise ValueError(
            f"shape mismatch: {reconstruction.frames.shape} vs {target.frames.shape}"
        )
    if plan is None or plan.is_empty:
        rows = slice(None)
    else:
        if plan.indices.max() >= target.frames.shape[0]:
            raise IndexError("mask plan index exceeds frame count")
        rows = plan.indices
    return float(np.mean(np.abs(reconstruction.frames[rows] - target.frames[rows])))
