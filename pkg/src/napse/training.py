"""Training orchestration: joint pre-training of an encoder with its enabled
workers under the weighted loss, downstream MOS-head training against a frozen
encoder, and a finite-difference gradient verification harness.

Everything is seed-deterministic: batch order, mask plans, contrastive
sampling, dropout, and initialization all derive from the run seed, so two
runs with the same config produce identical loss sequences and checkpoints.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import corpus, dsp, workers
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint, state_digest
from .corpus import MixtureRecord
from .dsp import AudioClip, FrameConfig
from .encoders import (
    MaskedEncoder,
    MaskedEncoderConfig,
    PaseEncoder,
    PaseEncoderConfig,
    plan_mask,
)
from .encoders.masked import sinusoidal_positions  # noqa: F401  (re-export convenience)
from .workers import (
    ALL_WORKERS,
    NOISE_WORKERS,
    PAIR_WORKERS,
    REGRESSION_WORKERS,
    SSL_WORKERS,
    SingleSpeakerError,
    build_worker_heads,
    noise_logits_t,
    pair_losses_t,
    regression_loss_t,
)

logger = logging.getLogger(__name__)

ENCODER_KINDS = ("pase", "masked")
SIGN_CONVENTIONS = ("additive", "literal")
RECONSTRUCTION_KEY = "reconstruction"
NOISE_LABEL_FIELDS = {"energy": "energy_class", "category": "category_class", "snr": "snr_class"}


class TrainingError(Exception):
    pass


class NonFiniteLossError(TrainingError):
    """A head produced a NaN/Inf loss; the message names the head."""


@dataclass(frozen=True)
class PretrainConfig:
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 0.1
    epochs: int = 3
    batch_size: int = 8
    seed: int = 0
    encoder: str = "pase"
    enabled_workers: tuple = ALL_WORKERS
    sign_convention: str = "additive"
    lr: float = 1e-4
    weight_decay: float = 1e-3

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.encoder not in ENCODER_KINDS:
            raise ValueError(f"encoder must be one of {ENCODER_KINDS}, got {self.encoder!r}")
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise ValueError(f"sign_convention must be one of {SIGN_CONVENTIONS}")
        unknown = set(self.enabled_workers) - set(ALL_WORKERS)
        if unknown:
            raise ValueError(f"unknown workers: {sorted(unknown)}")
        if self.encoder == "masked":
            ssl = set(self.enabled_workers) & set(SSL_WORKERS)
            if ssl:
                raise ValueError(
                    "masked encoder pairs its own reconstruction objective with the "
                    f"noise workers only; remove {sorted(ssl)}"
                )
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        object.__setattr__(self, "enabled_workers", tuple(self.enabled_workers))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
            "epochs": self.epochs, "batch_size": self.batch_size, "seed": self.seed,
            "encoder": self.encoder, "enabled_workers": list(self.enabled_workers),
            "sign_convention": self.sign_convention, "lr": self.lr,
            "weight_decay": self.weight_decay,
        }

    @staticmethod
    def from_dict(obj: dict) -> "PretrainConfig":
        obj = dict(obj)
        obj["enabled_workers"] = tuple(obj.get("enabled_workers", ALL_WORKERS))
        return PretrainConfig(**obj)


@dataclass(frozen=True)
class MosHeadConfig:
    hidden: int = 64
    dropout: float = 0.2
    lr: float = 0.00012
    weight_decay: float = 0.001
    batch_size: int = 16
    epochs: int = 50
    score_range: tuple = (1.0, 5.0)
    pooling: str = "mean"

    def __post_init__(self):
        lo, hi = self.score_range
        if not lo < hi:
            raise ValueError(f"score_range min must be < max, got {self.score_range}")
        if self.pooling != "mean":
            raise ValueError("only mean pooling is supported")
        object.__setattr__(self, "score_range", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        return {
            "hidden": self.hidden, "dropout": self.dropout, "lr": self.lr,
            "weight_decay": self.weight_decay, "batch_size": self.batch_size,
            "epochs": self.epochs, "score_range": list(self.score_range),
            "pooling": self.pooling,
        }

    @staticmethod
    def from_dict(obj: dict) -> "MosHeadConfig":
        obj = dict(obj)
        obj["score_range"] = tuple(obj.get("score_range", (1.0, 5.0)))
        return MosHeadConfig(**obj)


@dataclass(frozen=True)
class MosExample:
    id: str
    path: str
    mos: float

    def __post_init__(self):
        if not 1.0 <= self.mos <= 5.0:
            raise ValueError(f"MOS {self.mos} outside [1, 5] for {self.id}")


@dataclass(frozen=True)
class LossBreakdown:
    per_head: dict
    weighted_total: float
    weights: tuple

    def to_dict(self) -> dict:
        return {
            "per_head": dict(self.per_head),
            "weighted_total": self.weighted_total,
            "weights": list(self.weights),
        }


def _compose_total(per_head: Mapping, cfg: PretrainConfig):
    """Weighted total; works for floats and torch scalars alike."""
    ssl_terms = [v for k, v in per_head.items() if k in SSL_WORKERS or k == RECONSTRUCTION_KEY]
    l_ssl = sum(ssl_terms) if ssl_terms else 0.0
    sign = 1.0 if cfg.sign_convention == "additive" else -1.0
    total = l_ssl
    for weight, key in ((cfg.alpha, "energy"), (cfg.beta, "category"), (cfg.gamma, "snr")):
        if key in per_head:
            total = total + sign * weight * per_head[key]
    return total


def compose_loss(per_head: Mapping[str, float], cfg: PretrainConfig) -> LossBreakdown:
    """Combine per-head losses into the weighted pre-training total."""
    clean = {}
    for name, value in per_head.items():
        value = float(value)
        if not math.isfinite(value):
            raise NonFiniteLossError(f"loss for head {name!r} is {value}")
        clean[name] = value
    return LossBreakdown(
        per_head=clean,
        weighted_total=float(_compose_total(clean, cfg)),
        weights=(cfg.alpha, cfg.beta, cfg.gamma),
    )


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


def speaker_of(record: MixtureRecord) -> str:
    """Speaker id from the clean filename convention spkNN_uttNNN.wav."""
    return Path(record.clean_path).stem.split("_")[0]


@dataclass
class PreparedRecord:
    """Mixture audio plus whichever targets the enabled workers need."""

    record: MixtureRecord
    speaker: str
    wave: np.ndarray
    targets: dict = field(default_factory=dict)  # worker name -> (T, F) float32
    mel: Optional[np.ndarray] = None
    labels: dict = field(default_factory=dict)  # worker name -> int


def prepare_record(
    record: MixtureRecord,
    cfg: PretrainConfig,
    frame_cfg: FrameConfig = FrameConfig(),
    root: Optional[Path] = None,
) -> PreparedRecord:
    noisy, _ = corpus.realize_mixture(record, root=root)
    prepared = PreparedRecord(
        record=record,
        speaker=speaker_of(record),
        wave=noisy.samples.astype(np.float32),
        labels={
            name: getattr(record.labels, NOISE_LABEL_FIELDS[name])
            for name in NOISE_WORKERS
            if name in cfg.enabled_workers
        },
    )
    enabled = set(cfg.enabled_workers)
    if cfg.encoder == "masked":
        prepared.mel = dsp.mel_spectrogram(noisy, frame_cfg).frames.astype(np.float32)
        return prepared
    if "waveform" in enabled:
        prepared.targets["waveform"] = workers.waveform_windows(noisy).astype(np.float32)
    if "lps" in enabled:
        prepared.targets["lps"] = dsp.log_power_spectrum(noisy, frame_cfg).frames.astype(np.float32)
    if "mfcc" in enabled:
        prepared.targets["mfcc"] = dsp.mfcc(noisy, frame_cfg).frames.astype(np.float32)
    if "prosody" in enabled:
        prepared.targets["prosody"] = dsp.prosody(noisy, frame_cfg).frames.astype(np.float32)
    return prepared


def _stack_trimmed(arrays: Sequence[np.ndarray], dtype) -> torch.Tensor:
    n = min(a.shape[0] for a in arrays)
    return torch.as_tensor(np.stack([a[:n] for a in arrays]), dtype=dtype)


# ---------------------------------------------------------------------------
# Pre-training
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    encoder: nn.Module
    heads: nn.ModuleDict
    optimizer: torch.optim.Optimizer
    cfg: PretrainConfig
    frame_cfg: FrameConfig
    step: int = 0

    def parameters_state(self) -> dict:
        state = {f"encoder/{k}": v for k, v in self.encoder.state_dict().items()}
        for name, head in self.heads.items():
            state.update({f"workers/{name}/{k}": v for k, v in head.state_dict().items()})
        return state


def build_encoder(kind: str, encoder_cfg=None) -> nn.Module:
    if kind == "pase":
        return PaseEncoder(encoder_cfg or PaseEncoderConfig())
    if kind == "masked":
        return MaskedEncoder(encoder_cfg or MaskedEncoderConfig())
    raise TrainingError(f"unknown encoder kind {kind!r}")


def init_train_state(
    cfg: PretrainConfig,
    encoder_cfg=None,
    frame_cfg: FrameConfig = FrameConfig(),
) -> TrainState:
    torch.manual_seed(cfg.seed)
    encoder = build_encoder(cfg.encoder, encoder_cfg)
    heads = build_worker_heads(encoder.latent_dim, names=cfg.enabled_workers, frame_cfg=frame_cfg)
    params = list(encoder.parameters()) + list(heads.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    return TrainState(encoder=encoder, heads=heads, optimizer=optimizer, cfg=cfg, frame_cfg=frame_cfg)


def _masked_step_losses(state: TrainState, batch: Sequence[PreparedRecord]) -> dict:
    cfg, mcfg = state.cfg, state.encoder.cfg
    mels = _stack_trimmed([r.mel for r in batch], torch.float32)
    n_frames = mels.shape[1]
    plan_rng = np.random.default_rng((cfg.seed, state.step))
    masked_rows = torch.zeros(mels.shape[:2], dtype=torch.bool)
    corrupted = mels.clone()
    for i in range(len(batch)):
        plan = plan_mask(n_frames, mcfg, seed=int(plan_rng.integers(0, 2**63)))
        noise_rng = np.random.default_rng(plan.noise_seed)
        for idx, action in zip(plan.indices, plan.actions):
            if action == 0:
                corrupted[i, idx] = 0.0
            elif action == 1:
                corrupted[i, idx] = torch.as_tensor(
                    noise_rng.standard_normal(mels.shape[2]), dtype=torch.float32
                )
        if len(plan):
            masked_rows[i, plan.indices] = True
        else:
            masked_rows[i, :] = True  # empty plan: loss over all frames
    latent, recon = state.encoder(corrupted)
    losses = {RECONSTRUCTION_KEY: (recon - mels).abs()[masked_rows].mean()}
    for name in NOISE_WORKERS:
        if name not in state.heads:
            continue
        logits = noise_logits_t(state.heads[name], latent)
        labels = torch.as_tensor([r.labels[name] for r in batch], dtype=torch.long)
        losses[name] = F.cross_entropy(logits, labels)
    return losses


def _pase_step_losses(state: TrainState, batch: Sequence[PreparedRecord]) -> dict:
    cfg = state.cfg
    waves = _stack_trimmed([r.wave for r in batch], torch.float32).unsqueeze(1)
    latent = state.encoder(waves)
    losses = {}
    for name in REGRESSION_WORKERS:
        if name not in state.heads:
            continue
        target = _stack_trimmed([r.targets[name] for r in batch], torch.float32)
        losses[name] = regression_loss_t(state.heads[name], latent, target)
    pair_names = [n for n in PAIR_WORKERS if n in state.heads]
    if pair_names:
        losses.update(
            pair_losses_t(
                state.heads, latent, [r.speaker for r in batch], seed=(cfg.seed, state.step)
            )
        )
    for name in NOISE_WORKERS:
        if name not in state.heads:
            continue
        logits = noise_logits_t(state.heads[name], latent)
        labels = torch.as_tensor([r.labels[name] for r in batch], dtype=torch.long)
        losses[name] = F.cross_entropy(logits, labels)
    return losses


def pretrain_step(
    batch: Sequence[PreparedRecord], state: TrainState, cfg: Optional[PretrainConfig] = None
) -> tuple[TrainState, LossBreakdown]:
    """One optimization step over a prepared batch.

    Only the encoder and the enabled heads carry gradients; the returned
    breakdown records each head's loss and the composed total actually
    minimized.
    """
    cfg = cfg or state.cfg
    if not batch:
        raise TrainingError("empty batch")
    torch.manual_seed((cfg.seed * 1_000_003 + state.step) % 2**62)
    state.encoder.train()
    state.heads.train()
    losses = (
        _masked_step_losses(state, batch)
        if cfg.encoder == "masked"
        else _pase_step_losses(state, batch)
    )
    for name, value in losses.items():
        if not torch.isfinite(value):
            raise NonFiniteLossError(f"loss for head {name!r} is non-finite at step {state.step}")
    total = _compose_total(losses, cfg)
    state.optimizer.zero_grad()
    total.backward()
    state.optimizer.step()
    state.step += 1
    breakdown = compose_loss({k: float(v) for k, v in losses.items()}, cfg)
    return state, breakdown


def _speaker_diverse_batches(
    order: np.ndarray, speakers: Sequence[str], batch_size: int, need_diversity: bool
) -> list[np.ndarray]:
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if not need_diversity:
        return batches
    batches = [b for b in batches if len(b) >= 2]
    for i, batch in enumerate(batches):
        if len({speakers[j] for j in batch}) >= 2:
            continue
        spk = speakers[batch[0]]
        for other in batches[i + 1 :] + batches[:i]:
            swap = next((k for k, j in enumerate(other) if speakers[j] != spk), None)
            if swap is not None:
                batch[0], other[swap] = other[swap], batch[0]
                break
        else:
            raise SingleSpeakerError(
                "corpus has a single speaker; LIM cannot form contrastive pairs"
            )
    return batches


def _epoch_checkpoint_path(out_path: Path, epoch: int) -> Path:
    return out_path.parent / f"{out_path.stem}.epoch{epoch:03d}{out_path.suffix}"


def pretrain(
    manifest_path,
    cfg: PretrainConfig,
    out_path,
    encoder_cfg=None,
    frame_cfg: FrameConfig = FrameConfig(),
    run_dir=None,
    config_digest: str = "",
    manifest_root: Optional[Path] = None,
) -> Path:
    """Run the full pre-training loop and write the final checkpoint.

    Records marked split=train are used; batches are reshuffled per epoch from
    the seed. A checkpoint is written after every epoch and the final one
    (equal to initialization when epochs=0) is returned. Worker heads ride
    along in the checkpoint; downstream stages load the encoder arrays only.
    """
    out_path = Path(out_path)
    records = [r for r in corpus.read_manifest(manifest_path) if r.split == "train"]
    if not records:
        raise TrainingError(f"no train-split records in {manifest_path}")
    state = init_train_state(cfg, encoder_cfg=encoder_cfg, frame_cfg=frame_cfg)
    prepared = [prepare_record(r, cfg, frame_cfg, root=manifest_root) for r in records]
    speakers = [p.speaker for p in prepared]
    need_diversity = bool(set(cfg.enabled_workers) & set(PAIR_WORKERS))

    log_path = Path(run_dir) / "train_log.jsonl" if run_dir else None
    if log_path:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text("")

    encoder_cfg_dict = state.encoder.cfg.to_dict()
    meta = {"config_digest": config_digest, "manifest": str(manifest_path)}

    for epoch in range(cfg.epochs):
        order = np.random.default_rng((cfg.seed, epoch)).permutation(len(prepared))
        epoch_losses: list[LossBreakdown] = []
        for batch_idx in _speaker_diverse_batches(order, speakers, cfg.batch_size, need_diversity):
            batch = [prepared[i] for i in batch_idx]
            state, breakdown = pretrain_step(batch, state)
            epoch_losses.append(breakdown)
        head_names = epoch_losses[0].per_head.keys() if epoch_losses else []
        line = {
            "epoch": epoch,
            "steps": state.step,
            "mean_total": float(np.mean([b.weighted_total for b in epoch_losses])) if epoch_losses else None,
            "per_head": {
                name: float(np.mean([b.per_head[name] for b in epoch_losses]))
                for name in head_names
            },
        }
        logger.info("epoch %d: %s", epoch, json.dumps(line["per_head"]))
        if log_path:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(line, sort_keys=True) + "\n")
        save_checkpoint(
            _epoch_checkpoint_path(out_path, epoch),
            kind=cfg.encoder,
            config={"pretrain": cfg.to_dict(), "encoder": encoder_cfg_dict},
            state_dict=state.parameters_state(),
            step=state.step,
            meta={**meta, "epoch": epoch},
        )
    return save_checkpoint(
        out_path,
        kind=cfg.encoder,
        config={"pretrain": cfg.to_dict(), "encoder": encoder_cfg_dict},
        state_dict=state.parameters_state(),
        step=state.step,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Encoder loading / latent extraction
# ---------------------------------------------------------------------------


def load_encoder(ckpt_path) -> tuple[nn.Module, Checkpoint]:
    """Rebuild the encoder module from a pre-training checkpoint."""
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.kind not in ENCODER_KINDS:
        raise CheckpointError(f"{ckpt_path}: kind {ckpt.kind!r} is not an encoder checkpoint")
    encoder_cfg_dict = ckpt.config["encoder"]
    if ckpt.kind == "pase":
        encoder = PaseEncoder(PaseEncoderConfig.from_dict(encoder_cfg_dict))
    else:
        encoder = MaskedEncoder(MaskedEncoderConfig.from_dict(encoder_cfg_dict))
    encoder_state = {
        k[len("encoder/"):]: torch.from_numpy(v.copy())
        for k, v in ckpt.state.items()
        if k.startswith("encoder/")
    }
    encoder.load_state_dict(encoder_state)
    encoder.eval()
    return encoder, ckpt


def encoder_state_digest(encoder: nn.Module) -> str:
    return state_digest(encoder.state_dict())


def pooled_latent(
    clip: AudioClip, encoder: nn.Module, kind: str, frame_cfg: FrameConfig = FrameConfig()
) -> np.ndarray:
    """Mean-pooled latent vector for one clip, inference mode, no masking."""
    encoder.eval()
    with torch.no_grad():
        if kind == "pase":
            wave = torch.as_tensor(clip.samples, dtype=torch.float32).view(1, 1, -1)
            latent = encoder(wave)[0]
        else:
            mel = dsp.mel_spectrogram(clip, frame_cfg).frames
            latent, _ = encoder(torch.as_tensor(mel, dtype=torch.float32).unsqueeze(0))
            latent = latent[0]
        return latent.mean(dim=0).cpu().numpy()


# ---------------------------------------------------------------------------
# Downstream MOS head
# ---------------------------------------------------------------------------


class MosHead(nn.Module):
    """Mean-pooled latent -> 64-unit hidden layer with layer norm and ReLU,
    dropout before the output layer, and a hard clamp to the score range."""

    def __init__(self, latent_dim: int, cfg: MosHeadConfig = MosHeadConfig()):
        super().__init__()
        self.cfg = cfg
        self.hidden = nn.Linear(latent_dim, cfg.hidden)
        self.norm = nn.LayerNorm(cfg.hidden)
        self.dropout = nn.Dropout(cfg.dropout)
        self.out = nn.Linear(cfg.hidden, 1)
        # Start inside the score range so the clamp passes gradient from the
        # first step (a clamped-out head never trains).
        nn.init.constant_(self.out.bias, sum(cfg.score_range) / 2)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        lo, hi = self.cfg.score_range
        h = F.relu(self.norm(self.hidden(pooled)))
        raw = self.out(self.dropout(h)).squeeze(-1)
        return torch.clamp(raw, lo, hi)


def mos_forward(
    latent, head: MosHead, cfg: Optional[MosHeadConfig] = None, training: bool = False
) -> float:
    """Score one latent sequence; prediction is always inside the score range."""
    frames = latent.frames if hasattr(latent, "frames") else np.asarray(latent)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise TrainingError("latent must be a non-empty T x D matrix")
    head.train(training)
    pooled = torch.as_tensor(
        frames.mean(axis=0), dtype=next(head.parameters()).dtype
    ).unsqueeze(0)
    with torch.no_grad():
        score = head(pooled)[0]
    head.eval()
    return float(score)


def train_mos(
    examples: Sequence[MosExample],
    encoder_ckpt,
    cfg: MosHeadConfig,
    out_path,
    seed: int = 0,
    config_digest: str = "",
    audio_root: Optional[Path] = None,
) -> Path:
    """Train the MOS head on frozen-encoder latents and write its checkpoint.

    The encoder is loaded in inference mode and never enters the optimizer;
    its parameter digest is recorded before and after training so freezing is
    auditable from the checkpoint alone.
    """
    if not examples:
        raise TrainingError("empty MOS dataset")
    encoder, enc_ckpt = load_encoder(encoder_ckpt)
    for p in encoder.parameters():
        p.requires_grad_(False)
    digest_before = encoder_state_digest(encoder)

    pooled = np.stack([
        pooled_latent(
            dsp.load_wav(corpus._resolve(ex.path, audio_root)), encoder, enc_ckpt.kind
        )
        for ex in examples
    ])
    targets = np.array([ex.mos for ex in examples], dtype=np.float32)

    torch.manual_seed(seed)
    head = MosHead(pooled.shape[1], cfg)
    optimizer = torch.optim.Adam(head.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    inputs = torch.as_tensor(pooled, dtype=torch.float32)
    target_t = torch.as_tensor(targets)

    head.train()
    rng = np.random.default_rng(seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(examples))
        for start in range(0, len(examples), cfg.batch_size):
            idx = torch.as_tensor(order[start : start + cfg.batch_size])
            optimizer.zero_grad()
            pred = head(inputs[idx])
            loss = F.mse_loss(pred, target_t[idx])
            loss.backward()
            optimizer.step()
    head.eval()

    digest_after = encoder_state_digest(encoder)
    if digest_after != digest_before:
        raise TrainingError("frozen-encoder invariant violated during MOS training")
    return save_checkpoint(
        out_path,
        kind="mos_head",
        config={"mos": cfg.to_dict(), "latent_dim": int(pooled.shape[1]), "encoder_kind": enc_ckpt.kind},
        state_dict=head.state_dict(),
        step=cfg.epochs,
        meta={
            "config_digest": config_digest,
            "seed": seed,
            "encoder_ckpt": str(encoder_ckpt),
            "encoder_digest": digest_before,
            "encoder_digest_after_training": digest_after,
            "n_examples": len(examples),
        },
    )


def load_mos_head(ckpt_path) -> tuple[MosHead, Checkpoint]:
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.kind != "mos_head":
        raise CheckpointError(f"{ckpt_path}: expected a mos_head checkpoint, got {ckpt.kind!r}")
    head = MosHead(ckpt.config["latent_dim"], MosHeadConfig.from_dict(ckpt.config["mos"]))
    head.load_state_dict(ckpt.state_tensors())
    head.eval()
    return head, ckpt


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check(
    loss_fn,
    params: Sequence[torch.Tensor],
    epsilon: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
) -> float:
    """Compare autograd gradients against central finite differences.

    Samples n_coords coordinates across the parameter list, evaluates
    (f(x+e) - f(x-e)) / 2e per coordinate, and returns the maximum relative
    error |fd - grad| / max(|fd|, |grad|, 1). Parameters should be float64 for
    the published tolerances to be meaningful.
    """
    params = [p for p in params if p.requires_grad]
    if not params:
        raise TrainingError("no trainable parameters to check")
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NonFiniteLossError("loss is non-finite at the probe point")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [
        torch.zeros_like(p) if g is None else g.detach().clone()
        for p, g in zip(params, grads)
    ]

    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(n_coords, total), replace=False)

    worst = 0.0
    for flat_index in coords:
        p_idx = 0
        offset = int(flat_index)
        while offset >= sizes[p_idx]:
            offset -= sizes[p_idx]
            p_idx += 1
        param = params[p_idx]
        flat = param.data.view(-1)
        original = float(flat[offset])
        with torch.no_grad():
            flat[offset] = original + epsilon
            f_plus = float(loss_fn())
            flat[offset] = original - epsilon
            f_minus = float(loss_fn())
            flat[offset] = original
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NonFiniteLossError("loss became non-finite in the probe neighborhood")
        fd = (f_plus - f_minus) / (2 * epsilon)
        analytic = float(grads[p_idx].view(-1)[offset])
        rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1.0)
        worst = max(worst, rel)
    return worst
