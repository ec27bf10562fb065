"""The ten pre-training heads attached to an encoder's latent sequence.

Four regression workers (waveform, log power spectrum, MFCC, prosody), three
binary same/different workers over latent frames, pooled chunks, and temporal
order (lim, gim, spc), and the three supervised noise workers (spectral-energy
region, noise category, SNR class). Every head is one 256-unit hidden layer
with PReLU plus a task-sized output layer; heads are discarded after
pre-training.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dsp import AudioClip, FeatureMatrix, FrameConfig
from .encoders import LatentSequence

SSL_WORKERS = ("waveform", "lps", "mfcc", "prosody", "lim", "gim", "spc")
NOISE_WORKERS = ("energy", "category", "snr")
ALL_WORKERS = SSL_WORKERS + NOISE_WORKERS
REGRESSION_WORKERS = ("waveform", "lps", "mfcc", "prosody")
PAIR_WORKERS = ("lim", "gim", "spc")

HIDDEN_UNITS = 256
WAVEFORM_SAMPLES_PER_FRAME = 160
NOISE_CLASS_COUNTS = {"energy": 4, "category": 8, "snr": 6}
MAX_FRAME_MISALIGNMENT = 2

GIM_CHUNK_FRAMES = 50  # 0.5 s at the 10 ms hop
SPC_MAX_OFFSET = 5


class WorkerError(Exception):
    pass


class AlignmentError(WorkerError):
    """Latent and target frame counts differ by more than the tolerance."""


class SingleSpeakerError(WorkerError):
    """LIM needs at least two speakers in the batch."""


class PairSamplingError(WorkerError):
    """A contrastive worker cannot sample from this batch."""


def worker_output_dim(name: str, frame_cfg: FrameConfig = FrameConfig()) -> int:
    dims = {
        "waveform": WAVEFORM_SAMPLES_PER_FRAME,
        "lps": frame_cfg.n_bins,
        "mfcc": frame_cfg.n_mfcc,
        "prosody": 4,
        "lim": 1,
        "gim": 1,
        "spc": 1,
        **NOISE_CLASS_COUNTS,
    }
    if name not in dims:
        raise WorkerError(f"unknown worker {name!r}")
    return dims[name]


def worker_input_dim(name: str, latent_dim: int) -> int:
    return 2 * latent_dim if name in PAIR_WORKERS else latent_dim


class WorkerHead(nn.Module):
    """Single-hidden-layer MLP: Linear -> PReLU(256) -> Linear."""

    def __init__(self, name: str, latent_dim: int, frame_cfg: FrameConfig = FrameConfig()):
        super().__init__()
        if name not in ALL_WORKERS:
            raise WorkerError(f"unknown worker {name!r}")
        self.name = name
        self.in_dim = worker_input_dim(name, latent_dim)
        self.out_dim = worker_output_dim(name, frame_cfg)
        self.net = nn.Sequential(
            nn.Linear(self.in_dim, HIDDEN_UNITS),
            nn.PReLU(HIDDEN_UNITS, init=0.25),
            nn.Linear(HIDDEN_UNITS, self.out_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise WorkerError(
                f"{self.name}: expected input dim {self.in_dim}, got {x.shape[-1]}"
            )
        # Per-channel PReLU reads channels from dim 1, so run the MLP on a
        # flat (N, features) view whatever the leading shape.
        lead = x.shape[:-1]
        out = self.net(x.reshape(-1, self.in_dim))
        return out.reshape(*lead, self.out_dim)


def build_worker_heads(
    latent_dim: int, names=ALL_WORKERS, frame_cfg: FrameConfig = FrameConfig()
) -> nn.ModuleDict:
    unknown = set(names) - set(ALL_WORKERS)
    if unknown:
        raise WorkerError(f"unknown workers: {sorted(unknown)}")
    return nn.ModuleDict({name: WorkerHead(name, latent_dim, frame_cfg) for name in names})


def waveform_windows(clip: AudioClip, samples_per_frame: int = WAVEFORM_SAMPLES_PER_FRAME) -> np.ndarray:
    """Reshape a clip into consecutive per-latent-frame sample windows."""
    n_frames = len(clip) // samples_per_frame
    if n_frames < 1:
        raise AlignmentError("clip shorter than one waveform window")
    return clip.samples[: n_frames * samples_per_frame].reshape(n_frames, samples_per_frame)


def _align(latent_t: torch.Tensor, target_t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    t_latent, t_target = latent_t.shape[-2], target_t.shape[-2]
    if abs(t_latent - t_target) > MAX_FRAME_MISALIGNMENT:
        raise AlignmentError(
            f"latent has {t_latent} frames but target has {t_target}; "
            f"misalignment beyond {MAX_FRAME_MISALIGNMENT} frames"
        )
    n = min(t_latent, t_target)
    return latent_t[..., :n, :], target_t[..., :n, :]


def regression_loss_t(head: WorkerHead, latent_t: torch.Tensor, target_t: torch.Tensor) -> torch.Tensor:
    """Frame-wise prediction loss: L1 for the waveform head, MSE otherwise."""
    latent_t, target_t = _align(latent_t, target_t)
    pred = head(latent_t)
    if head.name == "waveform":
        return (pred - target_t).abs().mean()
    return (pred - target_t).square().mean()


def regression_worker_loss(name: str, latent: LatentSequence, target, head: WorkerHead) -> float:
    """Inference-mode loss of one regression worker on one utterance."""
    if name not in REGRESSION_WORKERS:
        raise WorkerError(f"{name!r} is not a regression worker")
    if isinstance(target, AudioClip):
        target = waveform_windows(target)
    elif isinstance(target, FeatureMatrix):
        target = target.frames
    dtype = next(head.parameters()).dtype
    with torch.no_grad():
        loss = regression_loss_t(
            head,
            torch.as_tensor(latent.frames, dtype=dtype),
            torch.as_tensor(np.asarray(target), dtype=dtype),
        )
    return float(loss)


def binary_info_loss_t(head: WorkerHead, pos_pair: torch.Tensor, neg_pair: torch.Tensor) -> torch.Tensor:
    """BCE with logits, label 1 for positive pairs and 0 for negative ones."""
    pos_logit = head(pos_pair).squeeze(-1)
    neg_logit = head(neg_pair).squeeze(-1)
    loss_pos = F.binary_cross_entropy_with_logits(pos_logit, torch.ones_like(pos_logit))
    loss_neg = F.binary_cross_entropy_with_logits(neg_logit, torch.zeros_like(neg_logit))
    return 0.5 * (loss_pos + loss_neg)


def binary_info_loss(head: WorkerHead, pos_pair: np.ndarray, neg_pair: np.ndarray) -> float:
    if head.name not in PAIR_WORKERS:
        raise WorkerError(f"{head.name!r} is not a binary-classification worker")
    dtype = next(head.parameters()).dtype
    with torch.no_grad():
        loss = binary_info_loss_t(
            head,
            torch.as_tensor(np.asarray(pos_pair), dtype=dtype),
            torch.as_tensor(np.asarray(neg_pair), dtype=dtype),
        )
    return float(loss)


def noise_logits_t(head: WorkerHead, latent_t: torch.Tensor) -> torch.Tensor:
    """Mean-pool over time, then classify. Accepts (T, D) or (B, T, D)."""
    return head(latent_t.mean(dim=-2))


def noise_worker_logits(name: str, latent: LatentSequence, head: WorkerHead) -> np.ndarray:
    if name not in NOISE_WORKERS:
        raise WorkerError(f"{name!r} is not a noise worker")
    dtype = next(head.parameters()).dtype
    with torch.no_grad():
        logits = noise_logits_t(head, torch.as_tensor(latent.frames, dtype=dtype))
    return logits.cpu().numpy()


def noise_worker_loss(logits: np.ndarray, label: int) -> float:
    """Softmax cross-entropy, computed as logsumexp(logits) - logits[label]."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise WorkerError("logits must be a single class vector")
    if not 0 <= label < logits.shape[0]:
        raise WorkerError(f"label {label} out of range for {logits.shape[0]} classes")
    m = logits.max()
    return float(m + np.log(np.exp(logits - m).sum()) - logits[label])


# ---------------------------------------------------------------------------
# Contrastive pair sampling. Samplers pick indices only, so the same code
# serves numpy inference paths and gradient-carrying torch paths.
# ---------------------------------------------------------------------------


def _sample_lim_indices(n_frames: list[int], speakers: list[str], rng: np.random.Generator):
    """Returns ((utt, frame) anchor, positive, negative) index pairs."""
    if len(set(speakers)) < 2:
        raise SingleSpeakerError("LIM needs a batch with at least two speakers")
    anchor_utt = int(rng.integers(0, len(speakers)))
    spk = speakers[anchor_utt]
    same = [i for i, s in enumerate(speakers) if s == spk and i != anchor_utt]
    pos_utt = int(rng.choice(same)) if same else anchor_utt
    neg_candidates = [i for i, s in enumerate(speakers) if s != spk]
    neg_utt = int(rng.choice(neg_candidates))

    t_a = n_frames[anchor_utt]
    if pos_utt == anchor_utt:
        # Different chunks of the same utterance: split at the midpoint.
        half = max(1, t_a // 2)
        anchor_frame = int(rng.integers(0, half))
        pos_frame = int(rng.integers(half, t_a)) if t_a > half else anchor_frame + 1
        if pos_frame >= t_a:
            pos_frame = t_a - 1
        if pos_frame == anchor_frame:
            raise PairSamplingError("utterance too short for two LIM chunks")
    else:
        anchor_frame = int(rng.integers(0, t_a))
        pos_frame = int(rng.integers(0, n_frames[pos_utt]))
    neg_frame = int(rng.integers(0, n_frames[neg_utt]))
    return (anchor_utt, anchor_frame), (pos_utt, pos_frame), (neg_utt, neg_frame)


def _chunk_bounds(t: int, rng: np.random.Generator) -> tuple[int, int]:
    length = min(GIM_CHUNK_FRAMES, max(1, t // 2))
    start = int(rng.integers(0, t - length + 1))
    return start, start + length


def _sample_gim_indices(n_frames: list[int], rng: np.random.Generator):
    """Returns ((utt, start, stop) anchor, positive, negative) chunk indices."""
    if len(n_frames) < 2:
        raise PairSamplingError("GIM needs at least two utterances in the batch")
    utt = int(rng.integers(0, len(n_frames)))
    other = int(rng.choice([i for i in range(len(n_frames)) if i != utt]))
    a0, a1 = _chunk_bounds(n_frames[utt], rng)
    p0, p1 = _chunk_bounds(n_frames[utt], rng)
    n0, n1 = _chunk_bounds(n_frames[other], rng)
    return (utt, a0, a1), (utt, p0, p1), (other, n0, n1)


def _sample_spc_indices(n_frames: list[int], rng: np.random.Generator):
    """Returns (utt, t, k): anchor frame t, positive t+k, negative t-k."""
    utt = int(rng.integers(0, len(n_frames)))
    t_utt = n_frames[utt]
    if t_utt < 2 * 1 + 1:
        raise PairSamplingError("utterance too short for SPC sampling")
    k = int(rng.integers(1, min(SPC_MAX_OFFSET, (t_utt - 1) // 2) + 1))
    t = int(rng.integers(k, t_utt - k))
    return utt, t, k


def sample_lim_pair(
    latents: list[LatentSequence], speakers: list[str], seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(anchor, positive, negative) latent frames; positive shares the anchor's
    speaker, the negative never does."""
    rng = np.random.default_rng(seed)
    (au, af), (pu, pf), (nu, nf) = _sample_lim_indices(
        [l.n_frames for l in latents], speakers, rng
    )
    return latents[au].frames[af], latents[pu].frames[pf], latents[nu].frames[nf]


def sample_gim_pair(latents: list[LatentSequence], seed: int):
    """(anchor, positive, negative) mean-pooled chunk vectors."""
    rng = np.random.default_rng(seed)
    (au, a0, a1), (pu, p0, p1), (nu, n0, n1) = _sample_gim_indices(
        [l.n_frames for l in latents], rng
    )
    return (
        latents[au].frames[a0:a1].mean(axis=0),
        latents[pu].frames[p0:p1].mean(axis=0),
        latents[nu].frames[n0:n1].mean(axis=0),
    )


def sample_spc_pair(latents: list[LatentSequence], seed: int):
    """(anchor, positive, negative) frames at (t, t+k, t-k) for k in [1, 5]."""
    rng = np.random.default_rng(seed)
    utt, t, k = _sample_spc_indices([l.n_frames for l in latents], rng)
    frames = latents[utt].frames
    return frames[t], frames[t + k], frames[t - k]


def pair_losses_t(
    heads: nn.ModuleDict,
    latent_bt: torch.Tensor,
    speakers: list[str],
    seed: int,
    n_draws: int | None = None,
) -> dict[str, torch.Tensor]:
    """Batch losses for whichever of lim/gim/spc are present in `heads`.

    Draws `n_draws` (default: batch size) pairs per worker from the batch
    latents (B, T, D); the RNG is seeded per call so steps are reproducible.
    """
    batch, t_frames, _ = latent_bt.shape
    n_frames = [t_frames] * batch
    draws = n_draws or batch
    losses: dict[str, torch.Tensor] = {}
    for name in PAIR_WORKERS:
        if name not in heads:
            continue
        rng = np.random.default_rng((seed, PAIR_WORKERS.index(name)))
        pos_pairs, neg_pairs = [], []
        for _ in range(draws):
            if name == "lim":
                (au, af), (pu, pf), (nu, nf) = _sample_lim_indices(n_frames, speakers, rng)
                anchor, pos, neg = latent_bt[au, af], latent_bt[pu, pf], latent_bt[nu, nf]
            elif name == "gim":
                (au, a0, a1), (pu, p0, p1), (nu, n0, n1) = _sample_gim_indices(n_frames, rng)
                anchor = latent_bt[au, a0:a1].mean(dim=0)
                pos = latent_bt[pu, p0:p1].mean(dim=0)
                neg = latent_bt[nu, n0:n1].mean(dim=0)
            else:
                utt, t, k = _sample_spc_indices(n_frames, rng)
                anchor, pos, neg = latent_bt[utt, t], latent_bt[utt, t + k], latent_bt[utt, t - k]
            pos_pairs.append(torch.cat([anchor, pos]))
            neg_pairs.append(torch.cat([anchor, neg]))
        losses[name] = binary_info_loss_t(
            heads[name], torch.stack(pos_pairs), torch.stack(neg_pairs)
        )
    return losses
