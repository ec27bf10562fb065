"""Deterministic signal-processing primitives: audio I/O, framing, and the
frame-level feature representations the regression workers target.

All operations are pure functions of their inputs (no hidden RNG, no caching),
computed in float64. Log compressions use a fixed floor so silence maps to
log(1e-10) instead of -inf.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct

SAMPLE_RATE_HZ = 16000
NYQUIST_HZ = SAMPLE_RATE_HZ / 2
LOG_EPS = 1e-10

# Pitch search band and voicing decision threshold for the prosody features.
F0_MIN_HZ = 50.0
F0_MAX_HZ = 400.0
VOICING_THRESHOLD = 0.3

FEATURE_KINDS = ("mel", "lps", "mfcc", "prosody")
_KIND_BYTES = {"mel": 0, "lps": 1, "mfcc": 2, "prosody": 3}
_BYTE_KINDS = {v: k for k, v in _KIND_BYTES.items()}
_FEATURE_MAGIC = b"FEAT"


class AudioError(Exception):
    """Base class for audio I/O and precondition failures."""


class UnreadableFileError(AudioError):
    """File is missing, not RIFF/WAVE, or otherwise unparseable."""


class SampleRateError(AudioError):
    """WAV sample rate differs from the required 16 kHz."""


class ChannelCountError(AudioError):
    """WAV is not mono."""


class EncodingError(AudioError):
    """WAV is not 16-bit linear PCM."""


class EmptyClipError(AudioError):
    """Operation requires a non-empty clip."""


class ClipTooShortError(AudioError):
    """Clip is shorter than a single analysis frame."""


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform at 16 kHz, samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise EmptyClipError("clip must be a non-empty 1-D sample sequence")
        if not np.all(np.isfinite(samples)):
            raise AudioError("clip contains non-finite samples")
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise SampleRateError(
                f"sample rate must be {SAMPLE_RATE_HZ} Hz, got {self.sample_rate_hz}"
            )
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class FrameConfig:
    """Framing / filterbank parameters (25 ms frames, 10 ms hop by default)."""

    frame_len_samples: int = 400
    hop_samples: int = 160
    n_fft: int = 512
    n_mels: int = 80
    n_mfcc: int = 20
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop_samples <= self.frame_len_samples <= self.n_fft):
            raise ValueError(
                "require 0 < hop_samples <= frame_len_samples <= n_fft, got "
                f"hop={self.hop_samples} frame={self.frame_len_samples} n_fft={self.n_fft}"
            )
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass(frozen=True)
class FeatureMatrix:
    """Time-major (T x F) feature matrix with its framing metadata."""

    kind: str
    frames: np.ndarray
    frame_hop_samples: int
    frame_len_samples: int

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError("frames must be a T x F matrix with T >= 1")
        if not np.all(np.isfinite(frames)):
            raise ValueError("feature matrix contains non-finite entries")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def load_wav(path) -> AudioClip:
    """Read a mono 16-bit PCM 16 kHz RIFF/WAVE file, scaled by 1/32768."""
    path = Path(path)
    try:
        reader = wave.open(str(path), "rb")
    except FileNotFoundError as exc:
        raise UnreadableFileError(f"no such file: {path}") from exc
    except (wave.Error, EOFError, OSError) as exc:
        msg = str(exc).lower()
        if "compression" in msg or ("format" in msg and "riff" not in msg):
            raise EncodingError(f"{path}: not linear PCM ({exc})") from exc
        raise UnreadableFileError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    with reader:
        if reader.getcomptype() != "NONE":
            raise EncodingError(f"{path}: compressed WAV not supported")
        if reader.getsampwidth() != 2:
            raise EncodingError(
                f"{path}: expected 16-bit PCM, got {8 * reader.getsampwidth()}-bit"
            )
        if reader.getnchannels() != 1:
            raise ChannelCountError(f"{path}: expected mono, got {reader.getnchannels()} channels")
        if reader.getframerate() != SAMPLE_RATE_HZ:
            raise SampleRateError(
                f"{path}: expected {SAMPLE_RATE_HZ} Hz, got {reader.getframerate()} Hz"
            )
        raw = reader.readframes(reader.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise EmptyClipError(f"{path}: file holds no samples")
    return AudioClip(pcm.astype(np.float64) / 32768.0)


def save_wav(path, clip: AudioClip) -> None:
    """Write a clip as mono 16-bit PCM, clipping to the int16 range."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as writer:
        writer.setnchannels(1)
        writer.setsampwidth(2)
        writer.setframerate(clip.sample_rate_hz)
        writer.writeframes(pcm.tobytes())


def frame_count(n_samples: int, cfg: FrameConfig) -> int:
    """T = 1 + floor((len - frame_len) / hop); < 1 means too short."""
    return 1 + (n_samples - cfg.frame_len_samples) // cfg.hop_samples


def _frames(clip: AudioClip, cfg: FrameConfig) -> np.ndarray:
    n = frame_count(len(clip), cfg)
    if n < 1:
        raise ClipTooShortError(
            f"clip of {len(clip)} samples is shorter than one {cfg.frame_len_samples}-sample frame"
        )
    idx = np.arange(cfg.frame_len_samples)[None, :] + cfg.hop_samples * np.arange(n)[:, None]
    return clip.samples[idx]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window: 0.5 - 0.5 cos(2 pi k / n)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(clip: AudioClip, cfg: FrameConfig) -> np.ndarray:
    """Per-frame power spectrum |DFT(window * frame)|^2, shape T x (n_fft/2+1)."""
    frames = _frames(clip, cfg) * hann_window(cfg.frame_len_samples)[None, :]
    spectrum = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    return np.abs(spectrum) ** 2


def log_power_spectrum(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> FeatureMatrix:
    power = stft_power(clip, cfg)
    return FeatureMatrix(
        kind="lps",
        frames=np.log(power + LOG_EPS),
        frame_hop_samples=cfg.hop_samples,
        frame_len_samples=cfg.frame_len_samples,
    )


def hz_to_mel(hz):
    """HTK Mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrameConfig) -> np.ndarray:
    """Triangular HTK-Mel filterbank over [0, Nyquist], shape n_mels x n_bins."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(NYQUIST_HZ), cfg.n_mels + 2))
    bin_hz = np.arange(cfg.n_bins) * SAMPLE_RATE_HZ / cfg.n_fft
    lower, center, upper = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_spectrogram(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> FeatureMatrix:
    """Log Mel-filterbank energies of the power spectrum."""
    power = stft_power(clip, cfg)
    mel = power @ mel_filterbank(cfg).T
    return FeatureMatrix(
        kind="mel",
        frames=np.log(mel + LOG_EPS),
        frame_hop_samples=cfg.hop_samples,
        frame_len_samples=cfg.frame_len_samples,
    )


def mfcc(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> FeatureMatrix:
    """Orthonormal DCT-II of the log-Mel frames, first n_mfcc coefficients."""
    mel = mel_spectrogram(clip, cfg)
    coeffs = dct(mel.frames, type=2, norm="ortho", axis=1)[:, : cfg.n_mfcc]
    return FeatureMatrix(
        kind="mfcc",
        frames=coeffs,
        frame_hop_samples=cfg.hop_samples,
        frame_len_samples=cfg.frame_len_samples,
    )


def _frame_autocorr_peak(frames: np.ndarray, lag_min: int, lag_max: int):
    """Normalized autocorrelation peak per frame over [lag_min, lag_max].

    Returns (peak value, peak lag) arrays. Normalization divides each lag's
    product sum by the geometric mean energy of the two overlapping segments,
    so a perfectly periodic frame peaks at ~1 regardless of amplitude.
    """
    n_frames, frame_len = frames.shape
    lags = np.arange(lag_min, lag_max + 1)
    corr = np.zeros((n_frames, lags.size))
    for j, tau in enumerate(lags):
        a = frames[:, : frame_len - tau]
        b = frames[:, tau:]
        num = np.einsum("ij,ij->i", a, b)
        denom = np.sqrt(np.einsum("ij,ij->i", a, a) * np.einsum("ij,ij->i", b, b))
        np.divide(num, denom, out=corr[:, j], where=denom > 1e-12)
    peak = corr.max(axis=1)
    # Periodic frames also peak at lag multiples; take the smallest lag within
    # tolerance of the global peak so octave-down errors cannot occur.
    near_peak = corr >= np.maximum(0.995 * peak, 1e-12)[:, None]
    best = np.argmax(near_peak, axis=1)
    return peak, lags[best]


def prosody(clip: AudioClip, cfg: FrameConfig = FrameConfig()) -> FeatureMatrix:
    """Per-frame (interpolated log-F0, voicing flag, zero-crossing rate, log energy).

    F0 comes from the autocorrelation peak in the 50-400 Hz lag band; frames
    whose normalized peak falls below VOICING_THRESHOLD are unvoiced and get
    log-F0 linearly interpolated from voiced neighbours (zero if the whole
    clip is unvoiced).
    """
    frames = _frames(clip, cfg)
    n_frames, frame_len = frames.shape

    lag_min = int(round(clip.sample_rate_hz / F0_MAX_HZ))
    lag_max = min(int(round(clip.sample_rate_hz / F0_MIN_HZ)), frame_len - 1)
    peak, peak_lag = _frame_autocorr_peak(frames, lag_min, lag_max)
    voiced = peak >= VOICING_THRESHOLD

    log_f0 = np.zeros(n_frames)
    if np.any(voiced):
        voiced_idx = np.flatnonzero(voiced)
        voiced_logf0 = np.log(clip.sample_rate_hz / peak_lag[voiced_idx].astype(np.float64))
        log_f0 = np.interp(np.arange(n_frames), voiced_idx, voiced_logf0)

    signs = frames[:, :-1] * frames[:, 1:] < 0
    zcr = signs.sum(axis=1) / (frame_len - 1)
    log_energy = np.log(np.einsum("ij,ij->i", frames, frames) + LOG_EPS)

    feats = np.stack([log_f0, voiced.astype(np.float64), zcr, log_energy], axis=1)
    return FeatureMatrix(
        kind="prosody",
        frames=feats,
        frame_hop_samples=cfg.hop_samples,
        frame_len_samples=cfg.frame_len_samples,
    )


def extract_features(clip: AudioClip, kind: str, cfg: FrameConfig = FrameConfig()) -> FeatureMatrix:
    """Dispatch to the named feature extractor."""
    extractors = {
        "mel": mel_spectrogram,
        "lps": log_power_spectrum,
        "mfcc": mfcc,
        "prosody": prosody,
    }
    if kind not in extractors:
        raise ValueError(f"unknown feature kind {kind!r}; expected one of {FEATURE_KINDS}")
    return extractors[kind](clip, cfg)


def rms(clip: AudioClip) -> float:
    """Root-mean-square amplitude."""
    return float(np.sqrt(np.mean(clip.samples**2)))


def write_feature_file(path, features: FeatureMatrix) -> None:
    """Binary feature matrix: 16-byte header (magic 'FEAT', kind byte, 3 pad
    bytes, T and F as little-endian int32) then T*F little-endian float32
    values, row-major."""
    t, f = features.frames.shape
    header = struct.pack("<4sB3xii", _FEATURE_MAGIC, _KIND_BYTES[features.kind], t, f)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(features.frames.astype("<f4").tobytes())


def read_feature_file(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError(f"{path}: truncated feature header")
        magic, kind_byte, t, f = struct.unpack("<4sB3xii", header)
        if magic != _FEATURE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if kind_byte not in _BYTE_KINDS:
            raise ValueError(f"{path}: unknown kind byte {kind_byte}")
        data = np.frombuffer(fh.read(4 * t * f), dtype="<f4").reshape(t, f)
    # The container does not carry framing metadata; files are written with
    # the defaults, which are assumed on read.
    defaults = FrameConfig()
    return FeatureMatrix(
        kind=_BYTE_KINDS[kind_byte],
        frames=data.astype(np.float64),
        frame_hop_samples=defaults.hop_samples,
        frame_len_samples=defaults.frame_len_samples,
    )
