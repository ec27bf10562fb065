"""Pre-training corpus construction: clean/noise mixing at controlled SNRs,
the three supervised noise labels (spectral-energy region, noise category,
SNR class), and JSONL manifest I/O.

Noise files carry their source tag in the filename as ``<Tag>__<anything>.wav``;
the tag is looked up in a fixed category table. Every record stores its own
RNG seed, so mixtures are reproducible sample-for-sample from the manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dsp
from .dsp import AudioClip, FrameConfig

PEAK_CEILING = 0.999

ENERGY_CLASSES = ("low", "mid", "high", "clean")
CATEGORY_NAMES = (
    "human",
    "source_ambiguous",
    "animal",
    "sounds_of_things",
    "music",
    "natural",
    "background",
    "clean",
)
CLEAN_ENERGY_CLASS = 3
CLEAN_CATEGORY_CLASS = 7
CLEAN_SNR_CLASS = 5


class CorpusError(Exception):
    """Base class for corpus-construction failures."""


class SilentSignalError(CorpusError):
    """SNR is undefined for an all-zero clean or noise signal."""


class UnmappedCategoryError(CorpusError):
    """Noise tag has no entry in the category table."""


class ManifestError(CorpusError):
    """Malformed or inconsistent manifest content."""


class SnrCondition(Enum):
    MINUS_5_DB = "minus5db"
    ZERO_DB = "0db"
    PLUS_5_DB = "plus5db"
    PLUS_10_DB = "plus10db"
    PLUS_15_DB = "plus15db"
    CLEAN = "clean"

    @property
    def is_clean(self) -> bool:
        return self is SnrCondition.CLEAN

    @property
    def db(self) -> float:
        if self.is_clean:
            raise ValueError("clean condition has no SNR value")
        return _SNR_DB[self]


_SNR_DB = {
    SnrCondition.MINUS_5_DB: -5.0,
    SnrCondition.ZERO_DB: 0.0,
    SnrCondition.PLUS_5_DB: 5.0,
    SnrCondition.PLUS_10_DB: 10.0,
    SnrCondition.PLUS_15_DB: 15.0,
}

NOISY_CONDITIONS = tuple(_SNR_DB)


def snr_class(snr: SnrCondition) -> int:
    """Class index: -5 dB -> 0, 0 -> 1, 5 -> 2, 10 -> 3, 15 -> 4, clean -> 5."""
    order = (*NOISY_CONDITIONS, SnrCondition.CLEAN)
    return order.index(snr)


# Noise-source tag -> category, following the AudioSet top-level split
# (human / source-ambiguous / animal / sounds of things / music / natural /
# background). Covers the FSDKaggle2018 label set plus common ambient-noise
# tags; unmapped tags are a hard error, never a silent default.
CATEGORY_TABLE = {
    # human
    "Applause": 0,
    "Burping_or_eructation": 0,
    "Cheering": 0,
    "Clapping": 0,
    "Cough": 0,
    "Crowd": 0,
    "Crying": 0,
    "Fart": 0,
    "Finger_snapping": 0,
    "Laughter": 0,
    "Sneeze": 0,
    "Speech": 0,
    "Whistling": 0,
    "Writing": 0,
    # source-ambiguous
    "Bang": 1,
    "Crackle": 1,
    "Crumpling": 1,
    "Crushing": 1,
    "Rub": 1,
    "Scrape": 1,
    "Scratch": 1,
    "Squeak": 1,
    "Tearing": 1,
    "Thump": 1,
    "Whoosh": 1,
    # animal
    "Bark": 2,
    "Bird": 2,
    "Chirp": 2,
    "Cricket": 2,
    "Crow": 2,
    "Frog": 2,
    "Growling": 2,
    "Howl": 2,
    "Meow": 2,
    "Moo": 2,
    "Oink": 2,
    "Purr": 2,
    # sounds of things
    "Bus": 3,
    "Car": 3,
    "Chime": 3,
    "Clock_tick": 3,
    "Computer_keyboard": 3,
    "Door": 3,
    "Drawer_open_or_close": 3,
    "Engine": 3,
    "Fireworks": 3,
    "Gunshot_or_gunfire": 3,
    "Keys_jangling": 3,
    "Knock": 3,
    "Microwave_oven": 3,
    "Scissors": 3,
    "Shatter": 3,
    "Siren": 3,
    "Telephone": 3,
    "Train": 3,
    "Typewriter": 3,
    "Vacuum_cleaner": 3,
    # music
    "Acoustic_guitar": 4,
    "Bass_drum": 4,
    "Cello": 4,
    "Clarinet": 4,
    "Cowbell": 4,
    "Double_bass": 4,
    "Electric_piano": 4,
    "Flute": 4,
    "Glockenspiel": 4,
    "Gong": 4,
    "Harmonica": 4,
    "Hi-hat": 4,
    "Oboe": 4,
    "Piano": 4,
    "Saxophone": 4,
    "Snare_drum": 4,
    "Tambourine": 4,
    "Trumpet": 4,
    "Violin_or_fiddle": 4,
    # natural
    "Fire": 5,
    "Ocean": 5,
    "Rain": 5,
    "Raindrop": 5,
    "Stream": 5,
    "Thunder": 5,
    "Thunderstorm": 5,
    "Waterfall": 5,
    "Waves": 5,
    "Wind": 5,
    # background / channel / environment
    "Babble": 6,
    "Background_noise": 6,
    "Cafeteria": 6,
    "Factory_noise": 6,
    "Hum": 6,
    "Office_noise": 6,
    "Pink_noise": 6,
    "Static": 6,
    "Station": 6,
    "Street_noise": 6,
    "White_noise": 6,
}


def category_class(noise_tag: str) -> int:
    """Look the tag up in the fixed category table; unmapped tags raise."""
    try:
        return CATEGORY_TABLE[noise_tag]
    except KeyError:
        raise UnmappedCategoryError(
            f"noise tag {noise_tag!r} is not in the category table"
        ) from None


def noise_tag_of(path) -> str:
    """Tag encoded in a noise filename, the stem up to the first '__'."""
    return Path(path).stem.split("__")[0]


@dataclass(frozen=True)
class NoiseLabels:
    energy_class: int
    category_class: int
    snr_class: int

    def __post_init__(self):
        if self.energy_class not in range(4):
            raise ManifestError(f"energy_class {self.energy_class} out of range")
        if self.category_class not in range(8):
            raise ManifestError(f"category_class {self.category_class} out of range")
        if self.snr_class not in range(6):
            raise ManifestError(f"snr_class {self.snr_class} out of range")
        clean_flags = (
            self.energy_class == CLEAN_ENERGY_CLASS,
            self.category_class == CLEAN_CATEGORY_CLASS,
            self.snr_class == CLEAN_SNR_CLASS,
        )
        if any(clean_flags) and not all(clean_flags):
            raise ManifestError(f"inconsistent clean/noisy labels: {self}")

    @property
    def is_clean(self) -> bool:
        return self.snr_class == CLEAN_SNR_CLASS


CLEAN_LABELS = NoiseLabels(CLEAN_ENERGY_CLASS, CLEAN_CATEGORY_CLASS, CLEAN_SNR_CLASS)


@dataclass(frozen=True)
class MixtureRecord:
    id: str
    clean_path: str
    noise_path: Optional[str]
    snr: SnrCondition
    labels: NoiseLabels
    seed: int
    split: str

    def __post_init__(self):
        if (self.noise_path is None) != self.snr.is_clean:
            raise ManifestError(
                f"record {self.id}: noise_path must be absent exactly when snr is clean"
            )
        if self.snr.is_clean != self.labels.is_clean:
            raise ManifestError(f"record {self.id}: labels inconsistent with snr condition")
        if self.labels.snr_class != snr_class(self.snr):
            raise ManifestError(f"record {self.id}: snr_class does not match snr condition")
        if self.split not in ("train", "eval"):
            raise ManifestError(f"record {self.id}: bad split {self.split!r}")
        if not 0 <= self.seed < 2**64:
            raise ManifestError(f"record {self.id}: seed out of uint64 range")

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "clean_path": self.clean_path,
                "noise_path": self.noise_path,
                "snr": self.snr.value,
                "labels": {
                    "energy_class": self.labels.energy_class,
                    "category_class": self.labels.category_class,
                    "snr_class": self.labels.snr_class,
                },
                "seed": self.seed,
                "split": self.split,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "MixtureRecord":
        try:
            obj = json.loads(line)
            return MixtureRecord(
                id=obj["id"],
                clean_path=obj["clean_path"],
                noise_path=obj["noise_path"],
                snr=SnrCondition(obj["snr"]),
                labels=NoiseLabels(**obj["labels"]),
                seed=obj["seed"],
                split=obj["split"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"bad manifest line: {exc}") from exc


def write_manifest(path, records: Sequence[MixtureRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_manifest(path) -> list[MixtureRecord]:
    with open(path, encoding="utf-8") as fh:
        return [MixtureRecord.from_json(line) for line in fh if line.strip()]


def noise_gain_for_snr(clean: AudioClip, noise: AudioClip, snr_db: float) -> float:
    """Gain g with 20*log10(rms(clean) / (g*rms(noise))) == snr_db."""
    rms_clean = dsp.rms(clean)
    rms_noise = dsp.rms(noise)
    if rms_clean == 0.0:
        raise SilentSignalError("clean signal is silent; SNR undefined")
    if rms_noise == 0.0:
        raise SilentSignalError("noise signal is silent; SNR undefined")
    return (rms_clean / rms_noise) * 10.0 ** (-snr_db / 20.0)


def _fit_noise(noise: np.ndarray, target_len: int, rng: np.random.Generator) -> np.ndarray:
    """Crop (random offset) or loop the noise to the target length."""
    n = noise.shape[0]
    if n >= target_len:
        offset = int(rng.integers(0, n - target_len + 1))
        return noise[offset : offset + target_len]
    offset = int(rng.integers(0, n))
    reps = int(np.ceil((offset + target_len) / n))
    return np.tile(noise, reps)[offset : offset + target_len]


def mix(
    clean: AudioClip,
    noise: Optional[AudioClip],
    snr: SnrCondition,
    seed: int,
) -> tuple[AudioClip, AudioClip]:
    """Mix noise into clean at the requested SNR.

    Returns (noisy, noise_component). The noise is cropped or looped to the
    clean length at a seed-determined offset, scaled to hit the SNR exactly,
    and added; if the sum peaks above PEAK_CEILING both components are scaled
    down by the same factor, which preserves the SNR. A clean condition
    returns the (possibly peak-normalized) clean signal and a zero component.
    """
    if snr.is_clean:
        peak = float(np.max(np.abs(clean.samples)))
        scale = PEAK_CEILING / peak if peak > PEAK_CEILING else 1.0
        return AudioClip(clean.samples * scale), AudioClip(np.zeros(len(clean)))
    if noise is None:
        raise CorpusError("noisy condition requires a noise clip")
    rng = np.random.default_rng(seed)
    segment = _fit_noise(noise.samples, len(clean), rng)
    gain = noise_gain_for_snr(clean, AudioClip(segment), snr.db)
    scaled_noise = gain * segment
    noisy = clean.samples + scaled_noise
    peak = float(np.max(np.abs(noisy)))
    scale = PEAK_CEILING / peak if peak > PEAK_CEILING else 1.0
    return AudioClip(noisy * scale), AudioClip(scaled_noise * scale)


def band_edges_hz() -> tuple[float, float]:
    """Uniform three-way split of [0, Nyquist]."""
    return dsp.NYQUIST_HZ / 3.0, 2.0 * dsp.NYQUIST_HZ / 3.0


def band_of_bin(k: int, n_fft: int) -> int:
    """Band index of FFT bin k by its center frequency; ties to the lower band."""
    freq = k * dsp.SAMPLE_RATE_HZ / n_fft
    lo, hi = band_edges_hz()
    if freq <= lo:
        return 0
    if freq <= hi:
        return 1
    return 2


def spectral_energy_class(noise_component: AudioClip, cfg: FrameConfig = FrameConfig()) -> int:
    """Index of the uniform frequency band holding the most STFT power.

    Power is summed over all frames, then over the bins of each of three
    uniform bands spanning [0, 8 kHz]. Ties break toward the lower band.
    """
    if dsp.rms(noise_component) == 0.0:
        raise SilentSignalError("spectral energy class undefined for a silent signal")
    power = dsp.stft_power(noise_component, cfg).sum(axis=0)
    bands = np.array([band_of_bin(k, cfg.n_fft) for k in range(cfg.n_bins)])
    band_energy = np.array([power[bands == b].sum() for b in range(3)])
    return int(np.argmax(band_energy))


def labels_for_mixture(
    clean: AudioClip,
    noise: Optional[AudioClip],
    snr: SnrCondition,
    seed: int,
    noise_tag: Optional[str],
    cfg: FrameConfig = FrameConfig(),
) -> NoiseLabels:
    """Compute the three supervised labels for one prospective mixture."""
    if snr.is_clean:
        return CLEAN_LABELS
    _, noise_component = mix(clean, noise, snr, seed)
    return NoiseLabels(
        energy_class=spectral_energy_class(noise_component, cfg),
        category_class=category_class(noise_tag),
        snr_class=snr_class(snr),
    )


def _list_wavs(directory) -> list[Path]:
    paths = sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise CorpusError(f"no .wav files in {directory}")
    return paths


def build_manifest(
    clean_dir,
    noise_dir,
    n_records: int,
    clean_fraction: float,
    seed: int,
    eval_fraction: float = 0.2,
) -> list[MixtureRecord]:
    """Draw a balanced mixture manifest.

    Noisy records are spread uniformly over the five SNR conditions (counts
    differ by at most one); clean records make up round(clean_fraction * n).
    Everything, including each record's private seed, derives from the master
    seed, so identical inputs give identical manifests.
    """
    if not 0 <= clean_fraction < 1:
        raise CorpusError(f"clean_fraction must be in [0, 1), got {clean_fraction}")
    clean_paths = _list_wavs(clean_dir)
    noise_paths = _list_wavs(noise_dir)
    rng = np.random.default_rng(seed)

    n_clean = round(clean_fraction * n_records)
    n_noisy = n_records - n_clean
    base, extra = divmod(n_noisy, len(NOISY_CONDITIONS))
    conditions: list[SnrCondition] = []
    for i, cond in enumerate(NOISY_CONDITIONS):
        conditions.extend([cond] * (base + (1 if i < extra else 0)))
    conditions.extend([SnrCondition.CLEAN] * n_clean)
    rng.shuffle(conditions)

    clips_cache: dict[Path, AudioClip] = {}

    def cached(path: Path) -> AudioClip:
        if path not in clips_cache:
            clips_cache[path] = dsp.load_wav(path)
        return clips_cache[path]

    eval_stride = round(1 / eval_fraction) if eval_fraction > 0 else 0
    records = []
    for i, cond in enumerate(conditions):
        clean_path = clean_paths[int(rng.integers(0, len(clean_paths)))]
        record_seed = int(rng.integers(0, 2**63))
        split = "eval" if eval_stride and i % eval_stride == 0 else "train"
        if cond.is_clean:
            noise_path = None
            labels = CLEAN_LABELS
        else:
            noise_path = noise_paths[int(rng.integers(0, len(noise_paths)))]
            labels = labels_for_mixture(
                cached(clean_path),
                cached(noise_path),
                cond,
                record_seed,
                noise_tag_of(noise_path),
            )
        records.append(
            MixtureRecord(
                id=f"rec-{i:06d}",
                clean_path=str(clean_path),
                noise_path=None if noise_path is None else str(noise_path),
                snr=cond,
                labels=labels,
                seed=record_seed,
                split=split,
            )
        )
    return records


def realize_mixture(record: MixtureRecord, root: Optional[Path] = None) -> tuple[AudioClip, AudioClip]:
    """Materialize (noisy, noise_component) for a manifest record."""
    clean = dsp.load_wav(_resolve(record.clean_path, root))
    noise = None if record.noise_path is None else dsp.load_wav(_resolve(record.noise_path, root))
    return mix(clean, noise, record.snr, record.seed)


def _resolve(path_str: str, root: Optional[Path]) -> Path:
    path = Path(path_str)
    if root is not None and not path.is_absolute():
        return root / path
    return path


# ---------------------------------------------------------------------------
# Synthetic desk-scale corpus
# ---------------------------------------------------------------------------

TOY_DURATION_S = 1.0
TOY_SPEAKERS = 8
TOY_UTTS_PER_SPEAKER = 3
TOY_NOISE_FILES_PER_TAG = 3
# One representative tag per category, each with a distinct spectral home so
# all three band labels occur and the categories stay separable.
TOY_NOISE_TAGS = (
    "Laughter",        # human: AM harmonic bursts, low band
    "Squeak",          # source-ambiguous: FM tone ~3.5 kHz, mid band
    "Bark",            # animal: noise bursts 0.6-1.4 kHz, low band
    "Telephone",       # sounds of things: pulsed dual tone ~3 kHz, mid band
    "Acoustic_guitar", # music: decaying harmonic plucks, low band
    "Wind",            # natural: low-passed noise, low band
    "Static",          # background: high-passed noise, high band
)
_NOISE_FLOOR = 3e-3  # keeps every crop non-silent so SNR stays defined


def _smooth_noise(rng, n, cutoff_frames=20):
    """Slowly varying positive envelope in roughly [0.3, 1]."""
    coarse = rng.uniform(0.3, 1.0, max(2, n // (dsp.SAMPLE_RATE_HZ // cutoff_frames)))
    return np.interp(np.linspace(0, 1, n), np.linspace(0, 1, coarse.size), coarse)


def _bandpass_noise(rng, n, low_hz, high_hz):
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / dsp.SAMPLE_RATE_HZ)
    spectrum[(freqs < low_hz) | (freqs > high_hz)] = 0.0
    return np.fft.irfft(spectrum, n)


def _normalize(x, peak=0.5):
    m = np.max(np.abs(x))
    return x * (peak / m) if m > 0 else x


def synth_speech(rng: np.random.Generator, n: int, f0_base: float) -> np.ndarray:
    """Harmonic tone complex with F0 drift, formant coloring, and a syllabic
    amplitude envelope; a faint noise floor keeps spectra off the log floor."""
    f0 = f0_base * (1.0 + 0.15 * np.interp(
        np.arange(n), np.linspace(0, n, 8), rng.uniform(-1, 1, 8)
    ))
    phase = 2 * np.pi * np.cumsum(f0) / dsp.SAMPLE_RATE_HZ
    formants = rng.uniform([300, 1000], [900, 2600])
    wave = np.zeros(n)
    for h in range(1, 13):
        fh = f0_base * h
        if fh > 3800:
            break
        resonance = sum(np.exp(-0.5 * ((fh - fc) / 250.0) ** 2) for fc in formants)
        wave += (1.0 / h + resonance) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    syllabic = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.5, 5.0) * np.arange(n) / dsp.SAMPLE_RATE_HZ)
    wave *= syllabic * _smooth_noise(rng, n)
    wave += 0.004 * rng.standard_normal(n)
    return _normalize(wave)


def synth_noise(rng: np.random.Generator, tag: str, n: int) -> np.ndarray:
    """One synthetic noise clip of the family named by the tag."""
    t = np.arange(n) / dsp.SAMPLE_RATE_HZ
    if tag == "Laughter":
        f0 = rng.uniform(220, 300)
        burst = 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * rng.uniform(3.5, 5.5) * t))
        wave = sum(np.sin(2 * np.pi * f0 * h * t) / h for h in range(1, 8)) * burst
    elif tag == "Squeak":
        center = rng.uniform(2900, 4100)
        vibrato = 150 * np.sin(2 * np.pi * rng.uniform(4, 8) * t)
        phase = 2 * np.pi * np.cumsum(center + vibrato) / dsp.SAMPLE_RATE_HZ
        wave = np.sin(phase) * _smooth_noise(rng, n)
    elif tag == "Bark":
        wave = _bandpass_noise(rng, n, 600, 1400)
        rate = rng.uniform(2.0, 4.0)
        envelope = np.exp(-8.0 * ((t * rate) % 1.0))
        wave *= envelope
    elif tag == "Telephone":
        f_lo, f_hi = rng.uniform(2700, 3000), rng.uniform(3300, 3700)
        pulses = (np.sin(2 * np.pi * 2.0 * t) > 0).astype(float)
        wave = (np.sin(2 * np.pi * f_lo * t) + np.sin(2 * np.pi * f_hi * t)) * pulses
    elif tag == "Acoustic_guitar":
        wave = np.zeros(n)
        for onset in np.sort(rng.uniform(0, 0.6, 3)):
            f0 = rng.choice([196.0, 247.0, 294.0, 330.0, 392.0])
            start = int(onset * dsp.SAMPLE_RATE_HZ)
            seg_t = t[: n - start]
            note = sum(np.sin(2 * np.pi * f0 * h * seg_t) / h for h in range(1, 9))
            wave[start:] += note * np.exp(-seg_t / 0.3)
    elif tag == "Wind":
        wave = _bandpass_noise(rng, n, 0, 400) * _smooth_noise(rng, n)
    elif tag == "Static":
        wave = _bandpass_noise(rng, n, 5600, 7900)
    else:
        raise CorpusError(f"no synthesizer for noise tag {tag!r}")
    wave = _normalize(wave)
    wave += _NOISE_FLOOR * rng.standard_normal(n)
    return _normalize(wave)


# Pseudo-MOS anchors per SNR class index (0..5); jitter added per example.
_MOS_BY_SNR_CLASS = (1.5, 2.3, 3.0, 3.7, 4.2, 4.7)


def mos_for_record(record: MixtureRecord, rng: np.random.Generator) -> float:
    base = _MOS_BY_SNR_CLASS[record.labels.snr_class]
    return float(np.clip(base + rng.normal(0.0, 0.12), 1.0, 5.0))


def write_mos_manifest(path, entries: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def read_mos_manifest(path) -> list[dict]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if not {"id", "path", "mos"} <= obj.keys():
                raise ManifestError(f"MOS manifest line missing fields: {line!r}")
            entries.append(obj)
    return entries


def synth_toy_corpus(
    out_dir,
    seed: int,
    n_records: int = 250,
    clean_fraction: float = 0.2,
    with_mos: bool = True,
) -> Path:
    """Generate the desk-scale synthetic corpus and return the manifest path.

    Writes clean "speech" (one subdirectory), tagged noise files covering all
    seven categories, the mixture manifest, and (optionally) materialized
    noisy WAVs with pseudo-MOS labels for the downstream stage.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    n_samples = int(TOY_DURATION_S * dsp.SAMPLE_RATE_HZ)

    clean_dir = out_dir / "clean"
    f0_bases = np.linspace(95.0, 260.0, TOY_SPEAKERS)
    for spk in range(TOY_SPEAKERS):
        for utt in range(TOY_UTTS_PER_SPEAKER):
            wave = synth_speech(rng, n_samples, f0_bases[spk])
            dsp.save_wav(clean_dir / f"spk{spk:02d}_utt{utt:03d}.wav", AudioClip(wave))

    noise_dir = out_dir / "noise"
    for tag in TOY_NOISE_TAGS:
        for i in range(TOY_NOISE_FILES_PER_TAG):
            length = int(rng.uniform(0.7, 2.0) * dsp.SAMPLE_RATE_HZ)
            dsp.save_wav(noise_dir / f"{tag}__{i:03d}.wav", AudioClip(synth_noise(rng, tag, length)))

    records = build_manifest(
        clean_dir, noise_dir, n_records, clean_fraction, seed=int(rng.integers(0, 2**31))
    )
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)

    if with_mos:
        mos_dir = out_dir / "mos"
        entries = {"train": [], "eval": []}
        for record in records:
            noisy, _ = realize_mixture(record)
            wav_path = mos_dir / f"{record.id}.wav"
            dsp.save_wav(wav_path, noisy)
            entries[record.split].append(
                {"id": record.id, "path": str(wav_path), "mos": round(mos_for_record(record, rng), 3)}
            )
        write_mos_manifest(out_dir / "mos_train.jsonl", entries["train"])
        write_mos_manifest(out_dir / "mos_eval.jsonl", entries["eval"])

    return manifest_path
