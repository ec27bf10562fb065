import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from napse import dsp
from napse.dsp import (
    AudioClip,
    ChannelCountError,
    EncodingError,
    FrameConfig,
    SampleRateError,
    UnreadableFileError,
    hann_window,
)

FS = 16000
CFG = FrameConfig()


def tone(freq_hz, n_samples=FS, amplitude=1.0, phase=0.0):
    t = np.arange(n_samples) / FS
    return AudioClip(amplitude * np.sin(2 * np.pi * freq_hz * t + phase))


def silence(n_samples=FS):
    return AudioClip(np.zeros(n_samples))


def write_pcm16(path, pcm, rate=FS, channels=1):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(np.asarray(pcm, dtype="<i2").tobytes())


def dft_power_oracle(windowed_frame, n_fft):
    """Brute-force O(N*K) DFT power, independent of np.fft."""
    n = np.arange(len(windowed_frame))
    out = np.empty(n_fft // 2 + 1)
    for k in range(n_fft // 2 + 1):
        basis = np.exp(-2j * np.pi * k * n / n_fft)
        out[k] = abs(np.dot(windowed_frame, basis)) ** 2
    return out


class TestLoadWav:
    def test_silence_roundtrip(self, tmp_path):
        path = tmp_path / "zeros.wav"
        write_pcm16(path, np.zeros(16000, dtype=np.int16))
        clip = dsp.load_wav(path)
        assert len(clip) == 16000
        assert clip.sample_rate_hz == FS
        assert np.all(clip.samples == 0.0)

    def test_linear_scaling(self, tmp_path):
        path = tmp_path / "half.wav"
        write_pcm16(path, np.array([16384, -16384, 32767], dtype=np.int16))
        clip = dsp.load_wav(path)
        assert clip.samples[0] == pytest.approx(0.5)
        assert clip.samples[1] == pytest.approx(-0.5)

    def test_wrong_sample_rate(self, tmp_path):
        path = tmp_path / "8k.wav"
        write_pcm16(path, np.zeros(100, dtype=np.int16), rate=8000)
        with pytest.raises(SampleRateError):
            dsp.load_wav(path)

    def test_multichannel(self, tmp_path):
        path = tmp_path / "stereo.wav"
        write_pcm16(path, np.zeros(200, dtype=np.int16), channels=2)
        with pytest.raises(ChannelCountError):
            dsp.load_wav(path)

    def test_wrong_sample_width(self, tmp_path):
        path = tmp_path / "8bit.wav"
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(1)
            w.setframerate(FS)
            w.writeframes(bytes(100))
        with pytest.raises(EncodingError):
            dsp.load_wav(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(UnreadableFileError):
            dsp.load_wav(tmp_path / "nope.wav")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"this is not a wav file at all, not even close..")
        with pytest.raises(UnreadableFileError):
            dsp.load_wav(path)

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        clip = AudioClip(np.round(rng.uniform(-0.9, 0.9, 5000) * 32768) / 32768)
        path = tmp_path / "rt.wav"
        dsp.save_wav(path, clip)
        back = dsp.load_wav(path)
        np.testing.assert_allclose(back.samples, clip.samples, atol=1 / 32768)


class TestStftPower:
    def test_silence_all_zero(self):
        power = dsp.stft_power(silence(), CFG)
        assert power.shape == (98, 257)
        assert np.all(power == 0.0)

    def test_pure_tone_argmax_bin(self):
        # 1 kHz at 16 kHz with n_fft 512 lands exactly on bin 32.
        power = dsp.stft_power(tone(1000.0), CFG)
        assert np.all(np.argmax(power, axis=1) == 32)

    def test_matches_bruteforce_dft(self):
        rng = np.random.default_rng(3)
        clip = AudioClip(rng.uniform(-1, 1, CFG.frame_len_samples))
        power = dsp.stft_power(clip, CFG)
        oracle = dft_power_oracle(clip.samples * hann_window(CFG.frame_len_samples), CFG.n_fft)
        np.testing.assert_allclose(power[0], oracle, rtol=1e-9, atol=1e-12)

    def test_parseval_per_frame(self):
        rng = np.random.default_rng(11)
        clip = AudioClip(rng.uniform(-1, 1, 4000))
        power = dsp.stft_power(clip, CFG)
        window = hann_window(CFG.frame_len_samples)
        for t in range(power.shape[0]):
            start = t * CFG.hop_samples
            frame = clip.samples[start : start + CFG.frame_len_samples] * window
            # Full-spectrum sum reconstructed from the one-sided bins.
            full = power[t, 0] + power[t, -1] + 2 * power[t, 1:-1].sum()
            assert full == pytest.approx(CFG.n_fft * np.sum(frame**2), rel=1e-6)

    def test_too_short_clip(self):
        with pytest.raises(dsp.ClipTooShortError):
            dsp.stft_power(AudioClip(np.zeros(399)), CFG)


class TestLogPowerSpectrum:
    def test_silence_hits_floor(self):
        lps = dsp.log_power_spectrum(silence(), CFG)
        assert lps.kind == "lps"
        assert np.all(lps.frames == math.log(1e-10))

    def test_shape(self):
        assert dsp.log_power_spectrum(silence(), CFG).frames.shape == (98, 257)

    def test_scaling_adds_log4(self):
        clip = tone(1000.0, amplitude=0.4)
        doubled = AudioClip(clip.samples * 2)
        a = dsp.log_power_spectrum(clip, CFG).frames
        b = dsp.log_power_spectrum(doubled, CFG).frames
        power = dsp.stft_power(clip, CFG)
        above_floor = power > 1e-2  # bins where the +eps floor is negligible
        np.testing.assert_allclose(
            (b - a)[above_floor], math.log(4), rtol=1e-6
        )


class TestMelSpectrogram:
    def test_silence_hits_floor(self):
        mel = dsp.mel_spectrogram(silence(), CFG)
        assert mel.kind == "mel"
        assert mel.frames.shape == (98, CFG.n_mels)
        assert np.all(mel.frames == math.log(1e-10))

    def test_filterbank_rows_positive(self):
        fb = dsp.mel_filterbank(CFG)
        assert fb.shape == (CFG.n_mels, CFG.n_bins)
        assert np.all(fb >= 0.0)
        assert np.all(fb.sum(axis=1) > 0.0)

    def test_low_tone_concentrates_low_channels(self):
        # Oracle: apply the filterbank to the whole-clip mean power spectrum.
        clip = tone(100.0)
        power = dsp.stft_power(clip, CFG).mean(axis=0)
        oracle_channel = int(np.argmax(dsp.mel_filterbank(CFG) @ power))
        mel = dsp.mel_spectrogram(clip, CFG)
        got = int(np.argmax(mel.frames.mean(axis=0)))
        assert got == oracle_channel
        assert got < CFG.n_mels // 4


class TestMfcc:
    def test_silence_is_dct_of_constant(self):
        out = dsp.mfcc(silence(), CFG)
        assert out.kind == "mfcc"
        # Orthonormal DCT-II of a constant vector c: coeff0 = c*sqrt(n), rest 0.
        expected_c0 = math.log(1e-10) * math.sqrt(CFG.n_mels)
        np.testing.assert_allclose(out.frames[:, 0], expected_c0, rtol=1e-12)
        np.testing.assert_allclose(out.frames[:, 1:], 0.0, atol=1e-9)

    def test_identical_frames_identical_rows(self):
        period = FS // 200
        clip = AudioClip(np.tile(np.sin(2 * np.pi * np.arange(period) / period), 50))
        out = dsp.mfcc(clip, CFG).frames
        # hop (160) is a multiple of the 80-sample period: all frames identical.
        np.testing.assert_array_equal(out[0], out[1])

    def test_shape(self):
        assert dsp.mfcc(tone(440.0), CFG).frames.shape == (98, 20)

    def test_composability_with_mel(self):
        from scipy.fft import dct

        clip = tone(350.0, n_samples=3200)
        mel = dsp.mel_spectrogram(clip, CFG)
        expected = dct(mel.frames, type=2, norm="ortho", axis=1)[:, : CFG.n_mfcc]
        np.testing.assert_array_equal(dsp.mfcc(clip, CFG).frames, expected)


class TestProsody:
    def test_tone_pitch_and_voicing(self):
        out = dsp.prosody(tone(200.0), CFG).frames
        assert out.shape[1] == 4
        np.testing.assert_allclose(out[:, 0], math.log(200.0), rtol=0.02)
        assert np.all(out[:, 1] == 1.0)

    def test_silence(self):
        out = dsp.prosody(silence(), CFG).frames
        assert np.all(out[:, 0] == 0.0)  # fully unvoiced -> log-F0 0
        assert np.all(out[:, 1] == 0.0)
        assert np.all(out[:, 2] == 0.0)
        np.testing.assert_allclose(out[:, 3], math.log(1e-10))

    def test_white_noise_mostly_unvoiced(self):
        rng = np.random.default_rng(1234)
        clip = AudioClip(rng.uniform(-0.8, 0.8, FS))
        out = dsp.prosody(clip, CFG).frames
        assert np.mean(out[:, 1] == 0.0) >= 0.8

    def test_zcr_of_square_wave(self):
        # 400 Hz square wave: one sign flip every 20 samples -> ZCR ~ 0.05.
        t = np.arange(FS) / FS
        clip = AudioClip(np.sign(np.sin(2 * np.pi * 400 * t)) * 0.5)
        out = dsp.prosody(clip, CFG).frames
        np.testing.assert_allclose(out[:, 2], 0.05, atol=0.01)


class TestRms:
    def test_constant(self):
        assert dsp.rms(AudioClip(np.full(100, 0.5))) == pytest.approx(0.5)

    def test_silence(self):
        assert dsp.rms(silence(100)) == 0.0

    def test_unit_sine_whole_periods(self):
        clip = tone(100.0, n_samples=FS)  # 100 whole periods
        assert dsp.rms(clip) == pytest.approx(1 / math.sqrt(2), abs=1e-6)


class TestInvariantsAndProperties:
    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(5)
        clip = AudioClip(rng.uniform(-1, 1, 6400))
        for fn in (dsp.log_power_spectrum, dsp.mel_spectrogram, dsp.mfcc, dsp.prosody):
            a = fn(clip, CFG).frames
            b = fn(clip, CFG).frames
            np.testing.assert_array_equal(a, b)

    @given(st.integers(min_value=400, max_value=20000))
    @settings(max_examples=25, deadline=None)
    def test_frame_count_formula(self, n):
        clip = AudioClip(np.ones(n) * 0.1)
        expected = 1 + (n - CFG.frame_len_samples) // CFG.hop_samples
        assert dsp.stft_power(clip, CFG).shape[0] == expected
        assert dsp.prosody(clip, CFG).frames.shape[0] == expected

    def test_no_nan_inf_on_random_input(self):
        rng = np.random.default_rng(17)
        for scale in (1e-8, 1.0):
            clip = AudioClip(rng.uniform(-1, 1, 2000) * scale)
            for fn in (dsp.log_power_spectrum, dsp.mel_spectrogram, dsp.mfcc, dsp.prosody):
                assert np.all(np.isfinite(fn(clip, CFG).frames))

    def test_clip_validation(self):
        with pytest.raises(dsp.EmptyClipError):
            AudioClip(np.array([]))
        with pytest.raises(dsp.AudioError):
            AudioClip(np.array([0.0, np.nan]))
        with pytest.raises(SampleRateError):
            AudioClip(np.zeros(10), sample_rate_hz=8000)


class TestFeatureFile:
    def test_roundtrip(self, tmp_path):
        clip = tone(440.0, n_samples=3200)
        feats = dsp.mfcc(clip, CFG)
        path = tmp_path / "out.feat"
        dsp.write_feature_file(path, feats)
        assert path.stat().st_size == 16 + 4 * feats.frames.size
        back = dsp.read_feature_file(path)
        assert back.kind == "mfcc"
        np.testing.assert_allclose(back.frames, feats.frames, atol=1e-6)

    def test_header_layout(self, tmp_path):
        feats = dsp.log_power_spectrum(tone(500.0, n_samples=800), CFG)
        path = tmp_path / "h.feat"
        dsp.write_feature_file(path, feats)
        raw = path.read_bytes()
        assert raw[:4] == b"FEAT"
        assert raw[4] == 1  # lps kind byte
        t = int.from_bytes(raw[8:12], "little")
        f = int.from_bytes(raw[12:16], "little")
        assert (t, f) == feats.frames.shape
