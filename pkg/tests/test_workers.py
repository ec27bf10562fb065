import math

import numpy as np
import pytest
import torch

from napse import workers
from napse.dsp import AudioClip, FeatureMatrix, FrameConfig
from napse.encoders import LatentSequence
from napse.workers import (
    ALL_WORKERS,
    NOISE_CLASS_COUNTS,
    AlignmentError,
    PairSamplingError,
    SingleSpeakerError,
    WorkerError,
    WorkerHead,
    build_worker_heads,
    binary_info_loss,
    noise_worker_logits,
    noise_worker_loss,
    regression_worker_loss,
    sample_gim_pair,
    sample_lim_pair,
    sample_spc_pair,
)

D = 16  # small latent dim for tests


def latent(t=30, d=D, seed=0):
    rng = np.random.default_rng(seed)
    return LatentSequence(frames=rng.normal(size=(t, d)), hop_samples=160)


def head_for(name, latent_dim=D):
    torch.manual_seed(0)
    return WorkerHead(name, latent_dim)


class TestHeadConstruction:
    def test_all_heads_hidden_256(self):
        heads = build_worker_heads(D)
        assert set(heads.keys()) == set(ALL_WORKERS)
        for head in heads.values():
            assert head.net[0].out_features == 256
            assert head.net[2].in_features == 256

    def test_output_dims(self):
        cfg = FrameConfig()
        expected = {
            "waveform": 160, "lps": 257, "mfcc": 20, "prosody": 4,
            "lim": 1, "gim": 1, "spc": 1, "energy": 4, "category": 8, "snr": 6,
        }
        for name, dim in expected.items():
            assert workers.worker_output_dim(name, cfg) == dim

    def test_pair_heads_take_concatenated_input(self):
        for name in ("lim", "gim", "spc"):
            assert head_for(name).in_dim == 2 * D

    def test_unknown_worker(self):
        with pytest.raises(WorkerError):
            build_worker_heads(D, names=("waveform", "bogus"))


class TestRegressionLoss:
    def test_perfect_prediction_zero(self):
        head = head_for("prosody")
        lat = latent(t=10)
        with torch.no_grad():
            pred = head(torch.as_tensor(lat.frames, dtype=torch.float32)).numpy()
        target = FeatureMatrix("prosody", pred, 160, 400)
        assert regression_worker_loss("prosody", lat, target, head) == pytest.approx(0.0, abs=1e-12)

    def test_constant_target_mse(self):
        # Zero-weight head predicts 0 everywhere; constant target c gives c^2.
        head = head_for("mfcc")
        with torch.no_grad():
            for p in head.parameters():
                p.zero_()
        lat = latent(t=8)
        target = FeatureMatrix("mfcc", np.full((8, 20), 3.0), 160, 400)
        assert regression_worker_loss("mfcc", lat, target, head) == pytest.approx(9.0)

    def test_waveform_l1(self):
        head = head_for("waveform")
        with torch.no_grad():
            for p in head.parameters():
                p.zero_()
        lat = latent(t=5)
        clip = AudioClip(np.full(5 * 160, 0.5))
        assert regression_worker_loss("waveform", lat, clip, head) == pytest.approx(0.5)

    def test_trim_within_tolerance(self):
        head = head_for("lps")
        lat = latent(t=100)
        target = FeatureMatrix("lps", np.zeros((98, 257)), 160, 400)
        regression_worker_loss("lps", lat, target, head)  # no error

    def test_gross_misalignment(self):
        head = head_for("lps")
        lat = latent(t=100)
        target = FeatureMatrix("lps", np.zeros((90, 257)), 160, 400)
        with pytest.raises(AlignmentError):
            regression_worker_loss("lps", lat, target, head)


class TestBinaryInfoLoss:
    def _const_logit_head(self, value):
        head = head_for("lim")
        with torch.no_grad():
            for p in head.parameters():
                p.zero_()
            head.net[2].bias.fill_(value)
        return head

    def test_saturated_correct(self):
        # +30 on the positive pair, -30 on the negative: loss ~ 0.
        head = head_for("lim")
        pos_logit, neg_logit = 30.0, -30.0
        loss = 0.5 * (math.log1p(math.exp(-pos_logit)) + math.log1p(math.exp(neg_logit)))
        assert loss < 1e-9
        # Same numbers through the module path, via a head pinned to +30 and
        # the BCE identity loss(pos)=softplus(-z), loss(neg)=softplus(z).
        head30 = self._const_logit_head(30.0)
        pair = np.zeros(2 * D)
        out = binary_info_loss(head30, pair, pair)
        expected = 0.5 * (math.log1p(math.exp(-30.0)) + 30.0 + math.log1p(math.exp(-30.0)))
        assert out == pytest.approx(expected, rel=1e-5)

    def test_uniform_uncertainty_ln2(self):
        head = self._const_logit_head(0.0)
        pair = np.zeros(2 * D)
        assert binary_info_loss(head, pair, pair) == pytest.approx(math.log(2), rel=1e-6)

    def test_saturated_wrong_is_large(self):
        head = self._const_logit_head(-30.0)
        pair = np.zeros(2 * D)
        # Positive pair scored -30: BCE term ~ 30; negative term ~ 0; mean ~ 15.
        assert binary_info_loss(head, pair, pair) == pytest.approx(15.0, rel=1e-5)

    def test_dimension_mismatch(self):
        head = head_for("gim")
        with pytest.raises(WorkerError):
            binary_info_loss(head, np.zeros(D), np.zeros(D))


class TestNoiseWorkers:
    def test_logit_dimensions(self):
        lat = latent()
        for name, n_classes in NOISE_CLASS_COUNTS.items():
            logits = noise_worker_logits(name, lat, head_for(name))
            assert logits.shape == (n_classes,)

    def test_mean_pool_invariant_to_frame_duplication(self):
        lat = latent(t=12)
        doubled = LatentSequence(np.repeat(lat.frames, 2, axis=0), hop_samples=160)
        head = head_for("snr")
        a = noise_worker_logits("snr", lat, head)
        b = noise_worker_logits("snr", doubled, head)
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_deterministic(self):
        lat = latent()
        head = head_for("category")
        np.testing.assert_array_equal(
            noise_worker_logits("category", lat, head),
            noise_worker_logits("category", lat, head),
        )

    def test_uniform_logits_cross_entropy(self):
        for n in (4, 6, 8):
            assert noise_worker_loss(np.zeros(n), 0) == pytest.approx(math.log(n), abs=1e-9)

    def test_saturated_correct(self):
        logits = np.array([40.0, 0.0, 0.0, 0.0])
        assert noise_worker_loss(logits, 0) < 1e-9

    def test_matches_logsumexp_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = int(rng.integers(2, 9))
            logits = rng.normal(scale=3.0, size=n)
            label = int(rng.integers(0, n))
            oracle = -np.log(np.exp(logits)[label] / np.exp(logits).sum())
            assert noise_worker_loss(logits, label) == pytest.approx(oracle, abs=1e-9)

    def test_label_out_of_range(self):
        with pytest.raises(WorkerError):
            noise_worker_loss(np.zeros(4), 4)


class TestPairSampling:
    def _batch(self, speakers=("a", "a", "b"), t=40):
        return [latent(t=t, seed=i) for i in range(len(speakers))], list(speakers)

    @staticmethod
    def _utterance_of(frame, latents):
        for i, lat in enumerate(latents):
            if (lat.frames == frame).all(axis=1).any():
                return i
        raise AssertionError("frame not found in any utterance")

    def test_lim_negative_speaker_differs(self):
        latents, speakers = self._batch()
        for seed in range(25):
            anchor, pos, neg = sample_lim_pair(latents, speakers, seed)
            assert anchor.shape == (D,)
            anchor_spk = speakers[self._utterance_of(anchor, latents)]
            pos_spk = speakers[self._utterance_of(pos, latents)]
            neg_spk = speakers[self._utterance_of(neg, latents)]
            assert pos_spk == anchor_spk
            assert neg_spk != anchor_spk

    def test_lim_anchor_differs_from_positive_same_utt(self):
        latents, speakers = self._batch(speakers=("a", "b"))
        for seed in range(25):
            anchor, pos, _ = sample_lim_pair(latents, speakers, seed)
            assert not np.array_equal(anchor, pos)

    def test_lim_single_speaker_error(self):
        latents, speakers = self._batch(speakers=("a", "a"))
        with pytest.raises(SingleSpeakerError):
            sample_lim_pair(latents, speakers, 0)

    def test_lim_deterministic(self):
        latents, speakers = self._batch()
        a = sample_lim_pair(latents, speakers, 7)
        b = sample_lim_pair(latents, speakers, 7)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_gim_needs_two_utterances(self):
        with pytest.raises(PairSamplingError):
            sample_gim_pair([latent()], 0)

    def test_gim_pooled_shapes(self):
        anchor, pos, neg = sample_gim_pair([latent(seed=1), latent(seed=2)], 3)
        assert anchor.shape == pos.shape == neg.shape == (D,)

    def test_spc_offsets(self):
        lats = [latent(t=60, seed=4)]
        for seed in range(20):
            anchor, pos, neg = sample_spc_pair(lats, seed)
            frames = lats[0].frames
            t_idx = np.flatnonzero((frames == anchor).all(axis=1))[0]
            p_idx = np.flatnonzero((frames == pos).all(axis=1))[0]
            n_idx = np.flatnonzero((frames == neg).all(axis=1))[0]
            k = p_idx - t_idx
            assert 1 <= k <= 5
            assert n_idx == t_idx - k


class TestDisabledHeadsContributeNothing:
    def test_missing_head_absent_from_pair_losses(self):
        heads = build_worker_heads(D, names=("lim",))
        lat = torch.randn(3, 20, D)
        losses = workers.pair_losses_t(heads, lat, ["a", "b", "a"], seed=0)
        assert set(losses) == {"lim"}
