import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskgram.codec import rvq_train
from maskgram.distortion import synth_clean
from maskgram.errors import ContractError
from maskgram.features import Waveform, stft, stft_compressed
from maskgram.model import CALLS, ModelConfig, init_model
from maskgram.phase import estimate_cutoff_bin, initial_phase, reconstruct
from maskgram.sampler import (DecodeConfig, decode_iterative, decode_step, guided_logits,
                              init_state, noise_variance, remaining_masked, restore_waveform,
                              span_scores, token_confidence)


def random_logits(K, seed=0):
    rng = np.random.default_rng(seed)
    return lambda codegram, null: rng.normal(size=codegram.shape + (K,))


def fixed_logits(table_c, table_u=None):
    return lambda codegram, null: table_u if (null and table_u is not None) else table_c


class TestGuidance:
    def test_worked_example(self):
        out = guided_logits(np.array([2.0, 0.0]), np.array([1.0, 1.0]), 1.0)
        assert out.tolist() == [3.0, -1.0]

    @given(st.floats(0, 10))
    def test_equal_inputs_unchanged(self, w):
        l = np.random.default_rng(0).normal(size=(2, 3, 5))
        assert np.array_equal(guided_logits(l, l, w), l)

    def test_w_zero_is_conditional(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        assert np.array_equal(guided_logits(a, b, 0.0), a)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            guided_logits(np.zeros(3), np.zeros(4), 1.0)


class TestSchedule:
    def test_noise_endpoints(self):
        assert noise_variance(0, 20) == 4.0 and noise_variance(19, 20) == 0.0
        assert noise_variance(0, 1) == 0.0

    @pytest.mark.parametrize("M0", [1, 7, 1000])
    def test_trajectory_exact(self, M0):
        _, hist = decode_iterative(random_logits(4, M0), 1, M0, 4, DecodeConfig(iterations=20))
        assert hist == [math.floor(math.cos(math.pi * (i + 1) / 40) * M0) for i in range(20)]
        assert hist[-1] == 0

    def test_remaining_masked_bounds(self):
        assert remaining_masked(19, 20, 500) == 0
        assert remaining_masked(0, 20, 500) == math.floor(math.cos(math.pi / 40) * 500)

    def test_single_iteration_commits_everything(self):
        codes, hist = decode_iterative(random_logits(3), 2, 9, 3, DecodeConfig(iterations=1))
        assert hist == [0] and codes.max() < 3

    def test_bad_config(self):
        with pytest.raises(ContractError):
            DecodeConfig(iterations=0)
        with pytest.raises(ContractError):
            DecodeConfig(guidance=-0.5)


class TestDecoding:
    def test_committed_set_grows(self):
        state = init_state(2, 30, 5, 0)
        fn = random_logits(5, 3)
        cfg = DecodeConfig(iterations=8)
        committed = ~state.masked
        for _ in range(8):
            prev = state.codegram.copy()
            decode_step(state, fn, cfg)
            now = ~state.masked
            assert np.all(now[committed])
            assert np.array_equal(state.codegram[committed], prev[committed])
            committed = now
        assert committed.all()

    def test_k_equal_one(self):
        codes, _ = decode_iterative(random_logits(1), 3, 11, 1, DecodeConfig(iterations=5))
        assert np.all(codes == 0)

    def test_deterministic_given_seed(self):
        cfg = DecodeConfig(seed=9, guidance=2.0)
        a, _ = decode_iterative(random_logits(6, 1), 2, 15, 6, cfg)
        b, _ = decode_iterative(random_logits(6, 1), 2, 15, 6, cfg)
        assert np.array_equal(a, b)

    def test_w_zero_bit_identical_to_conditional_only(self):
        rng = np.random.default_rng(0)
        lc, lu = rng.normal(size=(3, 12, 6)), rng.normal(size=(3, 12, 6))
        a, _ = decode_iterative(fixed_logits(lc, lu), 3, 12, 6, DecodeConfig(guidance=0.0, seed=5))
        b, _ = decode_iterative(fixed_logits(lc), 3, 12, 6, DecodeConfig(guidance=0.0, seed=5))
        assert np.array_equal(a, b)

    def test_zero_noise_ranks_by_confidence(self):
        # one dominant token per position with a distinct margin: the most confident
        # positions must be committed first
        K, T = 4, 10
        table = np.full((1, T, K), -50.0)
        table[0, :, 2] = np.arange(T, dtype=float)
        state = init_state(1, T, K, 0)
        decode_step(state, fixed_logits(table), DecodeConfig(iterations=4, noise_v0=0.0))
        kept = np.flatnonzero(~state.masked[0])
        assert kept.tolist() == list(range(T - len(kept), T))

    def test_confidence_kinds(self):
        g = np.array([[1.0, 3.0]])
        tok = np.array([1])
        assert token_confidence(g, tok, "logit")[0] == 3.0
        assert token_confidence(g, tok, "logprob")[0] == pytest.approx(-math.log1p(math.exp(-2)))

    def test_span_score_example(self):
        assert span_scores(np.array([1.0, 9.0, 3.0, 2.0, 0.0]), 5).tolist() == [9.0]

    def test_span_score_short_tail(self):
        assert span_scores(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), 2).tolist() == [2.0, 4.0, 5.0]

    @settings(max_examples=15, deadline=None)
    @given(st.integers(1, 3), st.integers(5, 40), st.integers(2, 6), st.integers(0, 1000))
    def test_span_decoding_completes_with_span_schedule(self, Q, T, l, seed):
        cfg = DecodeConfig(iterations=6, span_length=l, seed=seed)
        codes, hist = decode_iterative(random_logits(4, seed), Q, T, 4, cfg)
        M0 = Q * -(-T // l)
        assert hist == [remaining_masked(i, 6, M0) for i in range(6)]
        assert codes.max() < 4


@pytest.fixture(scope="module")
def toy_model():
    rate, n_fft, hop = 8000, 256, 64
    frames = np.concatenate([stft_compressed(synth_clean(s, 0.5, rate), n_fft, hop).frames
                             for s in range(8)])
    codec = rvq_train(frames, Q=2, K=8, seed=0, kmeans_iters=10)
    cfg = ModelConfig(16, 2, 1, 1, 2, 8, 2, n_fft // 2 + 1, "avg-feature", 4, "float64")
    return init_model(cfg, seed=0, codec=codec), codec, rate, n_fft, hop


class TestRestore:
    def test_length_and_finite(self, toy_model):
        params, codec, rate, n_fft, hop = toy_model
        x = synth_clean(3, 0.7, rate)
        out = restore_waveform(x, params, codec, DecodeConfig(iterations=4, window_seconds=0.5,
                                                              phase_iters=4), rate, n_fft, hop)
        assert len(out) == len(x) and np.all(np.isfinite(out.samples))

    def test_deterministic_and_skips_kd(self, toy_model):
        params, codec, rate, n_fft, hop = toy_model
        x = synth_clean(4, 0.4, rate)
        cfg = DecodeConfig(iterations=3, window_seconds=0.25, phase_iters=2, seed=2)
        CALLS.clear()
        a = restore_waveform(x, params, codec, cfg, rate, n_fft, hop)
        b = restore_waveform(x, params, codec, cfg, rate, n_fft, hop)
        assert np.array_equal(a.samples, b.samples)
        assert CALLS["kd_head"] == 0 and CALLS["pool"] == 0

    def test_too_short(self, toy_model):
        params, codec, rate, n_fft, hop = toy_model
        with pytest.raises(ContractError, match="hop"):
            restore_waveform(Waveform(np.zeros(hop - 1), rate), params, codec, DecodeConfig(),
                             rate, n_fft, hop)

    def test_resamples_with_warning(self, toy_model, caplog):
        params, codec, rate, n_fft, hop = toy_model
        x = synth_clean(5, 0.3, 16000)
        with caplog.at_level(logging.WARNING):
            out = restore_waveform(x, params, codec, DecodeConfig(iterations=2, phase_iters=1),
                                   rate, n_fft, hop)
        assert "resampling" in caplog.text
        assert abs(len(out) - 0.3 * rate) <= hop


class TestPhase:
    def test_cutoff_of_lowpassed_noise(self):
        spec = np.ones((4, 100))
        spec[:, 40:] = 1e-4
        assert estimate_cutoff_bin(spec) == 39

    def test_silent_reference(self):
        assert estimate_cutoff_bin(np.zeros((3, 5))) == 0

    def test_initial_phase_keeps_reference_band(self):
        ref = np.exp(1j * np.random.default_rng(0).uniform(-3, 3, size=(5, 10)))
        ref[:, 6:] *= 1e-6
        ph = initial_phase(ref, (5, 10), np.random.default_rng(1))
        np.testing.assert_allclose(ph[:, :6], np.angle(ref[:, :6]))

    def test_griffin_lim_lowers_inconsistency(self):
        x = synth_clean(1, 0.3, 8000).samples
        mag = np.abs(stft(x, 256, 64))

        def err(y):
            return np.linalg.norm(np.abs(stft(y, 256, 64)) - mag) / np.linalg.norm(mag)

        y0 = reconstruct(mag, 256, 64, x.size, iters=0)
        y1 = reconstruct(mag, 256, 64, x.size, iters=30)
        assert err(y1) < err(y0)
