"""Waveform -> frame features, normalization and length alignment."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import ContractError

COMPRESS_EXP = 0.3
VAR_FLOOR = 1e-5
LOW_BAND_BINS = 372
FULL_BAND_BINS = 1025


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ContractError("waveforms are mono 1-D arrays")
        if self.sample_rate <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_rate: float
    kind: str = "stft-compressed"

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def C(self) -> int:
        return self.frames.shape[1]


def _samples(wave) -> np.ndarray:
    return wave.samples if isinstance(wave, Waveform) else np.asarray(wave, dtype=np.float64)


def num_frames(n_samples: int, hop: int) -> int:
    return 1 + n_samples // hop


def stft(wave, n_fft: int, hop: int) -> np.ndarray:
    """Complex STFT, shape (T, n_fft//2 + 1), Hann window, reflect-padded by n_fft//2."""
    x = _samples(wave)
    if x.size == 0:
        raise ContractError("cannot take the STFT of an empty waveform")
    if n_fft < hop:
        raise ContractError(f"n_fft ({n_fft}) must be >= hop ({hop})")
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect") if x.size > 1 else np.pad(x, pad, mode="edge")
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop]
    frames = frames[:num_frames(x.size, hop)]
    win = signal.get_window("hann", n_fft)
    return np.fft.rfft(frames * win, axis=-1)


def istft(spec: np.ndarray, n_fft: int, hop: int, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`, trimmed to ``length`` samples."""
    win = signal.get_window("hann", n_fft)
    frames = np.fft.irfft(spec, n=n_fft, axis=-1) * win
    T = spec.shape[0]
    total = n_fft + hop * (T - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    if n_fft % hop == 0:
        # overlap-add one hop-wide column block at a time
        wsq = win * win
        for k in range(n_fft // hop):
            seg = slice(k * hop, (k + 1) * hop)
            out[k * hop:k * hop + T * hop] += frames[:, seg].reshape(-1)
            norm[k * hop:k * hop + T * hop] += np.tile(wsq[seg], T)
    else:
        for t in range(T):
            out[t * hop:t * hop + n_fft] += frames[t]
            norm[t * hop:t * hop + n_fft] += win * win
    out /= np.maximum(norm, 1e-8)
    pad = n_fft // 2
    out = out[pad:pad + length]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return out


def stft_compressed(wave, n_fft: int, hop: int, exponent: float = COMPRESS_EXP) -> FeatureSequence:
    """|STFT|^exponent with T = 1 + len // hop frames and n_fft//2 + 1 channels."""
    mag = np.abs(stft(wave, n_fft, hop))
    rate = (wave.sample_rate / hop) if isinstance(wave, Waveform) else 0.0
    return FeatureSequence(mag ** exponent, rate, "stft-compressed")


def decompress(frames: np.ndarray, exponent: float = COMPRESS_EXP) -> np.ndarray:
    return np.maximum(frames, 0.0) ** (1.0 / exponent)


@dataclass
class NormStats:
    """Running per-bin statistics of a 1-D batch normalization layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.01

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.01) -> "NormStats":
        return cls(np.zeros(channels), np.ones(channels), momentum)

    @property
    def channels(self) -> int:
        return self.mean.size


def per_bin_normalize(feats: np.ndarray, stats: NormStats, mode: str = "eval",
                      gain: np.ndarray | None = None, bias: np.ndarray | None = None) -> np.ndarray:
    """Batch-normalize the last axis of ``feats`` (any leading shape).

    ``train`` uses the statistics of this batch and folds them into ``stats``;
    ``eval`` uses the running statistics.  ``gain``/``bias`` default to identity.
    """
    feats = np.asarray(feats)
    if feats.shape[-1] != stats.channels:
        raise ContractError(f"feature channels {feats.shape[-1]} != norm channels {stats.channels}")
    flat = feats.reshape(-1, feats.shape[-1])
    if mode == "train":
        mu = flat.mean(axis=0)
        var = flat.var(axis=0)
        m = stats.momentum
        stats.mean = (1.0 - m) * stats.mean + m * mu
        stats.var = (1.0 - m) * stats.var + m * var
    elif mode == "eval":
        mu, var = stats.mean, stats.var
    else:
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = (feats - mu) / np.sqrt(np.maximum(var, VAR_FLOOR))
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out.astype(feats.dtype, copy=False)


def low_band_target(feats: np.ndarray, ratio: float = LOW_BAND_BINS / FULL_BAND_BINS) -> np.ndarray:
    """Keep the low-frequency bins: 372 of 1025, or round(C * ratio) otherwise."""
    feats = np.asarray(feats)
    C = feats.shape[-1]
    keep = LOW_BAND_BINS if C == FULL_BAND_BINS else int(round(C * ratio))
    if keep < 1 or keep > C:
        raise ContractError(f"cannot take {keep} low-band bins from {C} channels")
    return feats[..., :keep].copy()


def pool_matrix(T_in: int, T_out: int, dtype=np.float64) -> np.ndarray:
    """(T_out, T_in) averaging matrix of adaptive average pooling."""
    if T_out < 1 or T_in < 1:
        raise ContractError(f"adaptive pooling needs positive lengths, got {T_in}->{T_out}")
    P = np.zeros((T_out, T_in), dtype=dtype)
    for t in range(T_out):
        lo = (t * T_in) // T_out
        hi = -((-(t + 1) * T_in) // T_out)
        P[t, lo:hi] = 1.0 / (hi - lo)
    return P


def adaptive_avg_pool(feats: np.ndarray, T_out: int) -> np.ndarray:
    feats = np.asarray(feats)
    return pool_matrix(feats.shape[-2], T_out, feats.dtype) @ feats


def per_channel_normalize(target: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance per channel using this sample's own frames.

    Channels whose variance is under the floor are treated as constant and map
    to zero, which keeps the operation idempotent.
    """
    target = np.asarray(target, dtype=np.float64)
    mu = target.mean(axis=0, keepdims=True)
    var = target.var(axis=0, keepdims=True)
    flat = var < VAR_FLOOR
    out = (target - mu) / np.sqrt(np.where(flat, 1.0, var))
    out[:, flat[0]] = 0.0
    return out


def resample(wave: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc resampling."""
    if target_rate <= 0:
        raise ContractError(f"target rate must be positive, got {target_rate}")
    if target_rate == wave.sample_rate:
        return Waveform(wave.samples.copy(), wave.sample_rate)
    ratio = Fraction(int(target_rate), int(wave.sample_rate))
    y = signal.resample_poly(wave.samples, ratio.numerator, ratio.denominator,
                             window=("kaiser", 10.0))
    return Waveform(y, int(target_rate))
