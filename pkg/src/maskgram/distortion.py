"""Synthetic speech-like signals, the corruption chain, and the LSD metric."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from .errors import ContractError
from .features import Waveform, stft

SNR_RANGE = (-5.0, 20.0)
CLIP_RANGE = (0.1, 0.5)
MIN_BANDWIDTH = 1000.0
STAGE_ORDER = ("reverb", "noise", "clip", "bandlimit")
LSD_EPS = 1e-8


def synth_clean(seed: int, duration_s: float, sample_rate: int) -> Waveform:
    """Voiced harmonic source through slowly moving formant emphases, with
    syllable-like amplitude envelopes and pauses; peak 0.5."""
    if duration_s <= 0:
        raise ContractError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    nyq = sample_rate / 2.0

    base = rng.uniform(95.0, 230.0)
    glide = rng.uniform(-0.25, 0.25)
    f0 = base * (1.0 + glide * (t / max(duration_s, 1e-9) - 0.5)) \
        * (1.0 + 0.04 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    n_formants = int(rng.integers(2, 4))
    centers = [rng.uniform(lo, hi) for lo, hi in ((300, 900), (900, 2400), (2400, 3800))[:n_formants]]
    rates = rng.uniform(0.5, 3.0, size=n_formants)
    offs = rng.uniform(0, 2 * np.pi, size=n_formants)
    formants = [np.minimum(c * (1.0 + 0.25 * np.sin(2 * np.pi * r * t + o)), 0.7 * nyq)
                for c, r, o in zip(centers, rates, offs)]
    bws = rng.uniform(80.0, 250.0, size=n_formants)

    x = np.zeros(n)
    h = 1
    while h * base * 0.6 < 0.85 * nyq:
        fh = h * f0
        taper = np.clip((0.8 * nyq - fh) / (0.05 * nyq), 0.0, 1.0)
        if not taper.any():
            break
        gain = 0.3 / h
        for fc, bw in zip(formants, bws):
            gain = gain + np.exp(-0.5 * ((fh - fc) / bw) ** 2) / math.sqrt(h)
        x += taper * gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
        h += 1

    env = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.15) * sample_rate)
    while pos < n:
        length = int(rng.uniform(0.12, 0.35) * sample_rate)
        seg = np.sin(np.pi * np.arange(length) / max(length, 1)) ** 2 * rng.uniform(0.5, 1.0)
        stop = min(n, pos + length)
        env[pos:stop] = seg[:stop - pos]
        pos = stop + int(rng.uniform(0.03, 0.2) * sample_rate)
    x *= env
    peak = np.abs(x).max()
    if peak > 0:
        x *= 0.5 / peak
    return Waveform(x, sample_rate)


def synth_noise(seed: int, n: int, kind: str = "white") -> np.ndarray:
    rng = np.random.default_rng(seed)
    w = rng.normal(size=n)
    if kind == "white":
        return w
    if kind == "pink":
        spec = np.fft.rfft(w)
        f = np.arange(spec.size)
        spec[1:] /= np.sqrt(f[1:])
        spec[0] = 0.0
        p = np.fft.irfft(spec, n=n)
        return p / (p.std() + 1e-12)
    raise ContractError(f"unknown noise kind {kind!r}")


def _fit_length(noise: np.ndarray, n: int) -> np.ndarray:
    if noise.size >= n:
        return noise[:n]
    reps = int(np.ceil(n / noise.size))
    return np.tile(noise, reps)[:n]


def add_noise_snr(clean: Waveform, noise, snr_db: float) -> Waveform:
    """clean + g*noise with g set so 10 log10(P_clean / P_scaled_noise) = snr_db."""
    nz = noise.samples if isinstance(noise, Waveform) else np.asarray(noise, dtype=np.float64)
    if nz.size == 0:
        raise ContractError("noise signal is empty")
    nz = _fit_length(nz, len(clean))
    p_noise = float(np.mean(nz ** 2))
    if p_noise <= 0.0:
        raise ContractError("noise signal is silent; SNR is undefined")
    p_clean = float(np.mean(clean.samples ** 2))
    g = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + g * nz, clean.sample_rate)


def bandlimit(wave: Waveform, cutoff_hz: float, taps: int = 255) -> Waveform:
    """Zero-phase (delay-compensated) windowed-sinc low-pass."""
    nyq = wave.sample_rate / 2.0
    if not 0.0 < cutoff_hz <= nyq:
        raise ContractError(f"cutoff must lie in (0, {nyq}], got {cutoff_hz}")
    if cutoff_hz >= nyq:
        return Waveform(wave.samples.copy(), wave.sample_rate)
    h = signal.firwin(taps, cutoff_hz, fs=wave.sample_rate)
    return Waveform(signal.oaconvolve(wave.samples, h, mode="same"), wave.sample_rate)


def clip(wave: Waveform, clip_ratio: float) -> Waveform:
    """Hard clamp at +-clip_ratio * peak."""
    if not 0.0 < clip_ratio <= 1.0:
        raise ContractError(f"clip ratio must lie in (0, 1], got {clip_ratio}")
    level = clip_ratio * np.abs(wave.samples).max()
    return Waveform(np.clip(wave.samples, -level, level), wave.sample_rate)


def synth_rir(rt60_s: float, sample_rate: int, seed: int, tail_gain: float = 0.5) -> np.ndarray:
    """Unit direct path followed by exponentially decaying noise (-60 dB at rt60)."""
    if rt60_s <= 0:
        raise ContractError("rt60 must be positive")
    rng = np.random.default_rng(seed)
    n = max(2, int(round(1.2 * rt60_s * sample_rate)))
    t = np.arange(n) / sample_rate
    h = tail_gain * rng.normal(size=n) * decay_envelope(t, rt60_s)
    h[0] = 1.0
    return h


def decay_envelope(t: np.ndarray, rt60_s: float) -> np.ndarray:
    return np.exp(-6.908 * t / rt60_s)


def reverberate(wave: Waveform, rir: np.ndarray) -> Waveform:
    y = signal.fftconvolve(wave.samples, rir)[:len(wave)]
    return Waveform(y, wave.sample_rate)


@dataclass
class DistortionSpec:
    snr_db: float = 10.0
    bandwidth_hz: float = 4000.0
    clip_ratio: float = 0.5
    reverb_rt60_s: float = 0.0
    seed: int = 0
    stages: tuple[str, ...] = STAGE_ORDER
    noise_kind: str = "white"
    order: tuple[str, ...] = field(default=STAGE_ORDER)

    def validate(self, sample_rate: int) -> None:
        nyq = sample_rate / 2.0
        for s in self.stages:
            if s not in STAGE_ORDER:
                raise ContractError(f"unknown distortion stage {s!r}")
        if "noise" in self.stages and not SNR_RANGE[0] <= self.snr_db <= SNR_RANGE[1]:
            raise ContractError(f"snr_db {self.snr_db} outside {SNR_RANGE}")
        if "bandlimit" in self.stages and not MIN_BANDWIDTH <= self.bandwidth_hz <= nyq:
            raise ContractError(f"bandwidth {self.bandwidth_hz} outside [{MIN_BANDWIDTH}, {nyq}]")
        if "clip" in self.stages and not CLIP_RANGE[0] <= self.clip_ratio <= CLIP_RANGE[1] \
                and self.clip_ratio != 1.0:
            raise ContractError(f"clip ratio {self.clip_ratio} outside {CLIP_RANGE}")
        if self.reverb_rt60_s < 0:
            raise ContractError("rt60 must be >= 0")

    @classmethod
    def sample(cls, rng: np.random.Generator, sample_rate: int,
               stages: tuple[str, ...] = STAGE_ORDER, rt60_range=(0.2, 0.8)) -> "DistortionSpec":
        nyq = sample_rate / 2.0
        return cls(
            snr_db=float(rng.uniform(*SNR_RANGE)),
            bandwidth_hz=float(rng.uniform(MIN_BANDWIDTH, nyq)),
            clip_ratio=float(rng.uniform(*CLIP_RANGE)),
            reverb_rt60_s=float(rng.uniform(*rt60_range)) if "reverb" in stages else 0.0,
            seed=int(rng.integers(2**31 - 1)),
            stages=tuple(stages),
            noise_kind=str(rng.choice(["white", "pink"])),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = list(self.stages)
        d["order"] = list(self.order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionSpec":
        d = dict(d)
        d["stages"] = tuple(d.get("stages", STAGE_ORDER))
        d["order"] = tuple(d.get("order", STAGE_ORDER))
        return cls(**d)


def apply_distortion(clean: Waveform, noise, spec: DistortionSpec) -> Waveform:
    """Run the enabled stages in ``spec.order``, then limit the peak to 0.99."""
    spec.validate(clean.sample_rate)
    y = Waveform(clean.samples.copy(), clean.sample_rate)
    for stage in spec.order:
        if stage not in spec.stages:
            continue
        if stage == "reverb" and spec.reverb_rt60_s > 0:
            y = reverberate(y, synth_rir(spec.reverb_rt60_s, y.sample_rate, spec.seed))
        elif stage == "noise":
            nz = noise if noise is not None else synth_noise(spec.seed + 1, len(y), spec.noise_kind)
            y = add_noise_snr(y, nz, spec.snr_db)
        elif stage == "clip":
            y = clip(y, spec.clip_ratio)
        elif stage == "bandlimit":
            y = bandlimit(y, spec.bandwidth_hz)
    peak = np.abs(y.samples).max() if len(y) else 0.0
    if peak > 0.99:
        y = Waveform(y.samples * (0.99 / peak), y.sample_rate)
    return y


def lsd(reference: Waveform, estimate: Waveform, n_fft: int = 2048, hop: int = 512) -> float:
    """Frame mean of the RMS (over bins) log10-power difference."""
    if len(reference) != len(estimate):
        raise ContractError(f"LSD needs equal lengths, got {len(reference)} and {len(estimate)}")
    if reference.sample_rate != estimate.sample_rate:
        raise ContractError("LSD needs equal sample rates")
    s_ref = np.abs(stft(reference, n_fft, hop)) ** 2
    s_est = np.abs(stft(estimate, n_fft, hop)) ** 2
    diff = np.log10(s_ref + LSD_EPS) - np.log10(s_est + LSD_EPS)
    return float(np.mean(np.sqrt(np.mean(diff ** 2, axis=1))))
