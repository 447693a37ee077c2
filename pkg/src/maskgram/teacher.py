"""Frozen synthetic SSL-style teacher and knowledge-distillation targets.

The teacher is a seeded stack of 12 tanh projections over per-frame band
log-energies of 16 kHz speech.  It is deterministic, never trained, and only
used to build training targets.

Each projection is an orthogonal matrix times ``gain``.  The default gain
keeps every channel of the layer average varying within a clip; at gain 1 with
a high energy floor many channels saturate into near-constants, which makes
per-sample normalized targets degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .features import Waveform, low_band_target, per_channel_normalize
from .kmeans import KMeansCodebook, kmeans_assign
from .nn.losses import masked_cross_entropy, mse_loss
from .nn.tensor import Tensor

TEACHER_RATE = 16000
TARGET_LAYER = 9  # 1-based
GAIN = 1.5
ENERGY_FLOOR = 1e-6

KD_VARIANTS = ("none", "l9-k500", "l9-feature", "avg-feature", "stft-full", "stft-low")
_ALIASES = {
    "l9-k500": "l9-k500", "l9-feature": "l9-feature", "avg-feature": "avg-feature",
    "stft-44.1k": "stft-full", "stft-16k": "stft-low", "stft-full": "stft-full",
    "stft-low": "stft-low", "none": "none",
}


def canonical_variant(name: str) -> str:
    key = name.strip().lower()
    if key not in _ALIASES:
        raise ContractError(f"unknown KD variant {name!r}; choose from {', '.join(KD_VARIANTS)}")
    return _ALIASES[key]


@dataclass
class TeacherParams:
    seed: int
    n_layers: int
    feat_dim: int
    frame_samples: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    energy_floor: float = ENERGY_FLOOR

    @classmethod
    def create(cls, seed: int = 0, n_layers: int = 12, feat_dim: int = 32,
               frame_samples: int = 320, gain: float = GAIN) -> "TeacherParams":
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for _ in range(n_layers):
            q, r = np.linalg.qr(rng.normal(size=(feat_dim, feat_dim)))
            q = q * np.sign(np.diag(r))
            ws.append(gain * q)
            bs.append(rng.normal(0.0, 0.1, size=feat_dim))
        return cls(seed, n_layers, feat_dim, frame_samples, ws, bs)


def frame_log_energies(samples: np.ndarray, frame_samples: int, bands: int,
                       floor: float = ENERGY_FLOOR) -> np.ndarray:
    """(T_t, bands) log10 band energies of non-overlapping frames."""
    T = samples.size // frame_samples
    if T < 1:
        raise ContractError(f"need at least {frame_samples} samples for one teacher frame")
    frames = samples[:T * frame_samples].reshape(T, frame_samples)
    power = np.abs(np.fft.rfft(frames * np.hanning(frame_samples), axis=-1)) ** 2
    edges = np.linspace(0, power.shape[1], bands + 1).round().astype(int)
    energy = np.add.reduceat(power, edges[:-1], axis=1)
    return np.log10(energy + floor)


def teacher_layers(wave16k: Waveform, params: TeacherParams) -> list[np.ndarray]:
    """Outputs of all layers, each (T_t, C_t); layer i of the list is block i+1."""
    if wave16k.sample_rate != TEACHER_RATE:
        raise ContractError(f"teacher expects {TEACHER_RATE} Hz input, got {wave16k.sample_rate} Hz; "
                            "resample first")
    h = frame_log_energies(wave16k.samples, params.frame_samples, params.feat_dim,
                           params.energy_floor)
    h = (h + 3.0) / 2.0
    layers = []
    for w, b in zip(params.weights, params.biases):
        h = np.tanh(h @ w.T + b)
        layers.append(h)
    return layers


@dataclass
class TeacherTarget:
    variant: str
    tokens: np.ndarray | None = None
    feats: np.ndarray | None = None

    @property
    def discrete(self) -> bool:
        return self.tokens is not None

    @property
    def T(self) -> int:
        return (self.tokens if self.discrete else self.feats).shape[0]


def select_kd_target(layers: list[np.ndarray] | None, variant: str,
                     codebook: KMeansCodebook | None = None,
                     stft_target: np.ndarray | None = None) -> TeacherTarget:
    """Build the distillation target of one sample for ``variant``.

    ``stft_target`` is the clean full-band compressed STFT (T, C) used by the
    spectral variants.
    """
    v = canonical_variant(variant)
    if v == "none":
        raise ContractError("variant 'none' has no KD target")
    if v == "l9-k500":
        if codebook is None:
            raise ContractError("L9-K500 targets need a fitted k-means codebook (run train-teacher)")
        return TeacherTarget(v, tokens=kmeans_assign(layers[TARGET_LAYER - 1], codebook))
    if v in ("stft-full", "stft-low"):
        if stft_target is None:
            raise ContractError(f"{v} targets need the clean compressed STFT")
        spec = stft_target if v == "stft-full" else low_band_target(stft_target)
        return TeacherTarget(v, feats=per_channel_normalize(spec))
    if layers is None:
        raise ContractError(f"{v} targets need teacher layer outputs")
    if v == "l9-feature":
        return TeacherTarget(v, feats=per_channel_normalize(layers[TARGET_LAYER - 1]))
    # offset form: identical layers average to exactly that layer
    first = layers[0]
    avg = first + np.mean(np.stack(layers) - first, axis=0)
    return TeacherTarget(v, feats=per_channel_normalize(avg))


def kd_target_dim(variant: str, teacher_dim: int, n_codes: int, stft_channels: int) -> int:
    """Width of the KD head output for ``variant``."""
    v = canonical_variant(variant)
    if v == "l9-k500":
        return n_codes
    if v == "stft-full":
        return stft_channels
    if v == "stft-low":
        return low_band_target(np.zeros((1, stft_channels))).shape[1]
    return teacher_dim


def kd_loss(prediction: Tensor, targets: list[TeacherTarget] | TeacherTarget) -> Tensor:
    """Per-frame mean KD loss: cross-entropy for tokens, MSE for features.

    ``prediction`` is (T_t, C) or (B, T_t, C) after pooling and the KD head.
    """
    if isinstance(targets, TeacherTarget):
        targets = [targets]
    batched = prediction.ndim == 3
    T_pred = prediction.shape[-2]
    for t in targets:
        if t.T != T_pred:
            raise ContractError(f"KD target has {t.T} frames but prediction has {T_pred}")
    if targets[0].discrete:
        tok = np.stack([t.tokens for t in targets]) if batched else targets[0].tokens
        return masked_cross_entropy(prediction, tok)
    feats = np.stack([t.feats for t in targets]) if batched else targets[0].feats
    return mse_loss(prediction, feats.astype(prediction.dtype))
