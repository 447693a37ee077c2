"""Magnitude-consistent phase estimation (Griffin-Lim style)."""

from __future__ import annotations

import numpy as np

from .features import istft, stft


def estimate_cutoff_bin(spec: np.ndarray, floor_db: float = -40.0) -> int:
    """Highest bin whose mean power is within ``floor_db`` of the strongest bin."""
    power = (np.abs(spec) ** 2).mean(axis=0)
    peak = power.max()
    if peak <= 0:
        return 0
    live = np.flatnonzero(power >= peak * 10.0 ** (floor_db / 10.0))
    return int(live[-1]) if live.size else 0


def initial_phase(reference: np.ndarray, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Phase of ``reference`` below its cutoff, uniform random above it."""
    phase = rng.uniform(-np.pi, np.pi, size=shape)
    if reference is not None:
        cut = estimate_cutoff_bin(reference)
        T = min(shape[0], reference.shape[0])
        phase[:T, :cut + 1] = np.angle(reference[:T, :cut + 1])
    return phase


def reconstruct(magnitude: np.ndarray, n_fft: int, hop: int, length: int, iters: int = 32,
                init: np.ndarray | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Alternate projections between the target magnitude and consistent STFTs."""
    rng = rng or np.random.default_rng(0)
    phase = init if init is not None else rng.uniform(-np.pi, np.pi, size=magnitude.shape)
    spec = magnitude * np.exp(1j * phase)
    for _ in range(iters):
        x = istft(spec, n_fft, hop, length)
        rebuilt = stft(x, n_fft, hop)
        spec = magnitude * np.exp(1j * np.angle(rebuilt))
    return istft(spec, n_fft, hop, length)
