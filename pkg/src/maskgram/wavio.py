"""Mono WAV read/write: 16-bit PCM and 32-bit IEEE float only."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ArtifactError, ContractError
from .features import Waveform


def read_wav(path: str | Path) -> Waveform:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"no such WAV file: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise ArtifactError(f"unreadable WAV {path}: {exc}") from exc
    if data.ndim != 1:
        raise ContractError(f"{path}: only mono WAV is supported (got {data.shape[1]} channels)")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ContractError(f"{path}: unsupported sample format {data.dtype}; "
                            "expected 16-bit PCM or 32-bit float")
    return Waveform(samples, int(rate))


def write_wav(path: str | Path, wave: Waveform, fmt: str = "float32") -> None:
    if fmt == "float32":
        data = wave.samples.astype(np.float32)
    elif fmt == "pcm16":
        data = np.round(np.clip(wave.samples, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    else:
        raise ContractError(f"unsupported WAV format {fmt!r}; use 'float32' or 'pcm16'")
    wavfile.write(Path(path), int(wave.sample_rate), data)
