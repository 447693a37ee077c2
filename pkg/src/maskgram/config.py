"""Run configuration: preset defaults <- config file <- command-line overrides.

Config files are INI-style: ``[section]`` headers and ``key = value`` lines.
Every key belongs to exactly one section; unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

SECTIONS: dict[str, tuple[str, ...]] = {
    "audio": ("sample_rate", "n_fft", "hop", "window_seconds", "clip_seconds"),
    "model": ("d", "n_heads", "n_blocks_encoder", "n_blocks_generator", "mlp_mult"),
    "codec": ("Q", "K", "code_dim", "codec_beam", "codec_kmeans_iters", "codec_clips"),
    "teacher": ("teacher_layers", "teacher_dim", "teacher_frame", "K_t", "teacher_kmeans_iters",
                "teacher_seed"),
    "train": ("kd_variant", "span_length", "steps", "batch_size", "learning_rate", "cond_drop",
              "precision", "seed", "n_clips", "holdout_clips", "log_every", "init_from_codec",
              "distortions", "probe_clips"),
    "decode": ("guidance", "iterations", "noise_v0", "confidence", "phase_iters", "decode_seed"),
    "paths": ("workdir",),
}
_SECTION_OF = {k: s for s, ks in SECTIONS.items() for k in ks}


@dataclass
class RunConfig:
    preset: str = "toy"
    # audio
    sample_rate: int = 22050
    n_fft: int = 1024
    hop: int = 256
    window_seconds: float = 1.0
    clip_seconds: float = 1.0
    # model
    d: int = 64
    n_heads: int = 4
    n_blocks_encoder: int = 2
    n_blocks_generator: int = 2
    mlp_mult: int = 4
    # codec
    Q: int = 4
    K: int = 64
    code_dim: int = 8
    codec_beam: int = 4
    codec_kmeans_iters: int = 50
    codec_clips: int = 200
    # teacher
    teacher_layers: int = 12
    teacher_dim: int = 32
    teacher_frame: int = 320
    K_t: int = 50
    teacher_kmeans_iters: int = 50
    teacher_seed: int = 0
    # training
    kd_variant: str = "avg-feature"
    span_length: int = 1
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    cond_drop: float = 0.1
    precision: str = "float32"
    seed: int = 0
    n_clips: int = 200
    holdout_clips: int = 20
    log_every: int = 1
    init_from_codec: bool = True
    distortions: str = "reverb,noise,clip,bandlimit"
    probe_clips: int = 16
    # decoding
    guidance: float = 1.0
    iterations: int = 20
    noise_v0: float = 4.0
    confidence: str = "logit"
    phase_iters: int = 32
    decode_seed: int = 0
    # paths
    workdir: str = "work"

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        cfg = cls()
        return apply_overrides(cfg, d)

    def validate(self) -> "RunConfig":
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if self.d % 2:
            raise ConfigError("d must be even for sinusoidal positional encoding")
        if self.K < 2 and self.preset != "degenerate":
            raise ConfigError("vocabulary size K must be >= 2")
        if self.Q < 1:
            raise ConfigError("need at least one codebook (Q >= 1)")
        if self.n_fft < self.hop:
            raise ConfigError("n_fft must be >= hop")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.guidance < 0:
            raise ConfigError("guidance must be >= 0")
        if self.confidence not in ("logit", "logprob"):
            raise ConfigError("confidence must be 'logit' or 'logprob'")
        if not 0.0 <= self.cond_drop <= 1.0:
            raise ConfigError("cond_drop must lie in [0, 1]")
        if self.window_seconds <= 0:
            raise ConfigError("window_seconds must be positive")
        from .distortion import STAGE_ORDER
        for stage in self.stage_list:
            if stage not in STAGE_ORDER:
                raise ConfigError(f"unknown distortion stage {stage!r} in 'distortions'")
        from .teacher import canonical_variant
        self.kd_variant = canonical_variant(self.kd_variant)
        return self

    @property
    def stage_list(self) -> tuple[str, ...]:
        return tuple(s.strip() for s in self.distortions.split(",") if s.strip())

    @property
    def channels(self) -> int:
        return self.n_fft // 2 + 1


PRESETS: dict[str, dict[str, Any]] = {
    "toy": {},
    "paper": {
        "preset": "paper", "sample_rate": 44100, "n_fft": 2048, "hop": 512,
        "window_seconds": 4.0, "clip_seconds": 4.0,
        "d": 512, "n_heads": 16, "n_blocks_encoder": 6, "n_blocks_generator": 8,
        "Q": 9, "K": 1024, "code_dim": 8, "teacher_dim": 768, "K_t": 500,
        "steps": 800_000, "batch_size": 128, "learning_rate": 1e-4,
    },
    "paper-large": {
        "preset": "paper-large", "sample_rate": 44100, "n_fft": 2048, "hop": 512,
        "window_seconds": 4.0, "clip_seconds": 4.0,
        "d": 1024, "n_heads": 16, "n_blocks_encoder": 6, "n_blocks_generator": 12,
        "Q": 9, "K": 1024, "code_dim": 8, "teacher_dim": 768, "K_t": 500,
        "steps": 800_000, "batch_size": 256, "learning_rate": 1e-4,
    },
    "gradcheck": {
        "preset": "gradcheck", "d": 8, "n_heads": 2, "n_blocks_encoder": 2,
        "n_blocks_generator": 2, "Q": 2, "K": 8, "precision": "float64",
        "n_fft": 16, "hop": 4, "teacher_dim": 4,
    },
}


def _coerce(name: str, raw: Any) -> Any:
    ftype = {f.name: f.type for f in fields(RunConfig)}[name]
    try:
        if ftype in ("int", int):
            if isinstance(raw, str):
                raw = raw.replace("_", "")
            value = int(float(raw)) if isinstance(raw, str) and "e" in raw.lower() else int(raw)
            return value
        if ftype in ("float", float):
            return float(raw)
        if ftype in ("bool", bool):
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name!r}: {raw!r}") from exc


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    valid = {f.name for f in fields(RunConfig)}
    values = cfg.to_dict()
    for key, raw in overrides.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw) if key != "preset" else str(raw)
    return RunConfig(**values)


def read_config_file(path: str | Path) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    parser = configparser.ConfigParser(strict=True, interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (Q, K, K_t)
    try:
        parser.read_string(p.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    out: dict[str, str] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{p}: unknown section [{section}]")
        for key, value in parser.items(section):
            if _SECTION_OF.get(key) != section:
                where = _SECTION_OF.get(key)
                hint = f" (belongs in [{where}])" if where else ""
                raise ConfigError(f"{p}: unknown key {key!r} in [{section}]{hint}")
            out[key] = value
    return out


def parse_config(preset: str = "toy", path: str | Path | None = None,
                 flags: Mapping[str, Any] | None = None) -> RunConfig:
    """Resolve preset defaults, then the file, then explicit flag values."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    cfg = apply_overrides(RunConfig(), PRESETS[preset])
    if path is not None:
        cfg = apply_overrides(cfg, read_config_file(path))
    if flags:
        cfg = apply_overrides(cfg, {k: v for k, v in flags.items() if v is not None})
    return cfg.validate()


def write_config_file(cfg: RunConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    values = cfg.to_dict()
    for section, keys in SECTIONS.items():
        parser[section] = {k: str(values[k]) for k in keys}
    with open(path, "w") as fh:
        fh.write(f"# preset: {cfg.preset}\n")
        parser.write(fh)
