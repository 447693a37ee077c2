"""Synthetic corpus, dataset manifest, and pre-extracted training targets."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .codec import CodecParams, rvq_encode
from .config import RunConfig
from .distortion import DistortionSpec, apply_distortion, synth_clean
from .errors import ArtifactError, ContractError
from .features import Waveform, resample, stft_compressed
from .kmeans import KMeansCodebook
from .teacher import TEACHER_RATE, TeacherParams, TeacherTarget, select_kd_target, teacher_layers

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "maskgram-manifest"
MANIFEST_VERSION = 1
HOLDOUT_STAGES = ("noise", "bandlimit")


@dataclass
class ClipRecord:
    id: str
    split: str
    synth_seed: int | None = None
    clean_path: str | None = None
    distortion: DistortionSpec | None = None

    def to_dict(self) -> dict:
        return {"id": self.id, "split": self.split, "synth_seed": self.synth_seed,
                "clean_path": self.clean_path,
                "distortion": self.distortion.to_dict() if self.distortion else None}

    @classmethod
    def from_dict(cls, d: dict) -> "ClipRecord":
        dist = d.get("distortion")
        return cls(d["id"], d["split"], d.get("synth_seed"), d.get("clean_path"),
                   DistortionSpec.from_dict(dist) if dist else None)


@dataclass
class Manifest:
    records: list[ClipRecord]
    config: dict = field(default_factory=dict)

    def split(self, name: str) -> list[ClipRecord]:
        return [r for r in self.records if r.split == name]

    def save(self, path: str | Path) -> None:
        header = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "config": self.config}
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        p = Path(path)
        if not p.exists():
            raise ArtifactError(f"no such manifest: {p}")
        lines = p.read_text().splitlines()
        try:
            header = json.loads(lines[0])
        except (IndexError, json.JSONDecodeError) as exc:
            raise ArtifactError(f"{p}: missing or unreadable manifest header") from exc
        if header.get("format") != MANIFEST_FORMAT:
            raise ArtifactError(f"{p}: not a maskgram manifest")
        if header.get("version") != MANIFEST_VERSION:
            raise ArtifactError(f"{p}: manifest version {header.get('version')} unsupported "
                                f"(expected {MANIFEST_VERSION})")
        try:
            recs = [ClipRecord.from_dict(json.loads(line)) for line in lines[1:] if line.strip()]
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ArtifactError(f"{p}: corrupt manifest record: {exc}") from exc
        return cls(recs, header.get("config", {}))


def build_manifest(cfg: RunConfig) -> Manifest:
    """``n_clips`` training clips plus ``holdout_clips`` held-out clips.

    Held-out clips carry a fixed noise + band-limit corruption; training clips
    are corrupted on the fly, so their records hold no distortion.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    records = []
    for i in range(cfg.n_clips):
        records.append(ClipRecord(f"train-{i:05d}", "train", synth_seed=cfg.seed * 1_000_003 + i))
    for i in range(cfg.holdout_clips):
        spec = DistortionSpec.sample(rng, cfg.sample_rate, stages=HOLDOUT_STAGES)
        records.append(ClipRecord(f"holdout-{i:05d}", "holdout",
                                  synth_seed=cfg.seed * 1_000_003 + 500_000 + i, distortion=spec))
    return Manifest(records, cfg.to_dict())


def load_clean(record: ClipRecord, cfg: RunConfig, root: Path | None = None) -> Waveform:
    if record.synth_seed is not None:
        return synth_clean(record.synth_seed, cfg.clip_seconds, cfg.sample_rate)
    if record.clean_path is None:
        raise ContractError(f"record {record.id} has neither a synth seed nor a clean path")
    from .wavio import read_wav
    path = Path(record.clean_path)
    if root is not None and not path.is_absolute():
        path = root / path
    wave = read_wav(path)
    if wave.sample_rate != cfg.sample_rate:
        wave = resample(wave, cfg.sample_rate)
    return wave


@dataclass
class Example:
    """One clip with everything training needs that does not change per step."""

    record: ClipRecord
    clean: Waveform
    clean_feats: np.ndarray         # (T, C) compressed STFT
    codegram: np.ndarray            # (Q, T)
    kd_target: TeacherTarget | None


def teacher_for(cfg: RunConfig) -> TeacherParams:
    return TeacherParams.create(cfg.teacher_seed, cfg.teacher_layers, cfg.teacher_dim, cfg.teacher_frame)


def teacher_outputs(clean: Waveform, teacher: TeacherParams) -> list[np.ndarray]:
    return teacher_layers(resample(clean, TEACHER_RATE), teacher)


def prepare_examples(records: list[ClipRecord], cfg: RunConfig, codec: CodecParams,
                     teacher: TeacherParams | None = None,
                     kmeans: KMeansCodebook | None = None,
                     root: Path | None = None) -> list[Example]:
    """Clean codegrams and teacher targets, computed once per clip."""
    variant = cfg.kd_variant
    if variant == "l9-k500" and kmeans is None:
        raise ContractError("kd variant l9-k500 needs a k-means codebook; run `maskgram train-teacher` first")
    if variant != "none" and teacher is None:
        teacher = teacher_for(cfg)
    out = []
    for rec in records:
        clean = load_clean(rec, cfg, root)
        feats = stft_compressed(clean, cfg.n_fft, cfg.hop).frames
        codes = rvq_encode(feats, codec)
        kd = None
        if variant != "none":
            layers = None if variant.startswith("stft") else teacher_outputs(clean, teacher)
            kd = select_kd_target(layers, variant, kmeans, feats)
        out.append(Example(rec, clean, feats, codes, kd))
    return out


def distort(example: Example, spec: DistortionSpec) -> Waveform:
    return apply_distortion(example.clean, None, spec)


def distorted_features(example: Example, spec: DistortionSpec, cfg: RunConfig) -> np.ndarray:
    return stft_compressed(distort(example, spec), cfg.n_fft, cfg.hop).frames


def codec_corpus(records: list[ClipRecord], cfg: RunConfig, root: Path | None = None) -> np.ndarray:
    """Clean compressed-STFT frames stacked over ``records``."""
    if not records:
        raise ContractError("no clips to build the codec corpus from")
    return np.concatenate([stft_compressed(load_clean(r, cfg, root), cfg.n_fft, cfg.hop).frames
                           for r in records])


def teacher_corpus(records: list[ClipRecord], cfg: RunConfig, layer: int,
                   root: Path | None = None) -> np.ndarray:
    """Teacher layer ``layer`` (1-based) outputs stacked over ``records``."""
    if not records:
        raise ContractError("no clips to build the teacher corpus from")
    teacher = teacher_for(cfg)
    return np.concatenate([teacher_outputs(load_clean(r, cfg, root), teacher)[layer - 1]
                           for r in records])
