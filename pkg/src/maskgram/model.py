"""Speech encoder + KD head + masked acoustic generator.

Parameter names (all live in one flat ``ModelParams`` map):

- ``encoder/bn/{gain,bias}``, ``encoder/in/{w,b}``, ``encoder/block{i}/...``, ``encoder/ln_f/...``
- ``kd/head/{w,b}``: only used while training with a KD variant
- ``gen/embed{q}``: (K+1, d) tables, row K is the MASK entry
- ``gen/null_cond``: learned condition used when the encoder output is dropped
- ``gen/block{i}/...``, ``gen/ln_f/...``, ``gen/heads/{w,b}``: (Q, d, K) and (Q, 1, K)
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import CodecParams, export_embedding_init
from .config import RunConfig
from .errors import ArtifactError, ContractError
from .features import NormStats, per_bin_normalize, pool_matrix
from .nn import layers
from .nn import tensor as tt
from .nn.checkpoint import load_records, pack_json, save_records, unpack_json
from .nn.losses import masked_cross_entropy
from .nn.tensor import Tensor
from .teacher import TeacherTarget, kd_loss, kd_target_dim

# call counts of training-only components; inference must leave these at zero
CALLS: Counter = Counter()


@dataclass
class ModelConfig:
    d: int
    n_heads: int
    n_blocks_encoder: int
    n_blocks_generator: int
    mlp_mult: int
    vocab_K: int
    num_codebooks_Q: int
    in_channels: int
    kd_variant: str = "none"
    kd_dim: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ContractError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.vocab_K < 1 or self.num_codebooks_Q < 1:
            raise ContractError("need K >= 1 and Q >= 1")

    @property
    def mask_id(self) -> int:
        return self.vocab_K

    @property
    def kd_discrete(self) -> bool:
        return self.kd_variant == "l9-k500"

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "ModelConfig":
        kd_dim = 0
        if cfg.kd_variant != "none":
            kd_dim = kd_target_dim(cfg.kd_variant, cfg.teacher_dim, cfg.K_t, cfg.channels)
        return cls(cfg.d, cfg.n_heads, cfg.n_blocks_encoder, cfg.n_blocks_generator, cfg.mlp_mult,
                   cfg.K, cfg.Q, cfg.channels, cfg.kd_variant, kd_dim, cfg.precision)


class ModelParams:
    """Named trainable tensors plus the encoder's running normalization stats."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor], stats: NormStats,
                 run_config: dict | None = None):
        self.config = config
        self.tensors = tensors
        self.stats = stats
        self.run_config = run_config or {}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def records(self) -> dict[str, np.ndarray]:
        recs = {f"param/{k}": v.data for k, v in self.tensors.items()}
        recs["norm/mean"] = self.stats.mean
        recs["norm/var"] = self.stats.var
        recs["meta/model"] = pack_json(self.config.__dict__ | {"momentum": self.stats.momentum})
        recs["meta/config"] = pack_json(self.run_config)
        return recs

    def save(self, path: str | Path) -> None:
        save_records(path, self.records())

    @classmethod
    def from_records(cls, recs: dict[str, np.ndarray]) -> "ModelParams":
        try:
            meta = unpack_json(recs["meta/model"])
        except KeyError as exc:
            raise ArtifactError("checkpoint has no meta/model record") from exc
        momentum = meta.pop("momentum", 0.01)
        config = ModelConfig(**meta)
        tensors = {k[len("param/"):]: Tensor(v, requires_grad=True)
                   for k, v in recs.items() if k.startswith("param/")}
        stats = NormStats(recs["norm/mean"], recs["norm/var"], momentum)
        run = unpack_json(recs["meta/config"]) if "meta/config" in recs else {}
        return cls(config, tensors, stats, run)

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        return cls.from_records(load_records(path))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}


def init_model(config: ModelConfig, seed: int = 0, codec: CodecParams | None = None,
               run_config: dict | None = None) -> ModelParams:
    """Fresh parameters; with ``codec`` the embedding tables start from the
    codec's decoded code vectors."""
    rng = np.random.default_rng(seed)
    dt = np.dtype(config.dtype)
    d, C, K, Q = config.d, config.in_channels, config.vocab_K, config.num_codebooks_Q

    def normal(shape):
        return rng.normal(0.0, layers.INIT_STD, size=shape).astype(dt)

    arrays: dict[str, np.ndarray] = {
        "encoder/bn/gain": np.ones(C, dt), "encoder/bn/bias": np.zeros(C, dt),
        "encoder/in/w": normal((C, d)), "encoder/in/b": np.zeros(d, dt),
    }
    for i in range(config.n_blocks_encoder):
        arrays.update(layers.init_block(rng, f"encoder/block{i}", d, config.mlp_mult, dt))
    arrays["encoder/ln_f/gain"] = np.ones(d, dt)
    arrays["encoder/ln_f/bias"] = np.zeros(d, dt)
    if config.kd_variant != "none":
        arrays["kd/head/w"] = normal((d, config.kd_dim))
        arrays["kd/head/b"] = np.zeros(config.kd_dim, dt)
    if codec is not None:
        if codec.Q != Q or codec.K != K:
            raise ContractError(f"codec is Q={codec.Q}, K={codec.K} but model expects Q={Q}, K={K}")
        for q, table in enumerate(export_embedding_init(codec, d, rng)):
            arrays[f"gen/embed{q}"] = table.astype(dt)
    else:
        for q in range(Q):
            arrays[f"gen/embed{q}"] = normal((K + 1, d))
    arrays["gen/null_cond"] = normal((d,))
    for i in range(config.n_blocks_generator):
        arrays.update(layers.init_block(rng, f"gen/block{i}", d, config.mlp_mult, dt))
    arrays["gen/ln_f/gain"] = np.ones(d, dt)
    arrays["gen/ln_f/bias"] = np.zeros(d, dt)
    arrays["gen/heads/w"] = normal((Q, d, K))
    arrays["gen/heads/b"] = np.zeros((Q, 1, K), dt)
    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    return ModelParams(config, tensors, NormStats.fresh(C), run_config)


def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ContractError(f"expected {ndim - 1}-D or {ndim}-D input, got shape {x.shape}")
    return x, False


def encode_speech(params: ModelParams, feats: np.ndarray, mode: str = "eval",
                  kd_frames: int | None = None) -> tuple[Tensor, Tensor | None]:
    """Distorted compressed-STFT frames (B, T, C) -> (condition (B, T, d), KD prediction).

    The KD prediction (pooled to ``kd_frames`` and projected by the KD head) is
    produced only in train mode with a KD variant configured.
    """
    cfg = params.config
    feats, _ = _batched(feats, 3)
    if feats.shape[-1] != cfg.in_channels:
        raise ContractError(f"encoder expects {cfg.in_channels} channels, got {feats.shape[-1]}")
    B, T, _ = feats.shape
    dt = params.dtype
    normed = Tensor(per_bin_normalize(feats.astype(dt), params.stats, mode))
    x = normed * params["encoder/bn/gain"] + params["encoder/bn/bias"]
    x = tt.linear(x, params["encoder/in/w"], params["encoder/in/b"])
    x = x + layers.sinusoidal_pe(T, cfg.d, dt)
    x = layers.forward_transformer(params.tensors, x, "encoder", range(cfg.n_blocks_encoder), cfg.n_heads)
    cond = tt.layer_norm(x, params["encoder/ln_f/gain"], params["encoder/ln_f/bias"], layers.LN_EPS)
    kd_pred = None
    if mode == "train" and cfg.kd_variant != "none":
        kd_pred = kd_head(params, cond, kd_frames if kd_frames is not None else T)
    return cond, kd_pred


def kd_head(params: ModelParams, cond: Tensor, kd_frames: int) -> Tensor:
    CALLS["pool"] += 1
    CALLS["kd_head"] += 1
    P = pool_matrix(cond.shape[-2], kd_frames, params.dtype)
    pooled = tt.matmul(Tensor(P), cond)
    return tt.linear(pooled, params["kd/head/w"], params["kd/head/b"])


@dataclass
class ConditionState:
    """Either encoder features (T, d) / (B, T, d) or the learned null condition."""

    features: Tensor | None = None
    null: bool = False

    def __post_init__(self):
        if (self.features is None) != self.null:
            raise ContractError("condition must be exactly one of features or null")


def drop_condition(condition: ConditionState, p: float, rng: np.random.Generator) -> ConditionState:
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"drop probability must lie in [0, 1], got {p}")
    if rng.uniform() < p:
        return ConditionState(None, True)
    return condition


def drop_mask(batch: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Per-sample independent draws; True means use the null condition."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"drop probability must lie in [0, 1], got {p}")
    return rng.uniform(size=batch) < p


def embed_codegram(params: ModelParams, codegram: np.ndarray) -> Tensor:
    """Sum over stages of per-stage table lookups; MASK (= K) selects the last row."""
    codegram, squeeze = _batched(codegram, 3)
    Q, K = params.config.num_codebooks_Q, params.config.vocab_K
    if codegram.shape[1] != Q:
        raise ContractError(f"codegram has {codegram.shape[1]} stages, model expects {Q}")
    if codegram.min() < 0 or codegram.max() > K:
        raise ContractError(f"token ids must lie in [0, {K}] (K is MASK)")
    out = None
    for q in range(Q):
        e = tt.embedding(params[f"gen/embed{q}"], codegram[:, q, :])
        out = e if out is None else out + e
    return out.reshape(*out.shape[1:]) if squeeze else out


def generator_logits(params: ModelParams, codegram: np.ndarray, condition: Tensor | None,
                     null: np.ndarray | bool | None = None) -> Tensor:
    """(B, Q, T) tokens (MASK allowed) + condition -> (B, Q, T, K) logits.

    ``condition=None`` or ``null=True`` uses the null embedding for every sample;
    a boolean array selects it per sample.
    """
    cfg = params.config
    codegram, squeeze = _batched(codegram, 3)
    B, _, T = codegram.shape
    dt = params.dtype
    x = embed_codegram(params, codegram)
    nullc = params["gen/null_cond"]
    if condition is None or (isinstance(null, bool) and null):
        x = x + nullc
    else:
        if condition.ndim == 2:
            condition = condition.reshape(1, *condition.shape)
        if condition.shape != (B, T, cfg.d):
            raise ContractError(f"condition shape {condition.shape} != {(B, T, cfg.d)}")
        if null is None or not np.any(null):
            x = x + condition
        else:
            drop = np.asarray(null, dtype=dt).reshape(B, 1, 1)
            x = x + condition * (1.0 - drop) + nullc * drop
    x = x + layers.sinusoidal_pe(T, cfg.d, dt)
    x = layers.forward_transformer(params.tensors, x, "gen", range(cfg.n_blocks_generator), cfg.n_heads)
    h = tt.layer_norm(x, params["gen/ln_f/gain"], params["gen/ln_f/bias"], layers.LN_EPS)
    logits = h.reshape(B, 1, T, cfg.d) @ params["gen/heads/w"] + params["gen/heads/b"]
    return logits.reshape(*logits.shape[1:]) if squeeze else logits


@dataclass
class TrainingBatch:
    distorted: np.ndarray          # (B, T, C) compressed STFT of the distorted input
    targets: np.ndarray            # (B, Q, T) clean codegrams
    mask: np.ndarray               # (B, Q, T) bool
    kd_targets: list[TeacherTarget] | None = None
    null: np.ndarray | None = None  # (B,) bool, condition dropped

    def __post_init__(self):
        if self.distorted.shape[1] != self.targets.shape[2]:
            raise ContractError("encoder frames and codegram frames disagree")


@dataclass
class LossParts:
    total: Tensor
    ce: float
    kd: float


def joint_loss(params: ModelParams, batch: TrainingBatch, mode: str = "train") -> LossParts:
    """CE on masked positions plus the KD loss, both with weight 1."""
    cfg = params.config
    use_kd = cfg.kd_variant != "none" and mode == "train"
    kd_frames = batch.kd_targets[0].T if use_kd and batch.kd_targets else None
    cond, kd_pred = encode_speech(params, batch.distorted, mode, kd_frames)
    if np.any(batch.targets[batch.mask] >= cfg.vocab_K):
        raise ContractError("training targets contain the MASK sentinel")
    inputs = np.where(batch.mask, cfg.mask_id, batch.targets)
    logits = generator_logits(params, inputs, cond, batch.null)
    ce = masked_cross_entropy(logits, batch.targets, batch.mask)
    total = ce
    kd_value = 0.0
    if use_kd:
        if not batch.kd_targets:
            raise ContractError(f"KD variant {cfg.kd_variant} needs teacher targets in the batch")
        kd = kd_loss(kd_pred, batch.kd_targets)
        total = ce + kd
        kd_value = float(kd.data)
    return LossParts(total, float(ce.data), kd_value)
