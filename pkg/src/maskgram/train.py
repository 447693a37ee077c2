"""Joint training of the speech encoder and masked acoustic generator."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .codec import CodecParams
from .config import RunConfig
from .data import Example, distorted_features
from .distortion import DistortionSpec
from .masking import token_mask, training_mask
from .model import (ModelConfig, ModelParams, TrainingBatch, drop_mask, encode_speech, init_model,
                    joint_loss, kd_head)
from .nn.optim import AdamState, adam_step
from .nn.tensor import grad_map, no_grad
from .teacher import kd_loss

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "total", "ce", "kd", "lr")
PROBE_MASK_RATIO = 0.5


@dataclass
class TrainResult:
    params: ModelParams
    history: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    probe: list[tuple[int, float, float]] = field(default_factory=list)  # (step, ce, kd)
    seconds: float = 0.0


def sample_specs(n: int, cfg: RunConfig, rng: np.random.Generator) -> list[DistortionSpec]:
    return [DistortionSpec.sample(rng, cfg.sample_rate, stages=cfg.stage_list) for _ in range(n)]


def assemble_batch(examples: list[Example], specs: list[DistortionSpec], masks: list[np.ndarray],
                   null: np.ndarray | None, cfg: RunConfig, pool: ThreadPoolExecutor | None = None,
                   ) -> TrainingBatch:
    """Stack clean targets with freshly distorted inputs; seeds come in through ``specs``."""
    if pool is not None:
        feats = list(pool.map(lambda a: distorted_features(a[0], a[1], cfg), zip(examples, specs)))
    else:
        feats = [distorted_features(e, s, cfg) for e, s in zip(examples, specs)]
    kd = [e.kd_target for e in examples] if cfg.kd_variant != "none" else None
    return TrainingBatch(np.stack(feats), np.stack([e.codegram for e in examples]),
                         np.stack(masks), kd, null)


def probe_batch(examples: list[Example], cfg: RunConfig) -> TrainingBatch:
    """Fixed inputs, masks and distortions used to track the loss trend."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 99]))
    specs = sample_specs(len(examples), cfg, rng)
    Q, T = examples[0].codegram.shape
    masks = [token_mask(Q, T, PROBE_MASK_RATIO, rng).grid for _ in examples]
    return assemble_batch(examples, specs, masks, None, cfg)


def probe_losses(params: ModelParams, batch: TrainingBatch) -> tuple[float, float]:
    """(masked CE, KD loss) in eval mode on a fixed batch."""
    with no_grad():
        parts = joint_loss(params, batch, mode="eval")
        kd = 0.0
        if params.config.kd_variant != "none" and batch.kd_targets:
            cond, _ = encode_speech(params, batch.distorted, "eval")
            kd = float(kd_loss(kd_head(params, cond, batch.kd_targets[0].T), batch.kd_targets).data)
    return parts.ce, kd


def format_log_line(step: int, total: float, ce: float, kd: float, lr: float) -> str:
    return f"{step}\t{total:.6f}\t{ce:.6f}\t{kd:.6f}\t{lr:.3e}"


def parse_log(text: str) -> list[dict[str, float]]:
    rows = []
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines and lines[0].split("\t") == list(LOG_COLUMNS):
        lines = lines[1:]
    for ln in lines:
        parts = ln.split("\t")
        rows.append({k: (int(v) if k == "step" else float(v)) for k, v in zip(LOG_COLUMNS, parts)})
    return rows


def train(cfg: RunConfig, train_set: list[Example], codec: CodecParams | None = None,
          probe_set: list[Example] | None = None, log_file: IO[str] | None = None,
          probe_every: int = 0, threads: int = 1) -> TrainResult:
    """Adam on the unweighted CE + KD sum, with on-the-fly corruption.

    All randomness (batch order, distortion, masks, condition dropout) flows
    from ``cfg.seed``, so identical configs give bit-identical parameters.
    """
    mcfg = ModelConfig.from_run(cfg)
    params = init_model(mcfg, cfg.seed, codec if cfg.init_from_codec else None, cfg.to_dict())
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    state = AdamState()
    probe = probe_batch(probe_set, cfg) if probe_set else None
    result = TrainResult(params)
    if probe is not None:
        result.probe.append((0, *probe_losses(params, probe)))
    if log_file is not None:
        log_file.write("\t".join(LOG_COLUMNS) + "\n")
    Q, T = train_set[0].codegram.shape
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    start = time.perf_counter()
    n = len(train_set)
    try:
        for step in range(1, cfg.steps + 1):
            idx = rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
            examples = [train_set[i] for i in idx]
            specs = sample_specs(len(examples), cfg, rng)
            masks = [training_mask(Q, T, rng, cfg.span_length).grid for _ in examples]
            null = drop_mask(len(examples), cfg.cond_drop, rng)
            batch = assemble_batch(examples, specs, masks, null, cfg, pool)
            parts = joint_loss(params, batch, mode="train")
            grads = grad_map(parts.total, params.tensors)
            adam_step(params.tensors, grads, state, cfg.learning_rate)
            row = (step, float(parts.total.data), parts.ce, parts.kd, cfg.learning_rate)
            result.history.append(row)
            if log_file is not None and (step % cfg.log_every == 0 or step == cfg.steps):
                log_file.write(format_log_line(*row) + "\n")
            if probe is not None and probe_every and (step % probe_every == 0 or step == cfg.steps):
                result.probe.append((step, *probe_losses(params, probe)))
    finally:
        if pool is not None:
            pool.shutdown()
    if probe is not None and result.probe[-1][0] != cfg.steps:
        result.probe.append((cfg.steps, *probe_losses(params, probe)))
    result.seconds = time.perf_counter() - start
    return result


def heldout_kd_mse(params: ModelParams, examples: list[Example], cfg: RunConfig) -> float:
    """Mean KD-head error on clips with their recorded distortion."""
    errs = []
    for e in examples:
        spec = e.record.distortion or DistortionSpec(stages=())
        feats = distorted_features(e, spec, cfg)
        with no_grad():
            cond, _ = encode_speech(params, feats, "eval")
            pred = kd_head(params, cond, e.kd_target.T)
            errs.append(float(kd_loss(pred, e.kd_target).data))
    return float(np.mean(errs))
