"""Central finite-difference check of every model parameter."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import parse_config
from .model import ModelConfig, ModelParams, TrainingBatch, init_model, joint_loss
from .nn.tensor import grad_map, no_grad
from .teacher import TeacherTarget

FD_STEP = 1e-4
# gradients below this magnitude are compared in absolute terms
GRAD_FLOOR = 1e-5


@dataclass
class GradReport:
    worst: dict[str, float]
    checked: int
    seconds: float

    @property
    def max_rel_error(self) -> float:
        return max(self.worst.values())


def toy_problem(seed: int = 0, kd_variant: str = "avg-feature", T: int = 6,
                batch: int = 2) -> tuple[ModelParams, TrainingBatch]:
    """d=8, 2+2 blocks, Q=2, K=8, T=6 model and batch in double precision."""
    cfg = parse_config("gradcheck", flags={"kd_variant": kd_variant})
    mcfg = ModelConfig.from_run(cfg)
    params = init_model(mcfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    # move every parameter off its init so LN gains, biases etc. are generic
    for t in params.tensors.values():
        t.data = t.data + rng.normal(0.0, 0.3, size=t.shape)
    feats = np.abs(rng.normal(size=(batch, T, mcfg.in_channels)))
    targets = rng.integers(0, mcfg.vocab_K, size=(batch, mcfg.num_codebooks_Q, T))
    mask = rng.uniform(size=targets.shape) < 0.5
    mask[:, 0, 0] = True
    T_t = max(1, T // 2)
    if mcfg.kd_discrete:
        kd = [TeacherTarget("l9-k500", tokens=rng.integers(0, mcfg.kd_dim, size=T_t)) for _ in range(batch)]
    elif mcfg.kd_variant != "none":
        kd = [TeacherTarget(mcfg.kd_variant, feats=rng.normal(size=(T_t, mcfg.kd_dim))) for _ in range(batch)]
    else:
        kd = None
    null = np.zeros(batch, bool)
    null[-1] = batch > 1
    return params, TrainingBatch(feats, targets, mask, kd, null)


def check_gradients(params: ModelParams, batch: TrainingBatch, step: float = FD_STEP) -> GradReport:
    start = time.perf_counter()
    loss = joint_loss(params, batch).total
    grads = grad_map(loss, params.tensors)

    def value() -> float:
        with no_grad():
            return float(joint_loss(params, batch).total.data)

    worst: dict[str, float] = {}
    checked = 0
    for name, p in params.tensors.items():
        flat = p.data.reshape(-1)
        g = grads[name].reshape(-1)
        err = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = value()
            flat[i] = orig - step
            down = value()
            flat[i] = orig
            num = (up - down) / (2.0 * step)
            denom = max(abs(num), abs(g[i]), GRAD_FLOOR)
            err = max(err, abs(num - g[i]) / denom)
            checked += 1
        worst[name] = err
    return GradReport(worst, checked, time.perf_counter() - start)
