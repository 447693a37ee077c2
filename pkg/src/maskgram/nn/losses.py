"""Losses used by the joint objective."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, _make, as_tensor


class LossValue(Tensor):
    """Scalar loss that also carries ``empty`` (no position contributed)."""

    __slots__ = ("empty",)


def _log_softmax(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=-1, keepdims=True)
    return z - m - np.log(s), e / s


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean of -log softmax(logits)[target] over positions where ``mask`` is true.

    ``logits`` has shape (..., K); ``targets`` and ``mask`` have shape (...).
    With ``mask=None`` every position counts.  An empty mask yields 0 and the
    returned tensor has ``empty=True``.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    K = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ContractError(f"targets shape {targets.shape} vs logits {logits.shape}")
    mask = np.ones(targets.shape, bool) if mask is None else np.asarray(mask, bool)
    if mask.shape != targets.shape:
        raise ContractError(f"mask shape {mask.shape} vs targets {targets.shape}")
    count = int(mask.sum())
    if count == 0:
        out = LossValue(np.zeros((), logits.dtype))
        out.empty = True
        return out
    sel = targets[mask]
    if sel.min() < 0 or sel.max() >= K:
        raise ContractError("masked targets must be class ids in [0, K); MASK sentinel not allowed")
    safe_t = np.where(mask, targets, 0)
    logp, prob = _log_softmax(logits.data)
    picked = np.take_along_axis(logp, safe_t[..., None], axis=-1)[..., 0]
    value = -(picked * mask).sum() / count
    w = (mask / count).astype(logits.dtype)[..., None]

    def bw(g):
        grad = prob.copy()
        np.put_along_axis(grad, safe_t[..., None],
                          np.take_along_axis(grad, safe_t[..., None], axis=-1) - 1.0, axis=-1)
        return ((grad * w * g).astype(logits.dtype, copy=False),)

    out = _make(np.asarray(value, dtype=logits.dtype), (logits,), bw, cls=LossValue)
    out.empty = False
    return out


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared elementwise difference; ``target`` is treated as a constant."""
    pred = as_tensor(pred)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != tgt.shape:
        raise ContractError(f"mse_loss shape mismatch: {pred.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    n = diff.size
    return _make(np.asarray((diff * diff).sum() / n, dtype=pred.dtype), (pred,),
                 lambda g: ((2.0 / n) * diff * g,))
