"""Pre-norm transformer pieces built on :mod:`maskgram.nn.tensor`."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, NumericError
from . import tensor as tt
from .tensor import Tensor

LN_EPS = 1e-5
INIT_STD = 0.02


def sinusoidal_pe(T: int, d: int, dtype=np.float64) -> np.ndarray:
    """Interleaved sin/cos table of shape (T, d); pair i uses wavelength 10000^(2i/d)."""
    if d % 2:
        raise ConfigError(f"positional encoding width must be even, got d={d}")
    if T < 1:
        raise ConfigError(f"positional encoding needs T >= 1, got {T}")
    t = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = t / np.power(10000.0, 2.0 * i / d)
    pe = np.empty((T, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


def init_block(rng: np.random.Generator, prefix: str, d: int, mlp_mult: int, dtype) -> dict[str, np.ndarray]:
    def w(shape):
        return rng.normal(0.0, INIT_STD, size=shape).astype(dtype)

    h = mlp_mult * d
    return {
        f"{prefix}/ln1/gain": np.ones(d, dtype), f"{prefix}/ln1/bias": np.zeros(d, dtype),
        f"{prefix}/attn/wq": w((d, d)), f"{prefix}/attn/bq": np.zeros(d, dtype),
        f"{prefix}/attn/wk": w((d, d)), f"{prefix}/attn/bk": np.zeros(d, dtype),
        f"{prefix}/attn/wv": w((d, d)), f"{prefix}/attn/bv": np.zeros(d, dtype),
        f"{prefix}/attn/wo": w((d, d)), f"{prefix}/attn/bo": np.zeros(d, dtype),
        f"{prefix}/ln2/gain": np.ones(d, dtype), f"{prefix}/ln2/bias": np.zeros(d, dtype),
        f"{prefix}/mlp/w1": w((d, h)), f"{prefix}/mlp/b1": np.zeros(h, dtype),
        f"{prefix}/mlp/w2": w((h, d)), f"{prefix}/mlp/b2": np.zeros(d, dtype),
    }


def self_attention(params: dict[str, Tensor], prefix: str, x: Tensor, n_heads: int) -> Tensor:
    B, T, d = x.shape
    dh = d // n_heads

    def heads(name):
        y = tt.linear(x, params[f"{prefix}/attn/w{name}"], params[f"{prefix}/attn/b{name}"])
        return y.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = tt.mul(q @ k.transpose(0, 1, 3, 2), 1.0 / math.sqrt(dh))
    attn = tt.softmax(scores, axis=-1)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    return tt.linear(out, params[f"{prefix}/attn/wo"], params[f"{prefix}/attn/bo"])


def block(params: dict[str, Tensor], prefix: str, x: Tensor, n_heads: int) -> Tensor:
    h = tt.layer_norm(x, params[f"{prefix}/ln1/gain"], params[f"{prefix}/ln1/bias"], LN_EPS)
    x = x + self_attention(params, prefix, h, n_heads)
    h = tt.layer_norm(x, params[f"{prefix}/ln2/gain"], params[f"{prefix}/ln2/bias"], LN_EPS)
    h = tt.gelu(tt.linear(h, params[f"{prefix}/mlp/w1"], params[f"{prefix}/mlp/b1"]))
    return x + tt.linear(h, params[f"{prefix}/mlp/w2"], params[f"{prefix}/mlp/b2"])


def forward_transformer(params: dict[str, Tensor], x: Tensor, stack: str,
                        block_range: range, n_heads: int) -> Tensor:
    """Run blocks ``{stack}/block{i}`` for i in ``block_range``.

    Accepts (T, d) or (B, T, d).  An empty range returns ``x`` unchanged.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    for i in block_range:
        prefix = f"{stack}/block{i}"
        if f"{prefix}/attn/wq" not in params:
            raise ConfigError(f"no such block: {prefix}")
        x = block(params, prefix, x, n_heads)
        if not np.all(np.isfinite(x.data)):
            raise NumericError(f"non-finite activation after {stack} block {i}")
    return x.reshape(*x.shape[1:]) if squeeze else x
