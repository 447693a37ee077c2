"""Training masks (token-level and span-level) and the cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractError


@dataclass
class MaskPlan:
    grid: np.ndarray  # (Q, T) bool, True = masked
    mode: str = "token"
    span_length: int = 1

    @property
    def realized_ratio(self) -> float:
        return float(self.grid.mean())

    @property
    def count(self) -> int:
        return int(self.grid.sum())


def cosine_ratio(u: float) -> float:
    """Fraction of positions still masked at decoding progress ``u``: cos(pi*u/2)."""
    if not 0.0 <= u <= 1.0:
        raise ContractError(f"progress must lie in [0, 1], got {u}")
    if u == 1.0:
        return 0.0
    return math.cos(math.pi * u / 2.0)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def token_mask(Q: int, T: int, r: float, seed) -> MaskPlan:
    """Exactly round(Q*T*r) positions, uniform without replacement."""
    if not 0.0 < r <= 1.0:
        raise ContractError(f"mask ratio must lie in (0, 1], got {r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = min(Q * T, _round_half_up(Q * T * r))
    flat = np.zeros(Q * T, dtype=bool)
    flat[rng.choice(Q * T, size=n, replace=False)] = True
    return MaskPlan(flat.reshape(Q, T), "token", 1)


def num_spans(r_k: float, T: int, l: int) -> int:
    """Smallest n with expected union coverage 1 - ((T-l)/T)^n >= r_k.

    A full-row target is capped at 1 - 1/(2T) (less than half a token expected
    uncovered), since the expectation only reaches 1 asymptotically when l < T.
    """
    if not 0.0 <= r_k <= 1.0:
        raise ContractError(f"codebook mask ratio must lie in [0, 1], got {r_k}")
    if l < 1 or l > T:
        raise ContractError(f"span length must satisfy 1 <= l <= T, got l={l}, T={T}")
    if r_k == 0.0:
        return 0
    if l == T:
        return 1
    target = min(r_k, 1.0 - 0.5 / T)
    keep = (T - l) / T
    n = max(1, math.ceil(math.log1p(-target) / math.log(keep)) - 1)
    while 1.0 - keep ** n < target:
        n += 1
    while n > 1 and 1.0 - keep ** (n - 1) >= target:
        n -= 1
    return n


def span_mask(Q: int, T: int, r_g: float, l: int, seed) -> MaskPlan:
    """Span masking that targets a global ratio ``r_g`` across all codebooks.

    A throwaway token-level mask at ratio ``r_g`` fixes each row's ratio r_k;
    each row then gets num_spans(r_k, T, l) spans at uniform starts in
    [0, T - l], overlaps allowed.
    """
    if not 0.0 < r_g <= 1.0:
        raise ContractError(f"mask ratio must lie in (0, 1], got {r_g}")
    if l < 1 or l > T:
        raise ContractError(f"span length must satisfy 1 <= l <= T, got l={l}, T={T}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    probe = token_mask(Q, T, r_g, rng).grid
    per_row = [num_spans(c / T, T, l) for c in probe.sum(axis=1)]
    rows = np.repeat(np.arange(Q), per_row)
    starts = rng.integers(0, T - l + 1, size=rows.size)
    grid = np.zeros((Q, T), dtype=np.uint8)
    _kernels.paint_spans(grid, rows, starts, l)
    return MaskPlan(grid.astype(bool), "span", l)


def training_mask(Q: int, T: int, rng: np.random.Generator, span_length: int = 1) -> MaskPlan:
    """Per-sample training mask: ratio cos(pi*u/2) with u ~ U(0, 1), at least one position."""
    r = cosine_ratio(float(rng.uniform()))
    r = max(r, 1.0 / (Q * T))
    if span_length <= 1:
        return token_mask(Q, T, r, rng)
    plan = span_mask(Q, T, r, min(span_length, T), rng)
    if not plan.grid.any():
        q = int(rng.integers(Q))
        s = int(rng.integers(0, T - min(span_length, T) + 1))
        plan.grid[q, s:s + span_length] = True
    return plan
