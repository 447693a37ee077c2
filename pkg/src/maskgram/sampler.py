"""Iterative confidence-based decoding with classifier-free guidance."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .codec import CodecParams, rvq_decode
from .errors import ContractError
from .features import Waveform, decompress, resample, stft, stft_compressed
from .masking import cosine_ratio
from .model import ModelParams, encode_speech, generator_logits
from .nn.tensor import no_grad
from .phase import initial_phase, reconstruct

log = logging.getLogger(__name__)

# logits_fn(codegram (Q, T) with MASK = K, null: bool) -> (Q, T, K)
LogitsFn = Callable[[np.ndarray, bool], np.ndarray]


@dataclass
class DecodeConfig:
    iterations: int = 20
    guidance: float = 1.0
    seed: int = 0
    span_length: int = 0
    window_seconds: float = 4.0
    noise_v0: float = 4.0
    confidence: str = "logit"
    phase_iters: int = 32

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractError("need at least one decoding iteration")
        if self.guidance < 0:
            raise ContractError("guidance w must be >= 0")
        if self.confidence not in ("logit", "logprob"):
            raise ContractError("confidence must be 'logit' or 'logprob'")


@dataclass
class DecodeState:
    codegram: np.ndarray       # (Q, T), MASK = K
    masked: np.ndarray         # (Q, T) bool
    rng: np.random.Generator
    K: int
    span_length: int = 1
    initial_units: int = 0     # M0, in tokens or spans
    iteration: int = 0
    history: list[int] = field(default_factory=list)

    @property
    def units_masked(self) -> int:
        if self.span_length <= 1:
            return int(self.masked.sum())
        return int(_span_view(self.masked, self.span_length).any(axis=-1).sum())


def guided_logits(l_c: np.ndarray, l_u: np.ndarray, w: float) -> np.ndarray:
    """(1 + w) * l_c - w * l_u, evaluated as l_c + w * (l_c - l_u) so that
    w = 0 and l_c = l_u both return l_c bit for bit."""
    if np.shape(l_c) != np.shape(l_u):
        raise ContractError("conditional and unconditional logits differ in shape")
    return l_c + w * (l_c - l_u)


def noise_variance(i: int, N: int, v0: float = 4.0) -> float:
    """Linear anneal from v0 at the first iteration to 0 at the last."""
    if N == 1:
        return 0.0
    if not 0 <= i < N:
        raise ContractError(f"iteration {i} outside [0, {N})")
    return v0 * (1.0 - i / (N - 1))


def remaining_masked(i: int, N: int, M0: int) -> int:
    """Units still masked after iteration i: floor(cos(pi/2 * (i+1)/N) * M0)."""
    return int(math.floor(cosine_ratio((i + 1) / N) * M0))


def span_scores(scores: np.ndarray, span_length: int) -> np.ndarray:
    """Max over each non-overlapping span along the last axis (last span may be short)."""
    if span_length <= 1:
        return scores
    return _span_view(scores, span_length, fill=-np.inf).max(axis=-1)


def _span_view(x: np.ndarray, l: int, fill=False) -> np.ndarray:
    T = x.shape[-1]
    n = -(-T // l)
    pad = n * l - T
    if pad:
        x = np.concatenate([x, np.full(x.shape[:-1] + (pad,), fill, dtype=x.dtype)], axis=-1)
    return x.reshape(*x.shape[:-1], n, l)


def _sample(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    cdf = np.cumsum(p, axis=-1)
    u = rng.uniform(size=logits.shape[:-1] + (1,)) * cdf[..., -1:]
    tok = (cdf <= u).sum(axis=-1)
    return np.minimum(tok, logits.shape[-1] - 1)


def token_confidence(guided: np.ndarray, tokens: np.ndarray, kind: str = "logit") -> np.ndarray:
    """Score of each sampled token: its guided logit, or its log-probability."""
    picked = np.take_along_axis(guided, tokens[..., None], axis=-1)[..., 0]
    if kind == "logit":
        return picked
    m = guided.max(axis=-1)
    lse = m + np.log(np.exp(guided - m[..., None]).sum(axis=-1))
    return picked - lse


def init_state(Q: int, T: int, K: int, seed, span_length: int = 0) -> DecodeState:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    l = max(1, span_length)
    st = DecodeState(np.full((Q, T), K, dtype=np.int64), np.ones((Q, T), bool), rng, K, l)
    st.initial_units = st.units_masked
    return st


def decode_step(state: DecodeState, logits_fn: LogitsFn, cfg: DecodeConfig) -> DecodeState:
    """Sample every masked position, then re-mask the least confident units."""
    N = cfg.iterations
    i = state.iteration
    target = remaining_masked(i, N, state.initial_units)
    if not state.masked.any():
        state.iteration += 1
        state.history.append(0)
        return state
    l_c = logits_fn(state.codegram, False)
    if cfg.guidance == 0.0:
        guided = l_c
    else:
        guided = guided_logits(l_c, logits_fn(state.codegram, True), cfg.guidance)
    sampled = _sample(guided, state.rng)
    conf = token_confidence(guided, sampled, cfg.confidence)
    masked = state.masked
    codegram = np.where(masked, sampled, state.codegram)

    l = state.span_length
    if l > 1:
        unit_mask = _span_view(masked, l).any(axis=-1)
        unit_conf = span_scores(np.where(masked, conf, -np.inf), l)
    else:
        unit_mask = masked
        unit_conf = conf
    var = noise_variance(i, N, cfg.noise_v0)
    if var > 0.0:
        unit_conf = unit_conf + state.rng.normal(0.0, math.sqrt(var), size=unit_conf.shape)

    cand = np.flatnonzero(unit_mask.reshape(-1))
    keep_masked = min(target, cand.size)
    order = np.argsort(unit_conf.reshape(-1)[cand], kind="stable")
    remask_units = np.zeros(unit_mask.size, bool)
    remask_units[cand[order[:keep_masked]]] = True
    remask_units = remask_units.reshape(unit_mask.shape)
    if l > 1:
        T = masked.shape[-1]
        remask = np.repeat(remask_units, l, axis=-1)[..., :T] & masked
    else:
        remask = remask_units
    state.codegram = np.where(remask, state.K, codegram)
    state.masked = remask
    state.iteration += 1
    state.history.append(state.units_masked)
    return state


def decode_iterative(logits_fn: LogitsFn, Q: int, T: int, K: int, cfg: DecodeConfig,
                     seed=None) -> tuple[np.ndarray, list[int]]:
    """Run ``cfg.iterations`` steps from an all-MASK codegram.

    Returns the final (Q, T) codegram and the per-iteration count of masked units.
    """
    state = init_state(Q, T, K, cfg.seed if seed is None else seed, cfg.span_length)
    for _ in range(cfg.iterations):
        decode_step(state, logits_fn, cfg)
    if state.masked.any():
        raise RuntimeError("decoding finished with masked positions left")
    return state.codegram, state.history


def model_logits_fn(params: ModelParams, condition) -> LogitsFn:
    def fn(codegram: np.ndarray, null: bool) -> np.ndarray:
        with no_grad():
            return generator_logits(params, codegram, None if null else condition).data
    return fn


def window_seed(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), int(index)]))


def restore_waveform(distorted: Waveform, params: ModelParams, codec: CodecParams,
                     cfg: DecodeConfig, sample_rate: int, n_fft: int, hop: int,
                     verbose: bool = False) -> Waveform:
    """Window, encode, decode tokens, de-tokenize, and resynthesize each window."""
    if distorted.sample_rate != sample_rate:
        log.warning("resampling input from %d Hz to model rate %d Hz",
                    distorted.sample_rate, sample_rate)
        distorted = resample(distorted, sample_rate)
    n = len(distorted)
    if n < hop:
        raise ContractError(f"input has {n} samples, shorter than one hop ({hop}); nothing to restore")
    if cfg.window_seconds <= 0:
        raise ContractError("window_seconds must be positive")
    win = int(round(cfg.window_seconds * sample_rate))
    n_win = -(-n // win)
    padded = np.zeros(n_win * win)
    padded[:n] = distorted.samples
    pieces = []
    Q, K = params.config.num_codebooks_Q, params.config.vocab_K
    for w in range(n_win):
        chunk = Waveform(padded[w * win:(w + 1) * win], sample_rate)
        feats = stft_compressed(chunk, n_fft, hop).frames
        with no_grad():
            cond, _ = encode_speech(params, feats, "eval")
        rng = window_seed(cfg.seed, w)
        codes, history = decode_iterative(model_logits_fn(params, cond), Q, feats.shape[0], K, cfg, seed=rng)
        if verbose:
            log.info("window %d: %d iterations, masked counts %s", w, cfg.iterations, history)
        mag = decompress(rvq_decode(codes, codec))
        ref = stft(chunk, n_fft, hop)
        init = initial_phase(ref, mag.shape, rng)
        pieces.append(reconstruct(mag, n_fft, hop, win, cfg.phase_iters, init))
    out = np.concatenate(pieces)[:n]
    return Waveform(out, sample_rate)
