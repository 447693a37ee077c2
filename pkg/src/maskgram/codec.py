"""Toy residual vector quantizer over compressed-magnitude STFT frames.

Each stage projects the running residual to a small code space with a frozen
orthonormal map, quantizes it with a k-means codebook, and maps the chosen
code back to feature space with a least-squares output projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ContractError
from .kmeans import kmeans_fit
from .nn.checkpoint import load_records, pack_json, save_records, unpack_json

RIDGE = 1e-6
CODE_DIM = 8


@dataclass
class RVQStage:
    in_w: np.ndarray     # (code_dim, C)
    in_b: np.ndarray     # (code_dim,)
    codebook: np.ndarray  # (K, code_dim)
    out_w: np.ndarray    # (code_dim, C)
    out_b: np.ndarray    # (C,)

    def project(self, residual: np.ndarray) -> np.ndarray:
        return residual @ self.in_w.T + self.in_b

    def code_vectors(self) -> np.ndarray:
        """Feature-space decode of every code, (K, C)."""
        return self.codebook @ self.out_w + self.out_b


@dataclass
class CodecParams:
    stages: list[RVQStage]
    seed: int = 0
    train_mse: list[float] = field(default_factory=list)
    beam: int = 4

    @property
    def Q(self) -> int:
        return len(self.stages)

    @property
    def K(self) -> int:
        return self.stages[0].codebook.shape[0]

    @property
    def C(self) -> int:
        return self.stages[0].out_b.size

    def records(self, config: dict | None = None) -> dict[str, np.ndarray]:
        recs: dict[str, np.ndarray] = {}
        for q, st in enumerate(self.stages):
            # bias stored as the trailing row of each projection
            recs[f"codec/stage{q}/in_proj"] = np.vstack([st.in_w.T, st.in_b[None]])
            recs[f"codec/stage{q}/codebook"] = st.codebook
            recs[f"codec/stage{q}/out_proj"] = np.vstack([st.out_w, st.out_b[None]])
        meta = {"Q": self.Q, "K": self.K, "C": self.C, "seed": self.seed,
                "train_mse": self.train_mse, "beam": self.beam}
        if config is not None:
            meta["config"] = config
        recs["codec/meta"] = pack_json(meta)
        return recs

    @classmethod
    def from_records(cls, recs: dict[str, np.ndarray]) -> "CodecParams":
        if "codec/meta" not in recs:
            raise ContractError("codec records missing codec/meta")
        meta = unpack_json(recs["codec/meta"])
        stages = []
        for q in range(meta["Q"]):
            inp = recs[f"codec/stage{q}/in_proj"]
            out = recs[f"codec/stage{q}/out_proj"]
            stages.append(RVQStage(inp[:-1].T.copy(), inp[-1].copy(),
                                   recs[f"codec/stage{q}/codebook"], out[:-1].copy(), out[-1].copy()))
        return cls(stages, meta["seed"], meta["train_mse"], meta.get("beam", 4))

    def save(self, path: str | Path, config: dict | None = None) -> None:
        save_records(path, self.records(config))

    @classmethod
    def load(cls, path: str | Path) -> "CodecParams":
        return cls.from_records(load_records(path))


def _orthonormal_rows(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(cols, rows)))
    return (q * np.sign(np.diag(r))).T


def rvq_train(frames: np.ndarray, Q: int, K: int, seed: int = 0, code_dim: int = CODE_DIM,
              kmeans_iters: int = 50, beam: int = 4) -> CodecParams:
    """Greedy stage-by-stage fit on an (N, C) corpus."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError("rvq_train expects an (N, C) corpus")
    N, C = x.shape
    if N < K:
        raise ContractError(f"need at least K={K} frames to train the codec, got {N}")
    rng = np.random.default_rng(seed)
    residual = x.copy()
    stages, mse = [], []
    for q in range(Q):
        in_w = _orthonormal_rows(rng, min(code_dim, C), C)
        if in_w.shape[0] < code_dim:
            in_w = np.vstack([in_w, np.zeros((code_dim - in_w.shape[0], C))])
        in_b = np.zeros(code_dim)
        z = residual @ in_w.T + in_b
        km = kmeans_fit(z, K, max_iters=kmeans_iters, seed=seed * 1000 + q)
        labels, _ = _kernels.nearest_centroid(z, km.centroids)
        design = np.hstack([km.centroids[labels], np.ones((N, 1))])
        gram = design.T @ design + RIDGE * np.eye(code_dim + 1)
        coef = np.linalg.solve(gram, design.T @ residual)
        out_w, out_b = coef[:-1], coef[-1]
        decoded = design @ coef
        before = float((residual ** 2).mean())
        after = float(((residual - decoded) ** 2).mean())
        if after > before:
            out_w, out_b = np.zeros_like(out_w), np.zeros_like(out_b)
            decoded = np.zeros_like(residual)
            after = before
        residual = residual - decoded
        stages.append(RVQStage(in_w, in_b, km.centroids, out_w, out_b))
        mse.append(after)
    return CodecParams(stages, seed, mse, beam)


def rvq_encode(feats: np.ndarray, codec: CodecParams, beam: int | None = None) -> np.ndarray:
    """(T, C) frames -> (Q, T) token ids.

    Beam search over token paths scored by feature-space residual energy.
    ``beam=1`` is plain greedy residual quantization.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != codec.C:
        raise ContractError(f"codec expects (T, {codec.C}) frames, got {feats.shape}")
    width = codec.beam if beam is None else beam
    width = max(1, min(width, codec.K))
    T = feats.shape[0]
    if width == 1:
        residual = feats.copy()
        tokens = np.empty((codec.Q, T), dtype=np.int64)
        for q, st in enumerate(codec.stages):
            vecs = st.code_vectors()
            tok, _ = _kernels.nearest_centroid(residual, vecs)
            tokens[q] = tok
            residual = residual - vecs[tok]
        return tokens

    # beams: (T, B, C) residuals, (T, B) scores, (T, B, q) paths
    residual = feats[:, None, :]
    paths = np.zeros((T, 1, 0), dtype=np.int64)
    for st in codec.stages:
        vecs = st.code_vectors()
        B = residual.shape[1]
        # ||r - v||^2 = ||r||^2 - 2 r.v + ||v||^2
        cost = ((residual ** 2).sum(-1)[..., None] - 2.0 * residual @ vecs.T
                + (vecs ** 2).sum(-1)[None, None, :])
        flat = cost.reshape(T, B * codec.K)
        keep = min(width, flat.shape[1])
        order = np.argsort(flat, axis=1, kind="stable")[:, :keep]
        parent, code = np.divmod(order, codec.K)
        rows = np.arange(T)[:, None]
        residual = residual[rows, parent] - vecs[code]
        paths = np.concatenate([paths[rows, parent], code[..., None]], axis=-1)
    best = ((residual ** 2).sum(-1)).argmin(axis=1)
    return paths[np.arange(T), best].T.copy()


def rvq_decode(codegram: np.ndarray, codec: CodecParams, stages: int | None = None) -> np.ndarray:
    """Sum of per-stage decodes; ``stages`` limits decoding to the first n stages."""
    codegram = np.asarray(codegram)
    if codegram.ndim != 2 or codegram.shape[0] != codec.Q:
        raise ContractError(f"codegram must be ({codec.Q}, T), got {codegram.shape}")
    if codegram.size and (codegram.min() < 0 or codegram.max() >= codec.K):
        raise ContractError("codegram contains the MASK sentinel or out-of-range ids; "
                            "decode needs a complete codegram")
    n = codec.Q if stages is None else stages
    out = np.zeros((codegram.shape[1], codec.C))
    for q in range(n):
        out += codec.stages[q].code_vectors()[codegram[q]]
    return out


def export_embedding_init(codec: CodecParams, d: int, rng: np.random.Generator,
                          std: float = 0.02) -> list[np.ndarray]:
    """Per-stage (K+1, d) tables: rows 0..K-1 are the first d channels of each
    decoded code; row K (the MASK entry) is drawn fresh from N(0, std)."""
    if d > codec.C:
        raise ContractError(f"embedding width d={d} exceeds codec feature dim {codec.C}")
    tables = []
    for st in codec.stages:
        rows = st.code_vectors()[:, :d]
        mask_row = rng.normal(0.0, std, size=(1, d))
        tables.append(np.vstack([rows, mask_row]))
    return tables
