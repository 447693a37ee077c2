"""k-means++ seeding and Lloyd iterations on top of the compiled kernels."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ContractError, NumericError
from .nn.checkpoint import load_records, pack_json, save_records, unpack_json


@dataclass
class KMeansCodebook:
    centroids: np.ndarray
    iterations: int = 0
    inertia: float = 0.0
    seed: int = 0
    history: list[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def records(self, prefix: str = "kmeans", config: dict | None = None) -> dict[str, np.ndarray]:
        meta = {"iterations": self.iterations, "inertia": self.inertia, "seed": self.seed,
                "history": self.history}
        if config is not None:
            meta["config"] = config
        return {f"{prefix}/centroids": self.centroids, f"{prefix}/meta": pack_json(meta)}

    @classmethod
    def from_records(cls, recs: dict[str, np.ndarray], prefix: str = "kmeans") -> "KMeansCodebook":
        try:
            meta = unpack_json(recs[f"{prefix}/meta"])
            cents = recs[f"{prefix}/centroids"]
        except KeyError as exc:
            raise ContractError(f"codebook records missing {exc}") from exc
        return cls(cents, meta["iterations"], meta["inertia"], meta["seed"], meta.get("history", []))

    def save(self, path: str | Path, config: dict | None = None) -> None:
        save_records(path, self.records(config=config))

    @classmethod
    def load(cls, path: str | Path) -> "KMeansCodebook":
        return cls.from_records(load_records(path))


def _plus_plus_init(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0.0:
            nxt = int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[idx].copy()


def kmeans_fit(frames: np.ndarray, K: int, max_iters: int = 100, seed: int = 0) -> KMeansCodebook:
    """Lloyd's algorithm from k-means++ seeds.

    Stops at an assignment fixpoint or after ``max_iters``.  Empty clusters are
    re-seeded at the point currently farthest from its centroid.  ``history``
    holds the inertia after each assignment step and never increases.
    """
    x = np.ascontiguousarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError("kmeans_fit expects an (N, C) array")
    N = x.shape[0]
    if K < 1:
        raise ContractError("K must be >= 1")
    if N < K:
        raise ContractError(f"need at least K={K} frames, got {N}")
    if not np.all(np.isfinite(x)):
        raise NumericError("k-means input contains non-finite values")
    rng = np.random.default_rng(seed)
    cents = _plus_plus_init(x, K, rng)
    labels, d2 = _kernels.nearest_centroid(x, cents)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        sums, counts = _kernels.cluster_sums(x, labels, K)
        empty = np.flatnonzero(counts == 0)
        nonempty = counts > 0
        cents[nonempty] = sums[nonempty] / counts[nonempty, None]
        if empty.size:
            far = d2.copy()
            for j in empty:
                p = int(np.argmax(far))
                cents[j] = x[p]
                far[p] = -1.0
        new_labels, d2 = _kernels.nearest_centroid(x, cents)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels) and not empty.size:
            labels = new_labels
            break
        labels = new_labels
    return KMeansCodebook(cents, it, history[-1], seed, history)


def kmeans_assign(frames: np.ndarray, codebook: KMeansCodebook | np.ndarray) -> np.ndarray:
    """Nearest centroid by squared Euclidean distance; lowest index wins ties."""
    cents = codebook.centroids if isinstance(codebook, KMeansCodebook) else np.asarray(codebook)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] != cents.shape[1]:
        raise ContractError(f"frame dim {frames.shape[-1]} != centroid dim {cents.shape[1]}")
    labels, _ = _kernels.nearest_centroid(frames.reshape(-1, cents.shape[1]), cents)
    return labels.reshape(frames.shape[:-1])


def inertia(frames: np.ndarray, codebook: KMeansCodebook) -> float:
    labels = kmeans_assign(frames, codebook)
    diff = np.asarray(frames, dtype=np.float64) - codebook.centroids[labels]
    return float((diff * diff).sum())
