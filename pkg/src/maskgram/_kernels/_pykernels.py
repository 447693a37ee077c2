"""Numpy implementations of the compiled kernels (same contracts)."""

from __future__ import annotations

import numpy as np


def nearest_centroid(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if c.shape[1] != x.shape[1]:
        raise ValueError("dimension mismatch between points and centroids")
    if c.shape[0] == 0:
        raise ValueError("need at least one centroid")
    labels = np.empty(x.shape[0], dtype=np.int64)
    dists = np.empty(x.shape[0], dtype=np.float64)
    # chunk rows to bound the (n, k, dim) temporary
    step = max(1, 1_000_000 // c.shape[0])
    for lo in range(0, x.shape[0], step):
        xs = x[lo:lo + step]
        # accumulate column by column: same summation order as the compiled loop
        d2 = np.zeros((xs.shape[0], c.shape[0]))
        for t in range(x.shape[1]):
            diff = xs[:, t, None] - c[None, :, t]
            d2 += diff * diff
        idx = np.argmin(d2, axis=1)  # first minimum, i.e. lowest index on ties
        labels[lo:lo + step] = idx
        dists[lo:lo + step] = d2[np.arange(idx.size), idx]
    return labels, dists


def cluster_sums(x: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    sums = np.zeros((k, x.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts


def paint_spans(grid: np.ndarray, rows: np.ndarray, starts: np.ndarray, length: int) -> None:
    if rows.size == 0:
        return
    T = grid.shape[1]
    cols = starts[:, None] + np.arange(length)[None, :]
    r = np.broadcast_to(rows[:, None], cols.shape)
    keep = cols < T
    grid[r[keep], cols[keep]] = 1
