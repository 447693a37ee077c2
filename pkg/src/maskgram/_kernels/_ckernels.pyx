# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled nearest-centroid search and cluster reductions."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def nearest_centroid(const double[:, ::1] x, const double[:, ::1] c):
    """Index and squared distance of the nearest row of ``c`` for each row of ``x``.

    Distances are accumulated as sum((x - c)^2) in column order; ties go to the
    lowest index.
    """
    cdef Py_ssize_t n = x.shape[0], k = c.shape[0], dim = x.shape[1]
    if c.shape[1] != dim:
        raise ValueError("dimension mismatch between points and centroids")
    if k == 0:
        raise ValueError("need at least one centroid")
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    cdef long long[::1] lab = labels
    cdef double[::1] dis = dists
    cdef Py_ssize_t i, j, t, best
    cdef double acc, diff, best_d
    with nogil:
        for i in range(n):
            best = 0
            best_d = 0.0
            for t in range(dim):
                diff = x[i, t] - c[0, t]
                best_d = best_d + diff * diff
            for j in range(1, k):
                acc = 0.0
                for t in range(dim):
                    diff = x[i, t] - c[j, t]
                    acc = acc + diff * diff
                    if acc >= best_d:
                        break
                if acc < best_d:
                    best_d = acc
                    best = j
            lab[i] = best
            dis[i] = best_d
    return labels, dists


def cluster_sums(const double[:, ::1] x, const long long[::1] labels, Py_ssize_t k):
    """Per-cluster coordinate sums and member counts, accumulated in row order."""
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1], i, t
    cdef long long j
    sums = np.zeros((k, dim), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    cdef double[:, ::1] s = sums
    cdef long long[::1] cnt = counts
    with nogil:
        for i in range(n):
            j = labels[i]
            cnt[j] += 1
            for t in range(dim):
                s[j, t] = s[j, t] + x[i, t]
    return sums, counts


def paint_spans(cnp.uint8_t[:, ::1] grid, const long long[::1] rows,
                const long long[::1] starts, Py_ssize_t length):
    """Set ``grid[rows[s], starts[s]:starts[s]+length]`` for every span s."""
    cdef Py_ssize_t s, t, T = grid.shape[1], stop
    with nogil:
        for s in range(rows.shape[0]):
            stop = starts[s] + length
            if stop > T:
                stop = T
            for t in range(starts[s], stop):
                grid[rows[s], t] = 1
