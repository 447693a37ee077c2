"""Hot loops for k-means, RVQ search and span masking.

The compiled extension is used when it was built; otherwise (or when
``MASKGRAM_PURE_PYTHON=1``) the numpy versions are used.  ``BACKEND`` names
the active one.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MASKGRAM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError as exc:  # pragma: no cover - depends on the build
        warnings.warn(f"maskgram: compiled kernels unavailable ({exc}); using numpy fallback")
        _impl = _pykernels


def nearest_centroid(x, c, backend: str | None = None):
    """(labels, squared distances) of the nearest centroid per row; lowest index wins ties."""
    impl = _pick(backend)
    x = np.ascontiguousarray(x, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    if x.ndim != 2 or c.ndim != 2:
        raise ValueError("nearest_centroid expects 2-D arrays")
    return impl.nearest_centroid(x, c)


def cluster_sums(x, labels, k: int, backend: str | None = None):
    impl = _pick(backend)
    x = np.ascontiguousarray(x, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return impl.cluster_sums(x, labels, int(k))


def paint_spans(grid: np.ndarray, rows, starts, length: int, backend: str | None = None) -> None:
    """In-place: mark ``length``-long runs (clipped at the row end) in a uint8 grid."""
    impl = _pick(backend)
    if grid.dtype != np.uint8 or not grid.flags.c_contiguous:
        raise ValueError("paint_spans needs a C-contiguous uint8 grid")
    impl.paint_spans(grid, np.ascontiguousarray(rows, dtype=np.int64),
                     np.ascontiguousarray(starts, dtype=np.int64), int(length))


def _pick(backend: str | None):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled kernels are not available")
        return _impl
    raise ValueError(f"unknown backend {backend!r}")
