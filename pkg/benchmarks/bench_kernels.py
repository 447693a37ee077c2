"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from maskgram import _kernels


def cases(rng: np.random.Generator):
    x = rng.normal(size=(20000, 8))
    c = rng.normal(size=(64, 8))
    labels = rng.integers(0, 64, size=20000)
    yield "nearest_centroid 20000x8 vs 64", lambda b: _kernels.nearest_centroid(x, c, backend=b)
    xw = rng.normal(size=(5000, 257))
    cw = rng.normal(size=(64, 257))
    yield "nearest_centroid 5000x257 vs 64", lambda b: _kernels.nearest_centroid(xw, cw, backend=b)
    yield "cluster_sums 20000x8, k=64", lambda b: _kernels.cluster_sums(x, labels, 64, backend=b)
    rows = rng.integers(0, 9, size=4000)
    starts = rng.integers(0, 495, size=4000)

    def paint(b):
        grid = np.zeros((9, 500), dtype=np.uint8)
        _kernels.paint_spans(grid, rows, starts, 5, backend=b)
    yield "paint_spans 4000 spans on 9x500", paint


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["python"] + (["cython"] if _kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'kernel':36s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases(np.random.default_rng(0)):
        times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends]
        line = f"{name:36s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            line += f"{times[0] / times[1]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
