import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maskgram import _kernels

BACKENDS = ["python"] + (["cython"] if _kernels.BACKEND == "cython" else [])
small = st.floats(-10, 10, allow_nan=False, width=64)


@pytest.mark.parametrize("backend", BACKENDS)
class TestKernels:
    def test_nearest_matches_brute_force(self, backend):
        rng = np.random.default_rng(0)
        x, c = rng.normal(size=(200, 5)), rng.normal(size=(7, 5))
        labels, d2 = _kernels.nearest_centroid(x, c, backend=backend)
        brute = ((x[:, None] - c[None]) ** 2).sum(-1)
        assert np.array_equal(labels, brute.argmin(1))
        np.testing.assert_allclose(d2, brute.min(1), rtol=1e-12)

    def test_tie_goes_to_lowest_index(self, backend):
        c = np.array([[5.0], [0.0], [3.0], [9.0], [2.0]])
        labels, _ = _kernels.nearest_centroid(np.array([[1.0]]), c, backend=backend)
        assert labels[0] == 1

    def test_cluster_sums(self, backend):
        x = np.arange(12.0).reshape(6, 2)
        sums, counts = _kernels.cluster_sums(x, np.array([0, 2, 0, 2, 2, 0]), 4, backend=backend)
        assert counts.tolist() == [3, 0, 3, 0]
        assert sums[0].tolist() == [0 + 4 + 10, 1 + 5 + 11]
        assert sums[1].tolist() == [0, 0]

    def test_paint_spans_clips_at_row_end(self, backend):
        grid = np.zeros((2, 6), np.uint8)
        _kernels.paint_spans(grid, [0, 1, 1], [4, 0, 1], 3, backend=backend)
        assert grid.tolist() == [[0, 0, 0, 0, 1, 1], [1, 1, 1, 1, 0, 0]]

    def test_dimension_mismatch(self, backend):
        with pytest.raises(ValueError):
            _kernels.nearest_centroid(np.zeros((2, 3)), np.zeros((2, 4)), backend=backend)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
@settings(max_examples=40)
@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 6)), elements=small),
       st.integers(1, 9), st.integers(0, 2**31))
def test_backends_agree_bitwise(x, k, seed):
    rng = np.random.default_rng(seed)
    c = np.round(rng.normal(size=(k, x.shape[1])), 1)
    la, da = _kernels.nearest_centroid(x, c, backend="python")
    lb, db = _kernels.nearest_centroid(x, c, backend="cython")
    assert np.array_equal(la, lb) and np.array_equal(da, db)
    sa, ca = _kernels.cluster_sums(x, la, k, backend="python")
    sb, cb = _kernels.cluster_sums(x, la, k, backend="cython")
    assert np.array_equal(ca, cb)
    np.testing.assert_allclose(sa, sb, rtol=1e-12, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.nearest_centroid(np.zeros((1, 1)), np.zeros((1, 1)), backend="fortran")


def test_pure_python_env_selects_fallback():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "from maskgram import _kernels; print(_kernels.BACKEND)"],
                         env={"MASKGRAM_PURE_PYTHON": "1", "PATH": ""}, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
