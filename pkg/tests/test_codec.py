import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskgram.codec import CodecParams, export_embedding_init, rvq_decode, rvq_encode, rvq_train
from maskgram.errors import ContractError


@pytest.fixture(scope="module")
def corpus():
    rng = np.random.default_rng(0)
    return rng.normal(size=(600, 12)) @ rng.normal(size=(12, 12))


@pytest.fixture(scope="module")
def codec(corpus):
    return rvq_train(corpus, Q=4, K=8, seed=0, kmeans_iters=20)


def test_stage_mse_non_increasing(codec):
    assert all(b <= a + 1e-12 for a, b in zip(codec.train_mse, codec.train_mse[1:]))


def test_prefix_decode_error_non_increasing(codec, corpus):
    codes = rvq_encode(corpus, codec)
    errs = [((corpus - rvq_decode(codes, codec, stages=n)) ** 2).mean() for n in range(5)]
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))


def test_encode_decode_deterministic(codec, corpus):
    a = rvq_encode(corpus[:40], codec)
    assert np.array_equal(a, rvq_encode(corpus[:40], codec))
    assert np.array_equal(rvq_decode(a, codec), rvq_decode(a, codec))
    assert a.shape == (4, 40) and a.dtype == np.int64


def test_exhaustive_oracle_k4_q2():
    rng = np.random.default_rng(5)
    codec = rvq_train(rng.normal(size=(400, 6)), Q=2, K=4, seed=5, kmeans_iters=20)
    x = rng.normal(size=(100, 6))
    v0, v1 = (st.code_vectors() for st in codec.stages)
    best = np.min([((x - v0[i] - v1[j]) ** 2).sum(-1)
                   for i, j in itertools.product(range(4), repeat=2)], axis=0)
    got = ((x - rvq_decode(rvq_encode(x, codec), codec)) ** 2).sum(-1)
    np.testing.assert_allclose(got, best, rtol=1e-12, atol=1e-12)


def test_beam_never_worse_than_greedy(codec, corpus):
    greedy = ((corpus - rvq_decode(rvq_encode(corpus, codec, beam=1), codec)) ** 2).sum(-1)
    beam = ((corpus - rvq_decode(rvq_encode(corpus, codec), codec)) ** 2).sum(-1)
    assert np.all(beam <= greedy + 1e-9)


def test_codeword_round_trips(codec):
    # decoding a single code path and re-encoding it finds an equally good path
    path = np.array([[3], [1], [7], [0]])
    x = rvq_decode(path, codec)
    back = rvq_decode(rvq_encode(x, codec), codec)
    assert ((x - back) ** 2).sum() <= 1e-12


def test_mask_sentinel_rejected(codec):
    with pytest.raises(ContractError):
        rvq_decode(np.full((4, 3), 8), codec)


def test_wrong_width_rejected(codec):
    with pytest.raises(ContractError):
        rvq_encode(np.zeros((3, 5)), codec)


def test_too_few_frames():
    with pytest.raises(ContractError):
        rvq_train(np.zeros((3, 4)), Q=1, K=8)


def test_save_load_bit_exact(codec, tmp_path):
    codec.save(tmp_path / "c.mskg", config={"Q": 4})
    back = CodecParams.load(tmp_path / "c.mskg")
    for a, b in zip(codec.stages, back.stages):
        assert np.array_equal(a.code_vectors(), b.code_vectors())
    assert (tmp_path / "c.mskg").read_bytes() == _resave(back, tmp_path)


def _resave(codec, tmp_path):
    codec.save(tmp_path / "again.mskg", config={"Q": 4})
    return (tmp_path / "again.mskg").read_bytes()


class TestEmbeddingInit:
    def test_rows_equal_projected_codes(self, codec):
        tables = export_embedding_init(codec, 6, np.random.default_rng(0))
        for q, st in enumerate(codec.stages):
            assert tables[q].shape == (9, 6)
            assert np.array_equal(tables[q][:8], st.code_vectors()[:, :6])
            assert not any(np.array_equal(tables[q][8], tables[q][j]) for j in range(8))

    def test_width_too_large(self, codec):
        with pytest.raises(ContractError):
            export_embedding_init(codec, 13, np.random.default_rng(0))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_codes_in_range(seed):
    rng = np.random.default_rng(seed)
    codec = rvq_train(rng.normal(size=(40, 5)), Q=2, K=4, seed=seed, kmeans_iters=5)
    codes = rvq_encode(rng.normal(size=(9, 5)) * 10, codec)
    assert codes.min() >= 0 and codes.max() < 4
