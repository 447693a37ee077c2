"""Fast invariant checks behind ``maskgram selftest``.

Each check returns ``(ok, detail)``; :func:`run_all` runs them in order and
never raises, so one broken component does not hide the others.
"""

from __future__ import annotations

import itertools
import math
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from .codec import export_embedding_init, rvq_decode, rvq_encode, rvq_train
from .distortion import lsd, synth_clean
from .kmeans import kmeans_fit
from .masking import num_spans, span_mask
from .nn.checkpoint import decode_records, encode_records
from .sampler import DecodeConfig, decode_iterative, guided_logits, span_scores
from .wavio import read_wav, write_wav


def _random_logits(K: int, seed: int):
    rng = np.random.default_rng(seed)
    return lambda codegram, null: rng.normal(size=codegram.shape + (K,))


def check_schedule() -> tuple[bool, str]:
    N = 20
    for M0 in (1, 7, 1000):
        _, hist = decode_iterative(_random_logits(4, M0), 1, M0, 4, DecodeConfig(iterations=N))
        want = [math.floor(math.cos(math.pi * (i + 1) / (2 * N)) * M0) for i in range(N)]
        if hist != want:
            return False, f"M0={M0}: got {hist}"
    return True, "masked counts follow floor(cos(pi(i+1)/2N) M0) for M0 in 1, 7, 1000"


def check_cfg_identity() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    table_c = rng.normal(size=(3, 12, 6))
    table_u = rng.normal(size=(3, 12, 6))

    def guided_model(cg, null):
        return table_u if null else table_c

    a, _ = decode_iterative(guided_model, 3, 12, 6, DecodeConfig(guidance=0.0, seed=5))
    b, _ = decode_iterative(lambda cg, null: table_c, 3, 12, 6,
                            DecodeConfig(guidance=0.0, seed=5))
    same = np.array_equal(a, b) and np.array_equal(guided_logits(table_c, table_c, 3.7), table_c)
    return same, "w=0 matches conditional-only decode; l_c = l_u leaves logits unchanged"


def check_embedding_init() -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    codec = rvq_train(rng.normal(size=(400, 24)), Q=2, K=8, seed=1, kmeans_iters=10)
    d = 16
    tables = export_embedding_init(codec, d, np.random.default_rng(2))
    for q, st in enumerate(codec.stages):
        if not np.array_equal(tables[q][:8], st.code_vectors()[:, :d]):
            return False, f"stage {q} rows differ from projected codes"
        if any(np.array_equal(tables[q][8], tables[q][j]) for j in range(8)):
            return False, f"stage {q} MASK row duplicates a code row"
    return True, "embedding rows equal the first d channels of decoded codes"


def check_span_masking() -> tuple[bool, str]:
    if num_spans(0.5, 100, 10) != 7:
        return False, f"num_spans(0.5, 100, 10) = {num_spans(0.5, 100, 10)}"
    if float(span_scores(np.array([1.0, 9.0, 3.0, 2.0, 0.0]), 5)[0]) != 9.0:
        return False, "span score of {1,9,3,2,0} is not 9"
    ratios = [span_mask(4, 500, 0.5, 5, s).realized_ratio for s in range(100)]
    ok = abs(np.mean(ratios) - 0.5) <= 0.05
    return ok, f"mean realized ratio {np.mean(ratios):.3f} for r_g=0.5, l=5 over 100 seeds"


def check_rvq() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    frames = rng.normal(size=(300, 6))
    codec = rvq_train(frames, Q=2, K=4, seed=3, kmeans_iters=10)
    x = rng.normal(size=(50, 6))
    got = rvq_encode(x, codec)
    paths = np.array(list(itertools.product(range(4), repeat=2)))
    recon = np.stack([codec.stages[0].code_vectors()[i] + codec.stages[1].code_vectors()[j]
                      for i, j in paths])
    err = ((x[:, None, :] - recon[None]) ** 2).sum(-1)
    best = err.min(axis=1)
    mine = ((x - rvq_decode(got, codec)) ** 2).sum(-1)
    ok = np.allclose(mine, best, rtol=1e-12, atol=1e-12) and np.array_equal(got, rvq_encode(x, codec))
    return ok, "beam encode reaches the exhaustive K^Q optimum on 50 frames"


def check_kmeans() -> tuple[bool, str]:
    km = kmeans_fit(np.array([[0.0], [1.0], [8.0], [9.0]]), 2, seed=0)
    cents = sorted(km.centroids[:, 0].tolist())
    mono = all(b <= a + 1e-12 for a, b in zip(km.history, km.history[1:]))
    return cents == [0.5, 8.5] and mono, f"centroids {cents}"


def check_formats() -> tuple[bool, str]:
    rng = np.random.default_rng(4)
    recs = {"a": rng.normal(size=(3, 4)).astype(np.float32), "b": np.arange(5, dtype=np.int64)}
    back = decode_records(encode_records(recs))
    if not all(np.array_equal(recs[k], back[k]) and recs[k].dtype == back[k].dtype for k in recs):
        return False, "checkpoint records changed on round trip"
    wave = synth_clean(0, 0.1, 16000)
    wave.samples = wave.samples.astype(np.float32).astype(np.float64)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.wav"
        write_wav(path, wave)
        again = read_wav(path)
    ok = np.array_equal(again.samples, wave.samples) and again.sample_rate == 16000
    return ok and lsd(wave, again) == 0.0, "checkpoint and float32 WAV round-trip exactly"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "schedule": check_schedule,
    "cfg-identity": check_cfg_identity,
    "embedding-init": check_embedding_init,
    "span-masking": check_span_masking,
    "rvq": check_rvq,
    "kmeans": check_kmeans,
    "formats": check_formats,
}


def run_all() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # report, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
