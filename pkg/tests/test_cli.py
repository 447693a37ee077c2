import json
import os
import subprocess
import sys

import numpy as np
import pytest

from maskgram.cli import main
from maskgram.wavio import read_wav


def run(*args):
    return main([str(a) for a in args])


class TestExitCodes:
    def test_version_and_help(self, capsys):
        assert run("--version") == 0
        assert run("train", "--help") == 0

    def test_unknown_command(self):
        assert run("frobnicate") == 1

    def test_unknown_flag(self):
        assert run("train", "--bogus") == 1

    def test_bad_kd_choice(self):
        assert run("train", "--kd", "hubert") == 1

    def test_unknown_config_key(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[train]\nwat = 1\n")
        assert run("synth-data", "--config", p, "--workdir", tmp_path / "w") == 1

    def test_missing_manifest_is_io_error(self, tmp_path):
        assert run("train-codec", "--workdir", tmp_path / "w") == 2

    def test_missing_model_is_io_error(self, tmp_path):
        wav = tmp_path / "x.wav"
        assert run("restore", "--in", wav, "--out", tmp_path / "y.wav",
                   "--workdir", tmp_path / "w") == 2

    def test_l9_k500_without_codebook_names_train_teacher(self, tmp_path, tiny_ini, capsys):
        w = tmp_path / "w"
        assert run("synth-data", "--config", tiny_ini, "--workdir", w, "--no-wav") == 0
        assert run("train", "--config", tiny_ini, "--workdir", w, "--kd", "l9-k500") == 1
        assert "train-teacher" in capsys.readouterr().err

    def test_selftest(self):
        assert run("selftest") == 0


def test_full_pipeline(tmp_path, tiny_ini):
    w = tmp_path / "w"
    common = ["--config", tiny_ini, "--workdir", w]
    assert run("synth-data", *common) == 0
    assert (w / "manifest.jsonl").exists()
    assert (w / "wav" / "holdout-00000_distorted.wav").exists()
    assert run("train-codec", *common) == 0
    assert run("train-teacher", *common) == 0
    assert run("train", *common, "--kd", "l9-k500", "--steps", 3) == 0
    log_lines = (w / "train_log.tsv").read_text().splitlines()
    assert log_lines[0].split("\t")[0] == "step" and len(log_lines) == 4

    src = w / "wav" / "holdout-00000_distorted.wav"
    out = tmp_path / "restored.wav"
    assert run("restore", "--in", src, "--out", out, "--model", w / "model.mskg",
               "--codec", w / "codec.mskg", "--guidance", 0) == 0
    a, b = read_wav(src), read_wav(out)
    assert abs(len(a) - len(b)) <= 64 and np.all(np.isfinite(b.samples))

    assert run("eval", "--model", w / "model.mskg", "--workdir", w, "--limit", 1) == 0
    report = json.loads((w / "eval.json").read_text())
    assert {"lsd_restored", "lsd_distorted", "masked_token_accuracy",
            "kd_prediction_error"} <= set(report["summary"])


def test_codec_config_mismatch_rejected(tmp_path, tiny_ini, capsys):
    w = tmp_path / "w"
    common = ["--config", tiny_ini, "--workdir", w]
    assert run("synth-data", *common, "--no-wav") == 0
    assert run("train-codec", *common) == 0
    other = tmp_path / "other.ini"
    other.write_text(tiny_ini.read_text().replace("K = 8", "K = 16"))
    assert run("train", "--config", other, "--workdir", w, "--kd", "none") == 1
    assert "K=8" in capsys.readouterr().err


def test_gradcheck_subprocess():
    env = dict(os.environ, MASKGRAM_THREADS="1")
    proc = subprocess.run([sys.executable, "-m", "maskgram.cli", "gradcheck"], env=env,
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert "max rel error" in proc.stderr
