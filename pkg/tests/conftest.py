import pytest

TINY_INI = """\
[audio]
sample_rate = 8000
n_fft = 256
hop = 64
clip_seconds = 0.5
window_seconds = 0.5

[model]
d = 16
n_heads = 2
n_blocks_encoder = 1
n_blocks_generator = 1
mlp_mult = 2

[codec]
Q = 2
K = 8
codec_clips = 8
codec_kmeans_iters = 10

[teacher]
K_t = 4
teacher_kmeans_iters = 10

[train]
n_clips = 8
holdout_clips = 2
steps = 4
batch_size = 2
probe_clips = 2
log_every = 1

[decode]
iterations = 3
phase_iters = 2
"""


@pytest.fixture
def tiny_ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def add(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
