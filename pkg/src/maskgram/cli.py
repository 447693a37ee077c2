"""Command-line entry point: ``maskgram <command> [options]``.

Exit status is 0 on success, 1 on a contract/config error (including bad
flags) and 2 on an I/O or artifact error.  Logs go to stderr; results go to
files.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

# BLAS reads these once at import, so cap threads before numpy is loaded
_THREADS = os.environ.get("MASKGRAM_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import json  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .config import RunConfig, parse_config  # noqa: E402
from .errors import ArtifactError, ContractError, NumericError  # noqa: E402

log = logging.getLogger("maskgram")

CONFIG_FLAGS = {
    # flag dest -> RunConfig key
    "seed": "seed", "steps": "steps", "batch_size": "batch_size", "lr": "learning_rate",
    "kd": "kd_variant", "span_length": "span_length", "n_clips": "n_clips",
    "holdout_clips": "holdout_clips", "guidance": "guidance", "iterations": "iterations",
    "window_seconds": "window_seconds", "precision": "precision", "workdir": "workdir",
}

COMPAT_KEYS = {
    "codec": ("sample_rate", "n_fft", "hop", "Q", "K", "code_dim"),
    "kmeans": ("teacher_seed", "teacher_layers", "teacher_dim", "teacher_frame", "K_t"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def thread_count() -> int:
    raw = os.environ.get("MASKGRAM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ContractError(f"MASKGRAM_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ContractError(f"MASKGRAM_THREADS must be a positive integer, got {raw!r}")
    return n


# artifacts ------------------------------------------------------------------

def _workdir(cfg: RunConfig) -> Path:
    return Path(cfg.workdir)


def _paths(cfg: RunConfig) -> dict[str, Path]:
    w = _workdir(cfg)
    return {"manifest": w / "manifest.jsonl", "codec": w / "codec.mskg",
            "kmeans": w / "teacher_kmeans.mskg", "model": w / "model.mskg",
            "log": w / "train_log.tsv", "eval": w / "eval.json", "wav": w / "wav"}


def check_compat(kind: str, stored: dict | None, cfg: RunConfig) -> None:
    """Refuse artifacts whose embedded config disagrees with the current one."""
    if not stored:
        raise ArtifactError(f"{kind} artifact carries no config; regenerate it")
    current = cfg.to_dict()
    bad = [k for k in COMPAT_KEYS[kind] if k in stored and stored[k] != current[k]]
    if bad:
        detail = ", ".join(f"{k}={stored[k]!r} (now {current[k]!r})" for k in bad)
        raise ContractError(f"{kind} artifact was built with {detail}")


def _load_manifest(cfg: RunConfig):
    from .data import Manifest
    path = _paths(cfg)["manifest"]
    if not path.exists():
        raise ArtifactError(f"no manifest at {path}; run `maskgram synth-data` first")
    return Manifest.load(path)


def _load_codec(cfg: RunConfig, path: Path | None = None):
    from .codec import CodecParams
    from .nn.checkpoint import load_records, unpack_json
    path = path or _paths(cfg)["codec"]
    if not path.exists():
        raise ArtifactError(f"no codec at {path}; run `maskgram train-codec` first")
    recs = load_records(path)
    check_compat("codec", unpack_json(recs["codec/meta"]).get("config"), cfg)
    return CodecParams.from_records(recs)


def _load_kmeans(cfg: RunConfig):
    from .kmeans import KMeansCodebook
    from .nn.checkpoint import load_records, unpack_json
    path = _paths(cfg)["kmeans"]
    if not path.exists():
        raise ContractError(f"--kd l9-k500 needs a teacher k-means codebook at {path}; "
                            "run `maskgram train-teacher` first")
    recs = load_records(path)
    check_compat("kmeans", unpack_json(recs["kmeans/meta"]).get("config"), cfg)
    return KMeansCodebook.from_records(recs)


def _load_model(path: Path):
    from .model import ModelParams
    if not path.exists():
        raise ArtifactError(f"no model checkpoint at {path}; run `maskgram train` first")
    return ModelParams.load(path)


def _model_config(params, args) -> RunConfig:
    """The checkpoint's resolved config, with decode-time flag overrides."""
    from .config import apply_overrides
    cfg = apply_overrides(RunConfig(), params.run_config) if params.run_config else _resolve(args)
    flags = {CONFIG_FLAGS[k]: getattr(args, k) for k in ("guidance", "iterations", "window_seconds",
                                                         "span_length", "workdir")
             if getattr(args, k, None) is not None}
    if getattr(args, "seed", None) is not None:
        flags["decode_seed"] = args.seed
    return apply_overrides(cfg, flags).validate()


def _decode_config(cfg: RunConfig):
    from .sampler import DecodeConfig
    return DecodeConfig(iterations=cfg.iterations, guidance=cfg.guidance, seed=cfg.decode_seed,
                        span_length=cfg.span_length if cfg.span_length > 1 else 0,
                        window_seconds=cfg.window_seconds, noise_v0=cfg.noise_v0,
                        confidence=cfg.confidence, phase_iters=cfg.phase_iters)


# commands -------------------------------------------------------------------

def cmd_synth_data(args, cfg: RunConfig) -> int:
    from .data import Example, build_manifest, distort, load_clean
    from .wavio import write_wav
    paths = _paths(cfg)
    paths["wav"].mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(cfg)
    manifest.save(paths["manifest"])
    if not args.no_wav:
        for rec in manifest.records:
            clean = load_clean(rec, cfg)
            write_wav(paths["wav"] / f"{rec.id}_clean.wav", clean)
            if rec.distortion is not None:
                d = distort(Example(rec, clean, None, None, None), rec.distortion)
                write_wav(paths["wav"] / f"{rec.id}_distorted.wav", d)
    log.info("wrote %d records to %s", len(manifest.records), paths["manifest"])
    return 0


def cmd_train_codec(args, cfg: RunConfig) -> int:
    from .codec import rvq_train
    from .data import codec_corpus
    manifest = _load_manifest(cfg)
    frames = codec_corpus(manifest.split("train")[:cfg.codec_clips], cfg)
    codec = rvq_train(frames, cfg.Q, cfg.K, seed=cfg.seed, code_dim=cfg.code_dim,
                      kmeans_iters=cfg.codec_kmeans_iters, beam=cfg.codec_beam)
    codec.save(_paths(cfg)["codec"], cfg.to_dict())
    log.info("codec trained on %d frames; per-stage MSE %s", frames.shape[0],
             ", ".join(f"{m:.5f}" for m in codec.train_mse))
    return 0


def cmd_train_teacher(args, cfg: RunConfig) -> int:
    from .data import teacher_corpus
    from .kmeans import kmeans_fit
    from .teacher import TARGET_LAYER
    manifest = _load_manifest(cfg)
    feats = teacher_corpus(manifest.split("train"), cfg, TARGET_LAYER)
    km = kmeans_fit(feats, cfg.K_t, max_iters=cfg.teacher_kmeans_iters, seed=cfg.teacher_seed)
    km.save(_paths(cfg)["kmeans"], cfg.to_dict())
    log.info("k-means K=%d on %d teacher frames, inertia %.4f after %d iterations",
             cfg.K_t, feats.shape[0], km.inertia, km.iterations)
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from .data import prepare_examples
    from .train import train
    paths = _paths(cfg)
    kmeans = _load_kmeans(cfg) if cfg.kd_variant == "l9-k500" else None
    manifest = _load_manifest(cfg)
    codec = _load_codec(cfg)
    examples = prepare_examples(manifest.split("train"), cfg, codec, kmeans=kmeans)
    with open(paths["log"], "w") as fh:
        result = train(cfg, examples, codec, probe_set=examples[:cfg.probe_clips], log_file=fh,
                       probe_every=max(1, cfg.steps // 10), threads=thread_count())
    out = Path(args.out) if args.out else paths["model"]
    result.params.save(out)
    first, last = result.probe[0], result.probe[-1]
    log.info("trained %d steps in %.1fs; probe CE %.4f -> %.4f, KD %.4f -> %.4f; saved %s",
             cfg.steps, result.seconds, first[1], last[1], first[2], last[2], out)
    return 0


def cmd_restore(args, cfg_unused) -> int:
    from .sampler import restore_waveform
    from .wavio import read_wav, write_wav
    params = _load_model(Path(args.model) if args.model else _paths(_resolve(args))["model"])
    cfg = _model_config(params, args)
    codec = _load_codec(cfg, Path(args.codec) if args.codec else None)
    wave = read_wav(args.inp)
    out = restore_waveform(wave, params, codec, _decode_config(cfg), cfg.sample_rate,
                           cfg.n_fft, cfg.hop, verbose=args.verbose > 0)
    write_wav(args.out, out)
    log.info("restored %.2fs of audio to %s", out.duration, args.out)
    return 0


def cmd_eval(args, cfg_unused) -> int:
    from .data import Manifest, distort, prepare_examples
    from .distortion import DistortionSpec, lsd
    from .features import stft_compressed
    from .masking import token_mask
    from .model import encode_speech, generator_logits
    from .nn.tensor import no_grad
    from .sampler import restore_waveform
    from .train import heldout_kd_mse
    params = _load_model(Path(args.model) if args.model else _paths(_resolve(args))["model"])
    cfg = _model_config(params, args)
    codec = _load_codec(cfg, Path(args.codec) if args.codec else None)
    manifest = Manifest.load(args.manifest) if args.manifest else _load_manifest(cfg)
    records = manifest.split(args.split)
    if args.limit:
        records = records[:args.limit]
    if not records:
        raise ContractError(f"manifest has no records in split {args.split!r}")
    kmeans = _load_kmeans(cfg) if cfg.kd_variant == "l9-k500" else None
    examples = prepare_examples(records, cfg, codec, kmeans=kmeans)
    dcfg = _decode_config(cfg)
    rng = np.random.default_rng(cfg.decode_seed)
    rows = []
    for e in examples:
        spec = e.record.distortion or DistortionSpec(stages=())
        dist = distort(e, spec)
        restored = restore_waveform(dist, params, codec, dcfg, cfg.sample_rate, cfg.n_fft, cfg.hop)
        feats = stft_compressed(dist, cfg.n_fft, cfg.hop).frames
        mask = token_mask(*e.codegram.shape, 0.5, rng).grid
        with no_grad():
            cond, _ = encode_speech(params, feats, "eval")
            logits = generator_logits(params, np.where(mask, cfg.K, e.codegram), cond).data
        acc = float((logits.argmax(-1)[mask] == e.codegram[mask]).mean())
        rows.append({"id": e.record.id, "lsd_distorted": lsd(e.clean, dist),
                     "lsd_restored": lsd(e.clean, restored), "masked_token_accuracy": acc})
    summary = {k: float(np.mean([r[k] for r in rows]))
               for k in ("lsd_distorted", "lsd_restored", "masked_token_accuracy")}
    if cfg.kd_variant != "none":
        summary["kd_prediction_error"] = heldout_kd_mse(params, examples, cfg)
    report = {"version": __version__, "config": cfg.to_dict(), "summary": summary, "clips": rows}
    out = Path(args.out) if args.out else _paths(cfg)["eval"]
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    log.info("eval on %d clips: %s (report: %s)", len(rows),
             ", ".join(f"{k}={v:.4f}" for k, v in summary.items()), out)
    return 0


def cmd_gradcheck(args, cfg_unused) -> int:
    from .gradcheck import check_gradients, toy_problem
    worst = 0.0
    for variant in args.variants:
        params, batch = toy_problem(seed=args.seed or 0, kd_variant=variant)
        rep = check_gradients(params, batch)
        worst = max(worst, rep.max_rel_error)
        log.info("gradcheck kd=%s: %d elements, max rel error %.3e (%.1fs)",
                 variant, rep.checked, rep.max_rel_error, rep.seconds)
    if worst >= args.tolerance:
        log.error("gradient check failed: max rel error %.3e >= %.1e", worst, args.tolerance)
        return 1
    return 0


def cmd_selftest(args, cfg_unused) -> int:
    from .selftest import run_all
    failed = 0
    for name, ok, detail in run_all():
        log.info("%s %s: %s", "PASS" if ok else "FAIL", name, detail)
        failed += not ok
    return 1 if failed else 0


# parser ---------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="toy", help="toy | paper | paper-large | gradcheck")
    p.add_argument("--config", help="INI config file layered over the preset")
    p.add_argument("--workdir", help="artifact directory (default: work)")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    from .teacher import KD_VARIANTS
    parser = _Parser(prog="maskgram", description="Masked acoustic-token speech restoration.")
    parser.add_argument("--version", action="version", version=f"maskgram {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write the synthetic manifest and WAVs")
    _common(p)
    p.add_argument("--n-clips", type=int)
    p.add_argument("--holdout-clips", type=int)
    p.add_argument("--no-wav", action="store_true", help="manifest only")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train-codec", help="fit the RVQ tokenizer on clean clips")
    _common(p)
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("train-teacher", help="fit k-means on teacher layer outputs")
    _common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train", help="train the encoder and generator")
    _common(p)
    p.add_argument("--kd", choices=KD_VARIANTS + ("stft-44.1k", "stft-16k"))
    p.add_argument("--span-length", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--precision", choices=("float32", "float64"))
    p.add_argument("--out", help="checkpoint path (default: <workdir>/model.mskg)")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("restore", cmd_restore, "restore one WAV file"),
                                 ("eval", cmd_eval, "LSD, token accuracy and KD error on a manifest")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        if name == "restore":
            p.add_argument("--in", dest="inp", required=True)
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--manifest")
            p.add_argument("--split", default="holdout")
            p.add_argument("--limit", type=int)
            p.add_argument("--out", help="report path (default: <workdir>/eval.json)")
        p.add_argument("--model")
        p.add_argument("--codec")
        p.add_argument("--guidance", type=float)
        p.add_argument("--iterations", type=int)
        p.add_argument("--window-seconds", type=float)
        p.add_argument("--span-length", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter")
    _common(p)
    p.add_argument("--variants", nargs="+", default=["avg-feature"])
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run the fast invariant suites")
    _common(p)
    p.set_defaults(func=cmd_selftest)
    return parser


def _resolve(args) -> RunConfig:
    flags = {key: getattr(args, dest) for dest, key in CONFIG_FLAGS.items()
             if getattr(args, dest, None) is not None}
    return parse_config(args.preset, args.config, flags)


def _setup_logging(verbosity: int) -> None:
    level = logging.DEBUG if verbosity > 1 else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("maskgram")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        cfg = None
        if args.func in (cmd_synth_data, cmd_train_codec, cmd_train_teacher, cmd_train):
            cfg = _resolve(args)
            _workdir(cfg).mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg)
    except (ContractError, NumericError) as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:  # ArtifactError and plain I/O failures
        log.error("%s", exc)
        return 2


def run_command(argv: list[str]) -> int:
    return main(argv)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
