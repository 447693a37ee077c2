import pytest

from maskgram.config import PRESETS, RunConfig, parse_config, write_config_file
from maskgram.errors import ConfigError


def test_empty_input_gives_toy_defaults():
    assert parse_config("toy").to_dict() == RunConfig().validate().to_dict()


def test_file_then_flag_precedence(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nsteps = 50\nbatch_size = 4\n")
    cfg = parse_config("toy", path, {"steps": 7})
    assert cfg.steps == 7 and cfg.batch_size == 4


def test_none_flags_do_not_override(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nsteps = 50\n")
    assert parse_config("toy", path, {"steps": None}).steps == 50


def test_unknown_key_named(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nstepz = 5\n")
    with pytest.raises(ConfigError, match="stepz"):
        parse_config("toy", path)


def test_key_in_wrong_section(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[model]\nsteps = 5\n")
    with pytest.raises(ConfigError, match=r"\[train\]"):
        parse_config("toy", path)


def test_duplicate_key_is_conflict(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nsteps = 5\nsteps = 6\n")
    with pytest.raises(ConfigError):
        parse_config("toy", path)


def test_unknown_flag():
    with pytest.raises(ConfigError, match="nope"):
        parse_config("toy", flags={"nope": 1})


def test_bad_value():
    with pytest.raises(ConfigError, match="steps"):
        parse_config("toy", flags={"steps": "many"})


@pytest.mark.parametrize("flags", [{"d": 30, "n_heads": 4}, {"precision": "float16"},
                                   {"kd_variant": "hubert"}, {"distortions": "noise,echo"},
                                   {"guidance": -1.0}])
def test_validation(flags):
    with pytest.raises(ConfigError if "kd_variant" not in flags else Exception):
        parse_config("toy", flags=flags)


def test_kd_aliases_canonicalized():
    assert parse_config("toy", flags={"kd_variant": "STFT-16k"}).kd_variant == "stft-low"


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_presets_round_trip_through_file(preset, tmp_path):
    cfg = parse_config(preset)
    write_config_file(cfg, tmp_path / "c.ini")
    again = parse_config(preset, tmp_path / "c.ini")
    assert again.to_dict() == cfg.to_dict()


def test_paper_preset_dimensions():
    cfg = parse_config("paper")
    assert (cfg.d, cfg.n_blocks_encoder, cfg.n_blocks_generator, cfg.Q, cfg.K) == (512, 6, 8, 9, 1024)
    assert cfg.channels == 1025


def test_json_round_trip():
    cfg = parse_config("toy", flags={"seed": 9})
    assert RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
