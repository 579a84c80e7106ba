"""Config parsing, presets, overrides, validation."""

import pytest

from adasap.config import build_config, parse_config_file, write_config


def test_defaults_validate():
    cfg = build_config()
    cfg.validate()
    assert cfg.optimizer == "adasap"
    assert cfg.rho_min < cfg.rho_max


def test_parse_file_and_comments(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(
        "# a comment\n"
        "seed = 7\n"
        "lr_peak = 0.2   # trailing comment\n"
        "conv_channels = 4,8\n"
        "corruption_kinds = gaussian_noise, box_blur\n"
        "\n"
    )
    values = parse_config_file(p)
    assert values == {
        "seed": 7,
        "lr_peak": 0.2,
        "conv_channels": (4, 8),
        "corruption_kinds": ("gaussian_noise", "box_blur"),
    }


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("turbo = on\n")
    with pytest.raises(KeyError):
        parse_config_file(p)


def test_malformed_line_rejected(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("just words\n")
    with pytest.raises(ValueError):
        parse_config_file(p)


def test_cli_override_beats_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("seed = 7\nlr_peak = 0.2\n")
    cfg = build_config(parse_config_file(p), {"seed": "11"})
    assert cfg.seed == 11
    assert cfg.lr_peak == 0.2


def test_optimizer_presets_fill_rho_keys():
    sgd = build_config({}, {"optimizer": "sgd"})
    assert sgd.rho_min == sgd.rho_max == 0.0 and sgd.finetune_rho == 0.0
    sam = build_config({}, {"optimizer": "sam"})
    assert sam.transform == "identity" and sam.rho_min == sam.rho_max > 0
    asam = build_config({}, {"optimizer": "asam"})
    assert asam.transform == "elementwise_abs_weight" and asam.rho_min == asam.rho_max
    ada = build_config({}, {"optimizer": "adasap"})
    assert ada.rho_min < ada.rho_max


def test_explicit_keys_beat_preset():
    cfg = build_config({"optimizer": "adasap", "rho_max": 0.9})
    assert cfg.rho_max == 0.9
    assert cfg.rho_min == 0.01  # untouched preset key still applies


def test_paper_preset_scale():
    cfg = build_config({}, {"preset": "paper", "optimizer": "adasap"})
    assert cfg.lr_peak == 1.024
    assert cfg.momentum == 0.875
    assert cfg.weight_decay == 3.05e-05
    assert cfg.warmup_epochs == 10
    assert cfg.finetune_epochs == 79
    assert cfg.rho_min == 0.01 and cfg.rho_max == 2.0 and cfg.finetune_rho == 2.0
    assert cfg.prune_frequency == 30


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        build_config({}, {"optimizer": "adamw"})
    with pytest.raises(ValueError):
        build_config({}, {"prune_keep_fraction": "0"})
    with pytest.raises(ValueError):
        build_config({}, {"warmup_epochs": "-1"})
    with pytest.raises(ValueError):
        build_config({}, {"finetune_mode": "sometimes"})
    with pytest.raises(ValueError):
        build_config({}, {"corruption_kinds": "motion_blur"})


def test_adaptive_finetune_needs_adaptive_bounds():
    with pytest.raises(ValueError):
        build_config({}, {"optimizer": "sam", "finetune_mode": "adaptive"})
    cfg = build_config({}, {"optimizer": "adasap", "finetune_mode": "adaptive"})
    assert cfg.finetune_mode == "adaptive"


def test_config_roundtrip_through_file(tmp_path):
    cfg = build_config({}, {"seed": 3, "n_train": 256, "optimizer": "sam"})
    write_config(cfg, tmp_path / "echo.cfg")
    reparsed = build_config(parse_config_file(tmp_path / "echo.cfg"))
    assert reparsed == cfg
