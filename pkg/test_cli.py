#!/usr/bin/env python3
"""
Tests for configuration handling and the command line entry point
"""

import logging

import pytest

from pointcrack3d.cli import (
    EXIT_OK,
    EXIT_USAGE,
    PipelineConfig,
    build_parser,
    format_config,
    format_value,
    load_config,
    main,
    parse_config_text,
    parse_value,
    resolve_config,
    stage_seed,
)
from pointcrack3d.errors import ConfigError

SMALL_SYNTH = ["--synth-surfaces", "2", "--synth-cracks-per-surface", "3",
               "--synth-extent", "2,2", "--synth-density", "500"]


@pytest.fixture(autouse=True)
def restore_logging():
    """main() reconfigures the root logger; put it back afterwards"""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


def test_config_text_round_trip():
    config = PipelineConfig(seed=7, strides=(1.0, 0.5), sweep=True, link_distances=(),
                            hidden_widths=(32, 16, 8), confidence_threshold=0.59,
                            output_dir="runs/x")
    assert parse_config_text(format_config(config)) == config
    assert parse_config_text(format_config(PipelineConfig())) == PipelineConfig()


def test_config_text_values_and_comments():
    config = parse_config_text("""
        # post-processing
        confidence_threshold = 0.65
        link-distance = 0.05   # meters
        thresholds = 0.5, 0.59
        sweep = yes
    """)
    assert config.confidence_threshold == 0.65
    assert config.link_distance == 0.05
    assert config.thresholds == (0.5, 0.59)
    assert config.sweep is True
    assert config.min_cluster_size == PipelineConfig().min_cluster_size


@pytest.mark.parametrize("text", [
    "no_such_key = 1",
    "epochs = many",
    "sweep = perhaps",
    "just some words",
])
def test_bad_config_text(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_value_formatting():
    assert format_value(0.1) == "0.1"
    assert format_value((0.5, 0.25)) == "0.5,0.25"
    assert format_value(True) == "true"
    assert format_value(()) == ""
    assert parse_value("hidden_widths", "64, 32") == (64, 32)
    assert parse_value("strides", "") == ()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")
    assert main(["synth", "-c", str(tmp_path / "absent.cfg"),
                 "--output-dir", str(tmp_path)]) == EXIT_USAGE


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 3\nepochs = 12\nfeatures = xyz+i\n", encoding="utf-8")
    args = build_parser().parse_args(["train", "-c", str(path), "--seed", "9"])
    config = resolve_config(args)
    assert config.seed == 9
    assert config.epochs == 12
    assert config.features == "xyz+i"
    assert load_config(path).seed == 3


def test_stride_sweep_accepted():
    assert PipelineConfig().strides == (1.0,)
    args = build_parser().parse_args(["prepare", "--strides", "1.0,0.35,0.30,0.25"])
    assert resolve_config(args).strides == (1.0, 0.35, 0.30, 0.25)


@pytest.mark.parametrize("flags", [
    ["--strides", "1.5"],
    ["--voxel-size", "-1"],
    ["--confidence-threshold", "0"],
    ["--features", "xyz+normals"],
    ["--continuity-mode", "median"],
    ["--thresholds", "0.5,0.6", "--link-distances", "0.04"],
])
def test_invalid_settings_rejected(flags):
    with pytest.raises(ConfigError):
        resolve_config(build_parser().parse_args(["detect", *flags]))


def test_stage_seeds_are_stable_and_distinct():
    assert stage_seed(0, "split") == stage_seed(0, "split")
    assert stage_seed(0, "split") != stage_seed(0, "train")
    assert stage_seed(0, "split") != stage_seed(1, "split")


def test_training_config_from_pipeline():
    training = PipelineConfig(epochs=5, gamma=3.0, seed=2).training_config()
    assert (training.epochs, training.gamma) == (5, 3.0)
    assert training.seed == stage_seed(2, "train")


def test_usage_errors_exit_one(tmp_path):
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["synth", "--epochs", "ten", "--output-dir", str(tmp_path)]) == EXIT_USAGE


def test_invalid_extent_leaves_no_synth_dir(tmp_path):
    run = tmp_path / "run"
    code = main(["synth", "--output-dir", str(run), *SMALL_SYNTH, "--synth-extent", "0,2"])
    assert code == EXIT_USAGE
    assert not (run / "synth").exists()
    assert not [p for p in run.iterdir() if p.name.startswith(".synth-")]


def test_synth_is_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--output-dir", str(first), "--seed", "5", *SMALL_SYNTH]) == EXIT_OK
    assert main(["synth", "--output-dir", str(second), "--seed", "5", *SMALL_SYNTH]) == EXIT_OK

    names = sorted(p.name for p in (first / "synth").iterdir())
    assert names == ["crack_manifest.csv", "surface00.ply", "surface01.ply"]
    for name in names:
        assert (first / "synth" / name).read_bytes() == (second / "synth" / name).read_bytes()
    assert sorted(p.name for p in first.iterdir()) == ["pointcrack3d.log", "synth"]
    assert "synth finished" in (first / "pointcrack3d.log").read_text(encoding="utf-8")
