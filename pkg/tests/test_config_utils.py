# tests/test_config_utils.py

import pytest

from swampkit.config_utils import default_configs_dir_fn, default_stage_dir_fn, deps_path, outs_path


def test_outs_path_simple():
    assert outs_path("model.ckpt") == "${outs:model.ckpt}"


def test_deps_path_simple():
    assert deps_path("dataset.swmp") == "${deps:dataset.swmp}"


def test_deps_path_with_stage_and_name():
    def dummy_stage_dir_fn(stage, name):
        return f"mock_artifacts/{stage}/{name}"

    expected = "${deps:mock_artifacts/train/swamp/run/model.ckpt}"
    assert deps_path("run/model.ckpt", "train", "swamp", stage_dir_fn=dummy_stage_dir_fn) == expected


def test_deps_path_missing_input_name():
    with pytest.raises(ValueError, match="input_name must be specified"):
        deps_path("model.ckpt", input_stage="train", stage_dir_fn=lambda s, n: "")


def test_default_dirs_share_a_root():
    stage_dir = default_stage_dir_fn("ablate", "K")
    configs_dir = default_configs_dir_fn("ablate")
    root = stage_dir.split("/")[0]
    assert stage_dir == f"{root}/ablate/K"
    assert configs_dir == f"{root}/configs/ablate"
    assert default_stage_dir_fn(None, "x") == f"{root}/x"
