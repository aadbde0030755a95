# tests/test_config.py
import json

import pytest

from swampkit.config import (
    Assignment,
    LossMode,
    TrainConfig,
    load_train_config,
    save_train_config,
    train_config_from_dict,
)
from swampkit.errors import ConfigError


def test_defaults_match_benchmark_setup():
    cfg = TrainConfig()
    assert (cfg.num_classes, cfg.queue_capacity, cfg.batch_size, cfg.epochs) == (1000, 1280, 128, 100)
    assert (cfg.tau, cfg.eta, cfg.margin, cfg.lr, cfg.lam) == (0.01, 20.0, 0.1, 1e-3, 1.0)
    assert (cfg.embed_dim, cfg.hidden, cfg.sk_max_iters, cfg.sk_tol) == (5, 50, 100, 1e-6)
    assert cfg.assignment == Assignment.soft
    assert cfg.loss_mode == LossMode.swamp_combined


def test_enum_fields_accept_strings():
    cfg = TrainConfig(assignment="hard", loss_mode="contrastive_only", mining="sum")
    assert cfg.assignment == Assignment.hard
    assert cfg.to_dict()["loss_mode"] == "contrastive_only"


@pytest.mark.parametrize(
    "changes, field",
    [
        ({"tau": 0.0}, "tau"),
        ({"eta": -1.0}, "eta"),
        ({"num_classes": 0}, "num_classes"),
        ({"lam": -0.1}, "lam"),
        ({"queue_capacity": -5}, "queue_capacity"),
        ({"queue_capacity": 64, "batch_size": 128}, "queue_capacity"),
        ({"assignment": "fuzzy"}, "assignment"),
        ({"train_subset": 10}, "train_subset"),
    ],
)
def test_invalid_values_name_the_field(changes, field):
    with pytest.raises(ConfigError, match=field):
        TrainConfig(**changes)


def test_zero_queue_is_allowed():
    assert TrainConfig(queue_capacity=0).queue_capacity == 0


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="temperature"):
        train_config_from_dict({"temperature": 0.1})


def test_from_dict_type_error_names_key():
    with pytest.raises(ConfigError, match="epochs"):
        train_config_from_dict({"epochs": "many"})


def test_from_dict_coerces_strings():
    cfg = train_config_from_dict({"num_classes": "200", "lam": "0.5", "init": "warmstart"})
    assert cfg.num_classes == 200 and cfg.lam == 0.5 and cfg.init.value == "warmstart"


def test_with_updates_keeps_other_fields():
    cfg = TrainConfig(seed=4, epochs=3).with_updates(lam=0.0)
    assert (cfg.seed, cfg.epochs, cfg.lam) == (4, 3, 0.0)


def test_json_round_trip(tmp_path, tiny_config):
    path = save_train_config(tiny_config, tmp_path / "cfg.json")
    assert json.loads(path.read_text())["queue_capacity"] == 64
    assert load_train_config(path) == tiny_config


def test_load_none_gives_defaults():
    assert load_train_config(None) == TrainConfig()


def test_load_rejects_unknown_key(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epochs": 2, "lambda": 0.5}))
    with pytest.raises(ConfigError, match="lambda"):
        load_train_config(path)


def test_load_rejects_malformed_files(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text('{"epochs": [1,')
    with pytest.raises(ConfigError):
        load_train_config(broken)
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_train_config(listing)


def test_missing_file_is_an_io_error(tmp_path):
    with pytest.raises(OSError):
        load_train_config(tmp_path / "absent.json")
