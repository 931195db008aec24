import json
import os

import pytest

from fusiondet.config import PRESETS, PipelineConfig, load_config, load_env_from_file
from fusiondet.exceptions import ConfigError
from fusiondet.models import PRESET_PARTITIONS


@pytest.fixture()
def clean_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("FUSIONDET_") and key not in ("FUSIONDET_SEED", "FUSIONDET_WORKERS"):
            monkeypatch.delenv(key)
    return monkeypatch


def write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f)
    return str(path)


def test_defaults(clean_env):
    cfg = load_config()
    assert cfg.tau == 0.5
    assert cfg.cross_iou == 0.5
    assert cfg.score_thresh == 0.7
    assert (cfg.epochs, cfg.lr) == (10, 0.001)
    assert cfg.shots == 10
    assert cfg.training_config().momentum == 0.9
    assert cfg.mining_config().removal_iou == 0.5


def test_precedence(clean_env, tmp_path):
    clean_env.setenv("FUSIONDET_TAU", "0.3")
    clean_env.setenv("FUSIONDET_LR", "0.02")
    clean_env.setenv("FUSIONDET_EPOCHS", "4")
    path = write_json(tmp_path / "cfg.json", {"lr": 0.05, "epochs": 6})
    cfg = load_config(path, {"epochs": 8, "cross_iou": None})
    assert cfg.tau == 0.3
    assert cfg.lr == 0.05
    assert cfg.epochs == 8
    assert cfg.cross_iou == 0.5


def test_presets(clean_env, tmp_path):
    assert load_config(overrides={"preset": "coco"}).tau == 0.8
    assert load_config(overrides={"preset": "coco", "tau": 0.6}).tau == 0.6
    clean_env.setenv("FUSIONDET_TAU", "0.4")
    assert load_config(overrides={"preset": "coco"}).tau == 0.4
    with pytest.raises(ConfigError):
        load_config(overrides={"preset": "voc"})


@pytest.mark.parametrize(
    "overrides",
    [{"tau": 1.5}, {"cross_iou": -0.1}, {"epochs": 0}, {"lr": -1.0}, {"momentum": 1.0}, {"workers": 0}],
)
def test_out_of_range_values(clean_env, overrides):
    with pytest.raises(ConfigError) as e:
        load_config(overrides=overrides)
    assert e.value.exit_code == 5


def test_unknown_field_and_bad_file(clean_env, tmp_path):
    with pytest.raises(ConfigError) as e:
        load_config(write_json(tmp_path / "cfg.json", {"taus": 0.5}))
    assert "taus" in str(e.value)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    with pytest.raises(ConfigError):
        load_config(write_json(tmp_path / "list.json", [1, 2]))


def test_env_from_file(clean_env, tmp_path):
    path = write_json(tmp_path / "env.json", {"FUSIONDET_CROSS_IOU": 0.35})
    clean_env.setenv("FUSIONDET_CROSS_IOU", "0.5")
    load_env_from_file(path)
    assert PipelineConfig().cross_iou == 0.35


def test_pytest_env_block_is_applied():
    assert os.environ["FUSIONDET_SEED"] == "0"
    assert PipelineConfig().workers == 1


def test_every_preset_names_a_partition():
    assert set(PRESETS) == set(PRESET_PARTITIONS)
    assert PRESET_PARTITIONS["coco"].num_base == 60
    assert "person" in PRESET_PARTITIONS["coco"].novel_classes
