import logging

import pytest

from fusiondet.config import PipelineConfig
from fusiondet.io import SceneDataset
from fusiondet.models import IDD_PARTITION
from fusiondet.simulator import SimConfig, generate
from tests.builders import SMALL_PARTITION, header, overlapping_scene

CONFUSABLE_PAIRS = [[9, 10], [3, 11], [0, 12], [2, 13]]


@pytest.fixture()
def partition():
    return SMALL_PARTITION


@pytest.fixture()
def idd_partition():
    return IDD_PARTITION


@pytest.fixture()
def small_header():
    return header()


@pytest.fixture()
def hand_scene():
    return overlapping_scene()


@pytest.fixture()
def log():
    return logging.getLogger("fusiondet.tests")


@pytest.fixture()
def fast_config():
    return PipelineConfig(epochs=3, lr=0.01, hidden_dim=16, trunk_dim=16)


@pytest.fixture(scope="session")
def confusable_sim():
    return SimConfig(scenes=40, confusable_pairs=CONFUSABLE_PAIRS, seed=3)


@pytest.fixture(scope="session")
def disjoint_sim():
    return SimConfig(scenes=40, seed=5)


@pytest.fixture(scope="session")
def confusable_dataset(confusable_sim):
    return SceneDataset(confusable_sim.header(), generate(confusable_sim))


@pytest.fixture(scope="session")
def confusable_test_dataset(confusable_sim):
    cfg = confusable_sim.copy(update={"seed": 4, "image_prefix": "test"})
    return SceneDataset(cfg.header(), generate(cfg))


@pytest.fixture()
def scenes_path(tmp_path):
    return str(tmp_path / "scenes.jsonl")
