import json
import logging
import os
from typing import Any, Dict, Optional

from pydantic import BaseSettings, ValidationError, validator

from fusiondet.exceptions import ConfigError
from fusiondet.fusionnet import TrainingConfig
from fusiondet.pseudolabel import MiningConfig

ENV_PREFIX = "FUSIONDET_"

# values a preset supplies unless set explicitly
PRESETS: Dict[str, Dict[str, Any]] = {
    "idd": {"tau": 0.5},
    "coco": {"tau": 0.8},
}


class PipelineConfig(BaseSettings):
    # proposal segregation IoA threshold
    tau: float = 0.5
    # cross-detector merge IoU threshold
    cross_iou: float = 0.5
    # pseudo-label mining
    score_thresh: float = 0.7
    removal_iou: float = 0.5
    # fusion training set / training
    match_iou: float = 0.5
    epochs: int = 10
    lr: float = 0.001
    batch_size: int = 8
    momentum: float = 0.9
    box_weight: float = 1.0
    hidden_dim: int = 128
    trunk_dim: int = 256
    seed: int = 0
    # fusion inference
    fusion_score_thresh: float = 0.05
    fusion_nms_iou: float = 0.5
    # metadata: annotated instances per novel class
    shots: int = 10
    workers: int = 1
    preset: Optional[str] = None

    class Config:
        env_prefix = ENV_PREFIX

    @validator(
        "tau",
        "cross_iou",
        "score_thresh",
        "removal_iou",
        "match_iou",
        "fusion_score_thresh",
        "fusion_nms_iou",
    )
    def unit_interval(cls, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError("must be in [0, 1]")
        return value

    @validator("epochs", "batch_size", "hidden_dim", "trunk_dim", "shots", "workers")
    def positive(cls, value):
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @validator("lr", "box_weight")
    def non_negative(cls, value):
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @validator("momentum")
    def momentum_range(cls, value):
        if not 0.0 <= value < 1.0:
            raise ValueError("must be in [0, 1)")
        return value

    @validator("preset")
    def known_preset(cls, value):
        if value is not None and value not in PRESETS:
            raise ValueError(f"unknown preset, expected one of {sorted(PRESETS)}")
        return value

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            seed=self.seed,
            momentum=self.momentum,
            box_weight=self.box_weight,
        )

    def mining_config(self) -> MiningConfig:
        return MiningConfig(score_thresh=self.score_thresh, removal_iou=self.removal_iou)


def load_env_from_file(file_path: str, log: logging.Logger = None):
    """Export every key of a flat JSON object as an environment variable."""
    if log:
        log.warning(f"loading env vars from {file_path}")
    with open(file_path, "r") as json_env:
        env_file = json.load(json_env)
        for env, value in env_file.items():
            os.environ[env] = str(value)


def load_config(
    path: str = None, overrides: Dict[str, Any] = None
) -> PipelineConfig:
    """
    Build a PipelineConfig. Precedence: overrides (CLI flags) > JSON file >
    FUSIONDET_* environment variables > preset > defaults.
    """
    values: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r") as f:
                values = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {path}: {e}")
        if not isinstance(values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    preset = values.get("preset") or os.environ.get(f"{ENV_PREFIX}PRESET")
    if preset in PRESETS:
        for key, value in PRESETS[preset].items():
            if key not in values and f"{ENV_PREFIX}{key.upper()}" not in os.environ:
                values[key] = value

    unknown = set(values) - set(PipelineConfig.__fields__)
    if unknown:
        raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
    try:
        return PipelineConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")
