"""Verifiable-reward RL with a group-relative length penalty, at desk scale."""

from .config import TrainConfig, load_config
from .taskgen import ConfigError, EnvModel, TaskFamily, TaskInstance

__all__ = ["ConfigError", "EnvModel", "TaskFamily", "TaskInstance", "TrainConfig", "load_config"]
