"""CLI, run configuration, metrics and plots."""

from .config import ConfigError, RunConfig, build_config, default_config, load_config
from .metrics import MetricsSummary, episodes_csv
from .runner import RandomPolicy, ScriptedPolicy, episode_seed, evaluate, make_policy

__all__ = ["ConfigError", "RunConfig", "build_config", "default_config", "load_config", "MetricsSummary",
           "episodes_csv", "RandomPolicy", "ScriptedPolicy", "episode_seed", "evaluate", "make_policy"]
