"""Benchmark harness wiring targets, experts, Stage 2 and metrics together."""

from .config import EXPERT_ORDER, MODELS, ConfigError, RunConfig, load_config
from .pipeline import BenchReport, aggregate, cmd_eval, cmd_generate, cmd_train, rank_flags

__all__ = ["BenchReport", "ConfigError", "EXPERT_ORDER", "MODELS", "RunConfig", "aggregate",
           "cmd_eval", "cmd_generate", "cmd_train", "load_config", "rank_flags"]
