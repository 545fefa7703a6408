"""Run configuration: defaults, YAML/JSON file loading and CLI overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..flows.training import FlowConfig
from ..mixture import Stage2Config
from ..targets import FAMILIES, SPLIT_SIZES

MODELS = ("amf_vi", "realnvp", "maf", "rbig")
EXPERT_ORDER = ("realnvp", "maf", "rbig")


class ConfigError(ValueError):
    pass


@dataclass
class MetricConfig:
    n_eval: int = SPLIT_SIZES["eval"]
    n_kl: int = 5000
    n_entropy: int = 20_000
    n_transport: int = 2000  # per side, for W2 and MMD
    bandwidth: float | None = None


@dataclass
class PlotConfig:
    n_points: int = 2000
    seed: int = 0
    limit: float = 6.0


@dataclass
class RunConfig:
    datasets: list = field(default_factory=lambda: list(FAMILIES))
    models: list = field(default_factory=lambda: list(MODELS))
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    out: str = "out"
    workers: int = 1
    train_size: int = SPLIT_SIZES["train"]
    flow: FlowConfig = field(default_factory=FlowConfig)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    plot: PlotConfig = field(default_factory=PlotConfig)
    # per-kind Stage-1 epoch overrides, e.g. {"maf": 0} for a crippled expert
    epochs_override: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if not self.datasets or not self.models or not self.seeds:
            raise ConfigError("datasets, models and seeds must be nonempty")
        bad = [d for d in self.datasets if d not in FAMILIES]
        if bad:
            raise ConfigError(f"unknown datasets {bad}; choose from {FAMILIES}")
        bad = [m for m in self.models if m not in MODELS]
        if bad:
            raise ConfigError(f"unknown models {bad}; choose from {MODELS}")
        bad = [k for k in self.epochs_override if k not in EXPERT_ORDER]
        if bad:
            raise ConfigError(f"epochs_override keys must be expert kinds, got {bad}")
        if self.workers < 1 or self.train_size < 100:
            raise ConfigError("workers must be >= 1 and train_size >= 100")
        try:
            self.stage2.validate(len(EXPERT_ORDER))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.seeds = [int(s) for s in self.seeds]
        return self

    @property
    def experts_needed(self) -> list[str]:
        if "amf_vi" in self.models:
            return list(EXPERT_ORDER)
        return [k for k in EXPERT_ORDER if k in self.models]

    def flow_config_for(self, kind: str) -> FlowConfig:
        if kind in self.epochs_override:
            d = self.flow.to_dict()
            d["epochs"] = int(self.epochs_override[kind])
            return FlowConfig(**d)
        return self.flow

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flow"] = self.flow.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        sections = {"flow": FlowConfig, "stage2": Stage2Config, "metrics": MetricConfig,
                    "plot": PlotConfig}
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                try:
                    kwargs[key] = sections[key](**(value or {}))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad [{key}] section: {exc}") from exc
            else:
                kwargs[key] = value
        return cls(**kwargs)


def load_config(path=None, **overrides) -> RunConfig:
    """Read a YAML (or JSON) file, then apply non-None keyword overrides."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data).validate()
