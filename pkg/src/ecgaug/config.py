"""Experiment configuration: nested dataclasses loaded from a YAML file.

Top-level keys mirror :class:`ExperimentConfig` fields; nested sections mirror
the sub-config dataclasses. Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import CLASSES, MINOR_CLASSES
from .clf import ClfTrainConfig
from .gan import GanTrainConfig
from .screen import DEFAULT_THRESHOLD, DEFAULT_THRESHOLDS
from .segment import SplitSpec

BALANCE_TARGET = 10_000
POOL_FACTOR = 3.0


@dataclass
class DataConfig:
    source: str = "wfdb"  # "wfdb" | "csv" | "synthetic"
    path: str | None = None
    channel: int = 0
    synthetic_per_class: dict[str, int] = field(default_factory=lambda: {"N": 1500, "f": 300, "j": 200})
    synthetic_noise: float = 0.12

    def __post_init__(self):
        if self.source not in ("wfdb", "csv", "synthetic"):
            raise ValueError(f"unknown data source {self.source!r}")


@dataclass
class ScreenSettings:
    default: float = DEFAULT_THRESHOLD
    per_class: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    # when set, each class threshold becomes this quantile of real training beats' template distances
    real_quantile: float | None = None
    template: str = "medoid"
    expert_index: dict[str, int] = field(default_factory=dict)
    max_candidates: int = 200

    def __post_init__(self):
        if self.real_quantile is not None and not 0 < self.real_quantile <= 1:
            raise ValueError("real_quantile must lie in (0, 1]")
        if self.template not in ("medoid", "expert-index"):
            raise ValueError(f"unknown template strategy {self.template!r}")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    classes: tuple[str, ...] = CLASSES
    minor_classes: tuple[str, ...] = MINOR_CLASSES
    split: SplitSpec = field(default_factory=SplitSpec)
    gan_unconditional: GanTrainConfig = field(default_factory=GanTrainConfig)
    gan_conditional: GanTrainConfig = field(default_factory=GanTrainConfig)
    screen: ScreenSettings = field(default_factory=ScreenSettings)
    balance_target: int = BALANCE_TARGET
    pool_factor: float = POOL_FACTOR
    classifier: ClfTrainConfig = field(default_factory=ClfTrainConfig)
    out: str = "runs/default"
    seed: int = 0

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.minor_classes = tuple(self.minor_classes)
        if len(self.classes) < 2 or len(set(self.classes)) != len(self.classes):
            raise ValueError(f"need at least two distinct classes, got {self.classes}")
        if not set(self.minor_classes) <= set(self.classes):
            raise ValueError("minor classes must be a subset of the class list")
        if self.balance_target < 1 or self.pool_factor < 1:
            raise ValueError("balance_target >= 1 and pool_factor >= 1 required")
        if tuple(self.classifier.classes) != self.classes:
            self.classifier = dataclasses.replace(self.classifier, classes=self.classes)


def _build(cls, values: dict[str, Any] | None, where: str):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ValueError(f"section {where!r} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValueError(f"unknown key(s) in {where!r}: {unknown}")
    kwargs = {}
    for name, value in values.items():
        default = known[name].default_factory() if known[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}" if where else name)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(values: dict[str, Any]) -> ExperimentConfig:
    return _build(ExperimentConfig, values, "")


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    return from_dict(yaml.safe_load(text) or {})


def to_dict(config: ExperimentConfig) -> dict[str, Any]:
    def plain(v):
        if isinstance(v, tuple):
            return list(v)
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    return {k: plain(v) for k, v in dataclasses.asdict(config).items()}


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=False)
