"""Run configuration: one JSON file driving every pipeline stage.

The file is organised into sections (``paths``, ``synth``, ``cleaning``,
``neighbors``, ``dataset``, ``model``, ``training``, ``evaluation``) plus
top-level ``seed`` and ``threads``.  Every field has a default, so ``{}`` —
or no config file at all — is a complete configuration.  Unknown keys are
rejected by name so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import CleaningConfig, SynthConfig
from .dataset import DatasetConfig
from .errors import ConfigError, NotFoundError
from .model import ModelSpec, PhasePlan
from .nn.optim import TrainingConfig


@dataclass
class PathsSection:
    out_dir: str = "out"
    speeds: str = "speeds.csv"
    sensors: str = "sensors.csv"
    distances: str = ""            # optional road-distance CSV; "" = none

    def validate(self):
        for name in ("out_dir", "speeds", "sensors"):
            if not getattr(self, name):
                raise ConfigError(f"paths.{name} must not be empty")
        return self


@dataclass
class NeighborsSection:
    count: int = 10
    distance_km: float = 10.0
    weights: tuple = (1.0, 1.0, 1.0)
    refresh: str = "anchor"

    def validate(self):
        if len(self.weights) != 3:
            raise ConfigError("neighbors.weights needs exactly 3 entries")
        return self


@dataclass
class DatasetSection:
    history_min: int = 300
    horizon_steps: int = 12
    split_fraction: float = 0.70
    anchor_stride_min: int = 5
    targets: tuple = ()            # sensor ids; empty means every sensor

    def validate(self):
        return self                # range checks live in DatasetConfig


@dataclass
class ModelSection:
    x_widths: tuple = (16, 32, 64)
    residual_blocks: int = 3
    y_widths: tuple = (8, 16, 16)
    mapper_channels: int = 16
    dropout_prob: float = 0.2

    def validate(self):
        return self                # range checks live in ModelSpec


@dataclass
class TrainingSection:
    learning_rate: float = 0.001
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    pretrain_x_epochs: int = 50
    pretrain_y_epochs: int = 50
    mapper_epochs: int = 30
    finetune_epochs: int = 20

    def validate(self):
        for name in ("pretrain_x_epochs", "pretrain_y_epochs",
                     "mapper_epochs", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"training.{name} must be non-negative")
        return self


@dataclass
class EvaluationSection:
    knn_k: int = 17
    mlp_epochs: int = 100
    stats_horizon_min: int = 60
    alpha: float = 0.05

    def validate(self):
        if self.knn_k < 1:
            raise ConfigError("evaluation.knn_k must be at least 1")
        if self.mlp_epochs < 0:
            raise ConfigError("evaluation.mlp_epochs must be non-negative")
        if not 0 < self.alpha < 1:
            raise ConfigError("evaluation.alpha must lie in (0, 1)")
        return self


#: Fields that arrive from JSON as lists but are stored as tuples.
_TUPLE_FIELDS = {
    CleaningConfig: ("valid_speed_range",),
    NeighborsSection: ("weights",),
    DatasetSection: ("targets",),
    ModelSection: ("x_widths", "y_widths"),
}


def _build_section(name, cls, raw):
    """Instantiate one config section, rejecting unknown keys by name."""
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key {name}.{unknown[0]}")
    values = dict(raw)
    for key in _TUPLE_FIELDS.get(cls, ()):
        if key in values:
            if not isinstance(values[key], (list, tuple)):
                raise ConfigError(f"config key {name}.{key} must be a list")
            values[key] = tuple(values[key])
    return cls(**values)


_SECTIONS = {
    "paths": PathsSection,
    "synth": SynthConfig,
    "cleaning": CleaningConfig,
    "neighbors": NeighborsSection,
    "dataset": DatasetSection,
    "model": ModelSection,
    "training": TrainingSection,
    "evaluation": EvaluationSection,
}


@dataclass
class RunConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    seed: int = 0
    threads: int = 1
    synth: SynthConfig = field(default_factory=SynthConfig)
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)
    neighbors: NeighborsSection = field(default_factory=NeighborsSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        known = set(_SECTIONS) | {"seed", "threads"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]}")
        kwargs = {name: _build_section(name, section_cls, raw.get(name))
                  for name, section_cls in _SECTIONS.items()}
        kwargs["seed"] = raw.get("seed", 0)
        kwargs["threads"] = raw.get("threads", 1)
        return cls(**kwargs).validate()

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not isinstance(self.threads, int) or isinstance(self.threads, bool):
            raise ConfigError("threads must be an integer")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        for name in _SECTIONS:
            getattr(self, name).validate()
        # building the derived configs surfaces cross-field problems early
        self.dataset_config()
        self.model_spec()
        self.phase_plan()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    # ----- derived stage configurations ---------------------------------

    def dataset_config(self):
        return DatasetConfig(
            history_min=self.dataset.history_min,
            horizon_steps=self.dataset.horizon_steps,
            neighbor_count=self.neighbors.count,
            distance_km=self.neighbors.distance_km,
            topsis_weights=self.neighbors.weights,
            split_fraction=self.dataset.split_fraction,
            neighbor_refresh=self.neighbors.refresh,
            anchor_stride_min=self.dataset.anchor_stride_min,
        ).validate()

    def model_spec(self):
        cfg = self.dataset_config()
        return ModelSpec(
            input_steps=cfg.timesteps,
            input_sensors=self.neighbors.count,
            input_channels=4,
            horizon_steps=self.dataset.horizon_steps,
            x_widths=self.model.x_widths,
            residual_blocks=self.model.residual_blocks,
            y_widths=self.model.y_widths,
            mapper_channels=self.model.mapper_channels,
            dropout_prob=self.model.dropout_prob,
        ).validate()

    def training_config(self, epochs):
        return TrainingConfig(
            learning_rate=self.training.learning_rate,
            batch_size=self.training.batch_size,
            beta1=self.training.beta1,
            beta2=self.training.beta2,
            epsilon=self.training.epsilon,
            dropout_prob=self.model.dropout_prob,
            epochs=epochs,
            rng_seed=self.seed,
        ).validate()

    def phase_plan(self):
        return PhasePlan(
            mapper_epochs=self.training.mapper_epochs,
            finetune_epochs=self.training.finetune_epochs,
        ).validate()


def load_run_config(path=None):
    """Load a run configuration from a JSON file.

    ``None`` yields the all-defaults configuration.  A missing file raises
    ``NotFoundError``; malformed JSON or bad keys raise ``ConfigError``.
    """
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise NotFoundError(f"config file not found: {p}") from None
    except OSError as exc:
        raise NotFoundError(f"config file unreadable: {p}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
    try:
        return RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"config file {p}: {exc}") from None
