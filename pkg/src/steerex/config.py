"""Typed experiment configuration.

One dataclass tree covers the whole pipeline (simulation ranges, model
configs, loss weights, training schedule, metric parameters).  Loading
from YAML rejects unknown keys, coerces nested structures to their
declared types, and echoes every default back out on save, so a stored
run directory pins the complete configuration.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import yaml

from .checkpoint import to_jsonable
from .errors import ConfigError
from .evaluate import EvalConfig
from .scene import SamplingRanges
from .training import TrainConfig

PLACEMENTS = ("fixed", "steerable")


def build_dataclass(cls, data, path: str = ""):
    """Construct dataclass `cls` from nested plain data, strictly typed.

    Unknown keys raise ConfigError with the dotted path; values are
    coerced per the declared field types (nested dataclasses, enums by
    value, tuples, int-to-float).  `None` stands for an empty mapping so
    bare YAML section headers fall back to defaults.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping, got {data!r}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path or cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name in data:
        kwargs[name] = _coerce(hints[name], data[name], f"{path}.{name}" if path else name)
    try:
        return cls(**kwargs)
    except TypeError as exc:  # missing required fields
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        if len(args) == 1:
            return _coerce(args[0], value, path)
        raise ConfigError(f"{path}: ambiguous union type {tp}")
    if dataclasses.is_dataclass(tp):
        return build_dataclass(tp, value, path)
    if isinstance(tp, type) and issubclass(tp, Enum):
        if isinstance(value, tp):
            return value
        try:
            return tp(value)
        except ValueError as exc:
            choices = [m.value for m in tp]
            raise ConfigError(f"{path}: {value!r} is not one of {choices}") from exc
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a sequence, got {value!r}")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


@dataclass(frozen=True)
class SimulateConfig:
    """Dataset generation profile: counts, durations, SNR set, scene ranges."""

    train_count: int = 240
    test_count: int = 60
    train_seconds: float = 4.0
    test_seconds: float = 10.0
    snr_choices_db: tuple[float, ...] = (-5.0, 0.0, 5.0)
    placement: str = "steerable"
    ranges: SamplingRanges = field(default_factory=SamplingRanges)

    def __post_init__(self):
        if self.train_count < 0 or self.test_count < 0:
            raise ConfigError("item counts must be nonnegative")
        if self.train_seconds <= 0 or self.test_seconds <= 0:
            raise ConfigError("item durations must be positive")
        if not self.snr_choices_db:
            raise ConfigError("snr_choices_db must not be empty")
        if self.placement not in PLACEMENTS:
            raise ConfigError(
                f"placement must be one of {PLACEMENTS}, got {self.placement!r}"
            )


@dataclass(frozen=True)
class ExperimentConfig:
    """Root of the configuration tree.

    `sample_rate` is authoritative: it is propagated into the training
    subtree (and its feature provider) so a single edit retunes the run.
    """

    seed: int = 0
    sample_rate: int = 16000
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.sample_rate < 1:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.train.sample_rate != self.sample_rate:
            train = dataclasses.replace(self.train, sample_rate=self.sample_rate)
            object.__setattr__(self, "train", train)
        if self.train.provider.sample_rate != self.sample_rate:
            provider = dataclasses.replace(
                self.train.provider, sample_rate=self.sample_rate
            )
            object.__setattr__(
                self, "train", dataclasses.replace(self.train, provider=provider)
            )


def config_from_dict(data) -> ExperimentConfig:
    return build_dataclass(ExperimentConfig, data, "experiment")


def config_to_dict(cfg) -> dict:
    return to_jsonable(cfg)


def load_config(path) -> ExperimentConfig:
    """Load an ExperimentConfig from a YAML file (empty file = all defaults)."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def save_config(cfg, path):
    """Write the full configuration tree, defaults included, as YAML."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)
