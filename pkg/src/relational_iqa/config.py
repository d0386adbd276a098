"""Configuration helpers for relational-iqa.

A configuration document is YAML (or JSON, which YAML parses) with the
optional sections ``engine``, ``synth``, ``predictor``, ``scorer`` and ``io``.
Unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import yaml

from .distortion_bank import OperatorConstants
from .errors import ValidationError
from .predictor import PredictorTrainConfig
from .scorer import ScorerTrainConfig
from .triplet_synth import EngineConfig, IntensityLaw

CONFIG_ENV = "RELATIONAL_IQA_CONFIG"
HOME_ENV = "RELATIONAL_IQA_HOME"
DEFAULT_SCHEDULE = (0.15, 0.35, 0.6, 0.9)


class ConfigError(ValidationError):
    """Raised for an invalid configuration value; ``path`` is the dotted key."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def get_home_directory() -> Path:
    """Base directory for relational-iqa data."""
    home = os.environ.get(HOME_ENV)
    if home:
        return Path(home)
    return Path.home() / "RelationalIQA"


def get_datasets_directory() -> Path:
    """Default parent of generated datasets and tier sets."""
    return get_home_directory() / "datasets"


def get_models_directory() -> Path:
    """Default parent of checkpoints."""
    return get_home_directory() / "models"


def get_default_config_path() -> Path | None:
    """Configuration file named by RELATIONAL_IQA_CONFIG, if any."""
    value = os.environ.get(CONFIG_ENV)
    if value:
        trimmed = value.strip()
        if trimmed:
            return Path(trimmed)
    return None


@dataclass(frozen=True)
class SynthSettings:
    count: int = 100
    size: int = 128
    master_seed: int = 0
    p_swap: float = 0.25
    workers: int = 1

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValidationError(f"count must be non-negative, got {self.count}.")
        if self.size < 2:
            raise ValidationError(f"size must be at least 2, got {self.size}.")
        if not 0.0 <= self.p_swap <= 1.0:
            raise ValidationError(f"p_swap must lie in [0, 1], got {self.p_swap}.")
        if self.workers < 1:
            raise ValidationError(f"workers must be positive, got {self.workers}.")


@dataclass(frozen=True)
class ScorerSettings:
    schedule: tuple[float, ...] = DEFAULT_SCHEDULE
    scenes: int = 16
    size: int = 64
    prune: bool = False
    train: ScorerTrainConfig = field(default_factory=ScorerTrainConfig)

    def __post_init__(self) -> None:
        if self.scenes < 1 or self.size < 2:
            raise ValidationError("scenes must be positive and size at least 2.")
        if not self.schedule or any(not 0.0 < a <= 1.0 for a in self.schedule):
            raise ValidationError(f"schedule intensities must lie in (0, 1], got {list(self.schedule)}.")
        if any(b <= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ValidationError(f"schedule must be strictly increasing, got {list(self.schedule)}.")


@dataclass(frozen=True)
class IoSettings:
    images: Path | None = None
    labels: Path | None = None


@dataclass(frozen=True)
class Config:
    engine: EngineConfig = field(default_factory=EngineConfig)
    synth: SynthSettings = field(default_factory=SynthSettings)
    predictor: PredictorTrainConfig = field(default_factory=PredictorTrainConfig)
    scorer: ScorerSettings = field(default_factory=ScorerSettings)
    io: IoSettings = field(default_factory=IoSettings)
    source: Path | None = None


# ---------------------------------------------------------------------------
# Value parsing


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _mapping(value: Any, path: str) -> dict[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path or "<root>", "must be a mapping.")
    return value


def _check_keys(data: dict[str, Any], allowed: set[str], path: str) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(_join(path, str(key)), f"unknown key (allowed: {', '.join(sorted(allowed))}).")


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"must be a number, got {value!r}.")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"must be an integer, got {value!r}.")
    return value


def _boolean(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(path, f"must be true or false, got {value!r}.")
    return value


def _string(value: Any, path: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ConfigError(path, f"must be a non-empty string, got {value!r}.")
    return value.strip()


def _float_list(value: Any, path: str) -> tuple[float, ...]:
    if isinstance(value, str):
        value = [item for item in value.split(",") if item.strip()]
        try:
            return tuple(float(item) for item in value)
        except ValueError as exc:
            raise ConfigError(path, f"must be a list of numbers: {exc}") from exc
    if not isinstance(value, list):
        raise ConfigError(path, f"must be a list of numbers, got {value!r}.")
    return tuple(_number(item, f"{path}[{i}]") for i, item in enumerate(value))


def parse_schedule(text: str) -> tuple[float, ...]:
    """Comma-separated intensities as given to ``riqa tiers --schedule``."""
    schedule = _float_list(text, "--schedule")
    try:
        ScorerSettings(schedule=schedule)
    except ValidationError as exc:
        raise ConfigError("--schedule", str(exc)) from exc
    return schedule


def _int_list(value: Any, path: str) -> tuple[int, ...]:
    if not isinstance(value, list):
        raise ConfigError(path, f"must be a list of integers, got {value!r}.")
    return tuple(_integer(item, f"{path}[{i}]") for i, item in enumerate(value))


Parser = Callable[[Any, str], Any]


def _section(data: dict[str, Any], parsers: dict[str, Parser], path: str) -> dict[str, Any]:
    _check_keys(data, set(parsers), path)
    return {key: parsers[key](value, _join(path, key)) for key, value in data.items()}


def _build(factory: Callable[..., Any], values: dict[str, Any], path: str) -> Any:
    try:
        return factory(**values)
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(path, str(exc)) from exc


def _parsers_for(cls: type, overrides: dict[str, Parser] | None = None) -> dict[str, Parser]:
    """Number/int/bool/str parsers inferred from a dataclass's field defaults."""
    parsers: dict[str, Parser] = {}
    defaults = cls()
    for f in fields(cls):
        default = getattr(defaults, f.name)
        if isinstance(default, bool):
            parsers[f.name] = _boolean
        elif isinstance(default, int):
            parsers[f.name] = _integer
        elif isinstance(default, float):
            parsers[f.name] = _number
        elif isinstance(default, str):
            parsers[f.name] = _string
    parsers.update(overrides or {})
    return parsers


def _parse_engine(raw: Any) -> EngineConfig:
    data = _mapping(raw, "engine")
    _check_keys(data, {"operators", "intensity", "p_random"}, "engine")
    operators = _section(
        _mapping(data.get("operators"), "engine.operators"),
        _parsers_for(OperatorConstants, {"checker_cells": _int_list}),
        "engine.operators",
    )
    law = _section(
        _mapping(data.get("intensity"), "engine.intensity"),
        _parsers_for(IntensityLaw),
        "engine.intensity",
    )
    values: dict[str, Any] = {
        "constants": _build(OperatorConstants, operators, "engine.operators"),
        "law": _build(IntensityLaw, law, "engine.intensity"),
    }
    if "p_random" in data:
        values["p_random"] = _number(data["p_random"], "engine.p_random")
    return _build(EngineConfig, values, "engine")


def _parse_scorer(raw: Any) -> ScorerSettings:
    data = _mapping(raw, "scorer")
    train_raw = data.pop("train", None) if isinstance(data, dict) else None
    values = _section(
        data,
        {"schedule": _float_list, "scenes": _integer, "size": _integer, "prune": _boolean},
        "scorer",
    )
    train = _section(_mapping(train_raw, "scorer.train"), _parsers_for(ScorerTrainConfig), "scorer.train")
    values["train"] = _build(ScorerTrainConfig, train, "scorer.train")
    return _build(ScorerSettings, values, "scorer")


def _parse_io(raw: Any, base: Path | None) -> IoSettings:
    data = _section(_mapping(raw, "io"), {"images": _string, "labels": _string}, "io")
    resolved: dict[str, Any] = {}
    for key, value in data.items():
        path = Path(value).expanduser()
        if base is not None and not path.is_absolute():
            path = base / path
        resolved[key] = path
    return IoSettings(**resolved)


def parse_config(raw: Any, base: Path | None = None, source: Path | None = None) -> Config:
    """Validate a parsed document; relative io paths resolve against ``base``."""
    data = _mapping(raw, "")
    data = dict(data)
    _check_keys(data, {"engine", "synth", "predictor", "scorer", "io"}, "")
    synth = _section(_mapping(data.get("synth"), "synth"), _parsers_for(SynthSettings), "synth")
    predictor = _section(
        _mapping(data.get("predictor"), "predictor"),
        _parsers_for(PredictorTrainConfig, {"hidden": _int_list}),
        "predictor",
    )
    scorer_raw = data.get("scorer")
    return Config(
        engine=_parse_engine(data.get("engine")),
        synth=_build(SynthSettings, synth, "synth"),
        predictor=_build(PredictorTrainConfig, predictor, "predictor"),
        scorer=_parse_scorer(dict(scorer_raw) if isinstance(scorer_raw, dict) else scorer_raw),
        io=_parse_io(data.get("io"), base),
        source=source,
    )


def load_config(path: Path | None = None) -> Config:
    """Load ``path``, else $RELATIONAL_IQA_CONFIG, else the built-in defaults."""
    if path is None:
        path = get_default_config_path()
    if path is None:
        return Config()
    if not path.exists():
        raise ConfigError("", f"Config file {path} does not exist.")
    if path.is_dir():
        raise ConfigError("", f"Config path {path} is a directory, expected a YAML or JSON file.")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("", f"Config file {path} could not be parsed: {exc}") from exc
    return parse_config(raw, base=path.parent, source=path)
