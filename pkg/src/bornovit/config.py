"""JSON run configuration with strict schema checking; omitted fields take the library defaults."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .data import AugmentConfig
from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    root_dir: Optional[str] = None
    manifest: Optional[str] = None


@dataclass(frozen=True)
class ModeFlags:
    deterministic: bool = True
    stratified_folds: bool = False


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: Optional[str] = None
    k: int = 5
    mode: ModeFlags = field(default_factory=ModeFlags)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "augment": AugmentConfig,
             "data": DataConfig, "mode": ModeFlags}


def _check_type(path: str, value: Any, annotation) -> None:
    text = str(annotation)
    if value is None:
        if "Optional" not in text:
            raise ConfigError(f"{path}: null is not allowed")
        return
    if "bool" in text:
        ok = isinstance(value, bool)
    elif "int" in text:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif "float" in text:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif "str" in text:
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {text.replace('typing.', '')}, got {type(value).__name__} {value!r}")


def _build(cls, raw: Any, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in fields:
            raise ConfigError(f"{path}.{key}: unknown key")
    kwargs = {}
    for key, value in raw.items():
        sub = f"{path}.{key}"
        if key in _SECTIONS and cls is RunConfig:
            kwargs[key] = _build(_SECTIONS[key], value, sub)
            continue
        _check_type(sub, value, fields[key].type)
        if fields[key].type in ("float",) and isinstance(value, int):
            value = float(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def run_config_from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "config")


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return run_config_from_dict(raw)
