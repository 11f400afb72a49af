"""Run configuration from a flat JSON object with dotted keys.

Example::

    {"model.lstm_hidden": 5, "model.dilation_schedule": [1, 2], "train.lr": 0.005}

Sections are ``model``, ``train``, ``frontend`` and ``gradcheck``. Unknown
keys are rejected. Command-line overrides replace file values.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .frontend import FrontendConfig
from .model import ModelConfig
from .training import TrainConfig

SEED_ENV = "LISTENHEAD_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GradCheckConfig:
    frames: int = 3
    epsilon: float = 3e-4
    tolerance: float = 1e-4
    # parameters are drawn from uniform(-scale/sqrt(fan_in), scale/sqrt(fan_in))
    param_scale: float = 1.3
    # target = prediction + target_scale * N(0, 1)
    target_scale: float = 0.3

    def validate(self) -> None:
        if self.frames < 1:
            raise ValueError("gradcheck.frames must be >= 1")
        if not 0 < self.epsilon <= 1e-2:
            raise ValueError("gradcheck.epsilon must lie in (0, 1e-2]")
        if self.tolerance <= 0:
            raise ValueError("gradcheck.tolerance must be > 0")
        if self.param_scale <= 0:
            raise ValueError("gradcheck.param_scale must be > 0")
        if self.target_scale <= 0:
            raise ValueError("gradcheck.target_scale must be > 0")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    gradcheck: GradCheckConfig = field(default_factory=GradCheckConfig)


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "frontend": FrontendConfig,
             "gradcheck": GradCheckConfig}
_HIDDEN = {("train", "checkpoint_path")}


def known_keys() -> list[str]:
    return [f"{s}.{f.name}" for s, cls in _SECTIONS.items() for f in dataclasses.fields(cls)
            if (s, f.name) not in _HIDDEN]


def _coerce(key: str, kind: str, value: Any):
    def bad():
        return ConfigError(f"config key {key}: expected {kind}, got {value!r}")

    if kind == "bool":
        if not isinstance(value, bool):
            raise bad()
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad()
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad()
        return float(value)
    if kind.startswith("tuple"):
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise bad()
        return tuple(value)
    if kind.startswith("str"):
        if not isinstance(value, str):
            raise bad()
        return value
    raise bad()


def build_config(values: Mapping[str, Any]) -> RunConfig:
    per_section: dict[str, dict] = {s: {} for s in _SECTIONS}
    for key, value in values.items():
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        types = {f.name: f.type for f in dataclasses.fields(cls)} if cls else {}
        if name not in types or (section, name) in _HIDDEN:
            raise ConfigError(f"unknown config key {key!r}")
        per_section[section][name] = _coerce(key, str(types[name]), value)
    try:
        cfg = RunConfig(**{s: _SECTIONS[s](**kw) for s, kw in per_section.items()})
        for part in (cfg.model, cfg.train, cfg.frontend, cfg.gradcheck):
            part.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.model.in_dim != 45:
        raise ConfigError("model.in_dim must be 45 to match the acoustic features")
    return cfg


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    try:
        return key.strip(), json.loads(raw)
    except json.JSONDecodeError:
        return key.strip(), raw


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        values.update(loaded)
    values.update(overrides or {})
    if "train.seed" not in values and os.environ.get(SEED_ENV):
        values["train.seed"] = env_seed()
    return build_config(values)


def env_seed(default: int | None = None) -> int | None:
    raw = os.environ.get(SEED_ENV)
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    out = {}
    for section in _SECTIONS:
        for k, v in dataclasses.asdict(getattr(cfg, section)).items():
            if (section, k) in _HIDDEN:
                continue
            out[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
    return out
