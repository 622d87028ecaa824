"""Layered configuration: defaults < TOML file < MFTTS_* environment < CLI flags.

The file uses sections named after the config objects::

    [model]
    width_multiplier = 0.25

    [train]
    batch_size = 8

Keys inside a section must be field names of that object.  Environment and
command-line overrides use bare field names (``MFTTS_BATCH_SIZE=8``,
``--batch_size 8``) and are routed to whichever object owns the field.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import tomli

from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig
from .vocoder import GriffinLimConfig

SECTIONS = {"model": ModelConfig, "train": TrainConfig, "griffin_lim": GriffinLimConfig}
ENV_PREFIX = "MFTTS_"
# derived from the data, never user-set
_DERIVED = {"n_phones", "word_dim", "variant"}


def _field_types(cls) -> Dict[str, Any]:
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _owner(key: str) -> Optional[str]:
    for section, cls in SECTIONS.items():
        if key in _field_types(cls):
            return section
    return None


def _coerce(cls, key: str, value: Any) -> Any:
    default = getattr(cls(), key) if cls is not ModelConfig else getattr(ModelConfig(), key)
    if not isinstance(value, str):
        return value
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc
    return value


@dataclasses.dataclass
class Settings:
    """Raw per-section overrides; turned into config objects on demand."""

    values: Dict[str, Dict[str, Any]] = dataclasses.field(default_factory=lambda: {s: {} for s in SECTIONS})

    def set(self, key: str, value: Any, section: Optional[str] = None) -> None:
        section = section or _owner(key)
        if section is None or section not in SECTIONS:
            raise ConfigError(f"unknown configuration key {key!r}")
        cls = SECTIONS[section]
        if key not in _field_types(cls):
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        self.values[section][key] = _coerce(cls, key, value)

    def model(self, **derived) -> ModelConfig:
        return ModelConfig(**{**self.values["model"], **derived})

    def train(self) -> TrainConfig:
        return TrainConfig(**self.values["train"])

    def griffin_lim(self) -> GriffinLimConfig:
        return GriffinLimConfig(**self.values["griffin_lim"])


def load_settings(
    path: Optional[Union[str, Path]] = None,
    overrides: Sequence[Tuple[str, str]] = (),
    environ: Optional[Mapping[str, str]] = None,
) -> Settings:
    s = Settings()
    if path is not None:
        try:
            with open(path, "rb") as f:
                doc = tomli.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section, table in doc.items():
            if section not in SECTIONS or not isinstance(table, dict):
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, value in table.items():
                if key in _DERIVED:
                    raise ConfigError(f"{path}: {key} is derived from the data and cannot be set")
                s.set(key, value, section)
    env = os.environ if environ is None else environ
    for name, value in env.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if _owner(key) is not None and key not in _DERIVED:
                s.set(key, value)
    for key, value in overrides:
        key = key.replace("-", "_")
        if key in _DERIVED:
            raise ConfigError(f"{key} is derived from the data and cannot be set")
        s.set(key, value)
    return s


def parse_overrides(args: List[str]) -> List[Tuple[str, str]]:
    """``['--batch_size', '4', '--bucket=false']`` -> ``[('batch_size', '4'), ('bucket', 'false')]``."""
    out = []
    i = 0
    while i < len(args):
        arg = args[i]
        if not arg.startswith("--"):
            raise ConfigError(f"unexpected argument {arg!r}")
        key = arg[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"missing value for {arg}")
            value = args[i + 1]
            i += 2
        out.append((key, value))
    return out
