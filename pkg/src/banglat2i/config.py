"""Flat key=value configuration with sections, strict keys, typed coercion.

Precedence: CLI override > config file > built-in default. The resolved
values land in the run manifest so any run can be reproduced from it.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .damsm import DamsmConfig
from .encoders import EncoderConfig
from .errors import ConfigError
from .gan import GanTrainConfig
from .metrics import MetricsConfig


@dataclass
class TextDataConfig:
    max_len: int = 18
    min_freq: int = 1
    train_fraction: float = 0.7
    split_seed: int = 1234


@dataclass
class FullConfig:
    textdata: TextDataConfig = field(default_factory=TextDataConfig)
    encoders: EncoderConfig = field(default_factory=EncoderConfig)
    damsm: DamsmConfig = field(default_factory=DamsmConfig)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)


_SECTIONS = ("textdata", "encoders", "damsm", "gan", "metrics")


def _coerce(raw: str, target_type, key: str):
    raw = raw.strip()
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {raw!r}")
    origin = getattr(target_type, "__origin__", None)
    if origin is tuple:
        return tuple(int(part) for part in raw.split(","))
    raise ConfigError(f"{key}: unsupported option type {target_type}")


def _apply(section_cfg, section: str, key: str, raw: str):
    names = {f.name: f for f in fields(section_cfg)}
    if key not in names:
        raise ConfigError(f"unknown key [{section}] {key}")
    value = _coerce(raw, names[key].type if isinstance(names[key].type, type)
                    else _resolve_type(section_cfg, key), f"[{section}] {key}")
    setattr(section_cfg, key, value)


def _resolve_type(section_cfg, key: str):
    hints = dataclasses.fields(section_cfg)
    for f in hints:
        if f.name == key:
            t = f.type
            if isinstance(t, str):
                import typing

                return typing.get_type_hints(type(section_cfg))[key]
            return t
    raise ConfigError(f"unknown key {key}")


def load_config(path=None, overrides: list[str] | None = None) -> FullConfig:
    """Build FullConfig from defaults, an optional INI-style file, overrides.

    Overrides use the form ``section.key=value``.
    """
    cfg = FullConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        text = Path(path).read_text(encoding="utf-8")
        parser.read_string(text, source=str(path))
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            section_cfg = getattr(cfg, section)
            for key, raw in parser.items(section):
                _apply(section_cfg, section, key, raw)
    for override in overrides or []:
        if "=" not in override or "." not in override.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {override!r}")
        dotted, raw = override.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in override")
        _apply(getattr(cfg, section), section, key.strip(), raw)
    # re-run validation that dataclasses perform on construction
    getattr(cfg.encoders, "__post_init__")()
    getattr(cfg.damsm, "__post_init__")()
    getattr(cfg.gan, "__post_init__")()
    return cfg


def config_dict(cfg: FullConfig) -> dict:
    out = {}
    for section in _SECTIONS:
        out[section] = dataclasses.asdict(getattr(cfg, section))
        for key, value in out[section].items():
            if isinstance(value, tuple):
                out[section][key] = list(value)
    return out


def config_from_dict(data: dict) -> FullConfig:
    cfg = FullConfig()
    for section in _SECTIONS:
        if section not in data:
            continue
        section_cfg = getattr(cfg, section)
        names = {f.name for f in fields(section_cfg)}
        for key, value in data[section].items():
            if key not in names:
                raise ConfigError(f"unknown key [{section}] {key} in stored config")
            if isinstance(value, list):
                value = tuple(value)
            setattr(section_cfg, key, value)
    return cfg
