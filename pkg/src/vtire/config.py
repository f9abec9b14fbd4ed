"""Run configuration: INI-style key-value files, overrides and a stable hash.

File format (read with :mod:`configparser`)::

    # comments start with '#' or ';'
    [fusion]
    d = 64
    epochs = 80

    [dataset]
    count_per_class = 150

    [seg]
    widths = 8, 16, 32

    [load]
    n_r = 8
    n_c = 256

Tuples are comma separated; ``none`` means ``None``. Precedence is
command line > file > defaults. Unknown sections or keys are errors.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

from .datasets import DatasetConfig
from .errors import ConfigError
from .mmvtt import FusionConfig
from .segment import SegConfig


@dataclass(frozen=True)
class LoadConfig:
    n_r: int = 8
    n_c: int = 256
    width: float = 50.0  # effective tire width, mm
    materials: str = "paper"  # paper | swapped
    penalty_scale: float = 1e3
    max_kg: float = 35.0
    n_points: int = 15
    overload_kg: tuple = (40.0, 45.0, 50.0)
    n_weights: int = 10
    n_measurements: int = 5
    noise_frac: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.materials not in ("paper", "swapped"):
            raise ConfigError("materials must be 'paper' or 'swapped'")
        if self.max_kg <= 0 or self.n_points < 3:
            raise ConfigError("need max_kg > 0 and at least 3 calibration points")


SECTIONS = {"dataset": DatasetConfig, "fusion": FusionConfig, "seg": SegConfig, "load": LoadConfig}


def _coerce(value: str, default, name):
    text = value.strip()
    try:
        if text.lower() == "none":
            return None
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(p.strip()) for p in text.split(",") if p.strip())
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if default is None:  # optional int fields
            return int(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {name} = {value!r}") from None


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = DatasetConfig()
    fusion: FusionConfig = FusionConfig()
    seg: SegConfig = SegConfig()
    load: LoadConfig = LoadConfig()

    def with_values(self, values: dict):
        """Apply ``{"section.key": raw string or typed value}``."""
        parts = {name: {} for name in SECTIONS}
        for dotted, raw in values.items():
            section, _, key = dotted.partition(".")
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            current = getattr(self, section)
            known = {f.name for f in fields(current)}
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            default = getattr(current, key)
            parts[section][key] = _coerce(raw, default, dotted) if isinstance(raw, str) else raw
        return RunConfig(**{name: dataclasses.replace(getattr(self, name), **kw) if kw else getattr(self, name)
                            for name, kw in parts.items()})

    def to_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def digest(self, n=12):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:n]


def read_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        values = {f"{s}.{k}": v for s in parser.sections() for k, v in parser.items(s)}
        cfg = cfg.with_values(values)
    if overrides:
        cfg = cfg.with_values(overrides)
    return cfg


def parse_assignments(items) -> dict:
    """``["fusion.d=32", ...]`` to ``{"fusion.d": "32"}``."""
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        out[key.strip()] = value
    return out


def write_config(cfg: RunConfig, path):
    parser = configparser.ConfigParser()
    for name, values in cfg.to_dict().items():
        parser[name] = {k: (", ".join(str(x) for x in v) if isinstance(v, (list, tuple))
                            else "none" if v is None else str(v)) for k, v in values.items()}
    with open(path, "w") as fh:
        parser.write(fh)
    return path


__all__ = ["LoadConfig", "RunConfig", "SECTIONS", "read_config", "parse_assignments", "write_config"]
