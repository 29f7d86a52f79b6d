"""Flat ``section.field = value`` configuration files.

Sections are ``model``, ``mfcc``, ``train`` and ``augment``; every dataclass
field is addressable. Tuple fields take comma-separated values. Lines starting
with ``#`` are comments.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from sparknet import __version__
from sparknet.audio import MfccConfig
from sparknet.data import AugmentConfig
from sparknet.errors import ConfigError
from sparknet.model import ModelConfig
from sparknet.train import TrainConfig

SECTIONS = {"model": ModelConfig, "mfcc": MfccConfig, "train": TrainConfig, "augment": AugmentConfig}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in SECTIONS}

    def to_text(self) -> str:
        lines = []
        for section, values in self.to_dict().items():
            for key, value in values.items():
                if isinstance(value, (list, tuple)):
                    value = ",".join(str(v) for v in value)
                lines.append(f"{section}.{key} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_assignments(lines) -> dict[str, str]:
    out = {}
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve(overrides: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply ``section.field`` string overrides on top of ``base`` (defaults)."""
    base = base or RunConfig()
    updates: dict[str, dict] = {name: {} for name in SECTIONS}
    for key, raw in overrides.items():
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section in {key!r}; use one of {sorted(SECTIONS)}")
        current = getattr(base, section)
        names = {f.name for f in dataclasses.fields(current)}
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        updates[section][name] = _coerce(raw, getattr(current, name), key)
    try:
        return RunConfig(**{s: dataclasses.replace(getattr(base, s), **u) for s, u in updates.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config_file(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return parse_assignments(text.splitlines())


def write_provenance(path: str | Path, config: dict, **extra) -> None:
    """Sidecar JSON recording the resolved config and package version."""
    payload = {"sparknet_version": __version__, "config": config, **extra}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
