"""Run configuration: defaults, key-value config files, flag overrides.

Config files hold ``key = value`` lines; ``#`` starts a comment. Secrets are
never read from files; tokens come only from the environment.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

SECRET_KEYS = {"token", "embed_token", "chat_token", "api_key"}


@dataclass
class RunConfig:
    corpus: str | None = None
    queries: str | None = None
    index: str | None = None
    cache: str | None = None
    split: str | None = None
    generations: str | None = None
    input: str | None = None
    task: str | None = None
    out: str = "out"
    provider: str = "local"
    embed_dim: int = 256
    embed_url: str | None = None
    embed_model: str | None = None
    chat_url: str | None = None
    chat_model: str | None = None
    format: str = "JSON"
    generator: str = "mock"
    noise: float = 0.0
    strategies: str = "Greedy"
    seed: int = 0
    ratio: float = 0.9
    side: str = "all"
    k: int = 10
    beta: float = 0.1
    eval_fraction: float = 409 / 3390
    parallelism: int = 4

    def validate(self) -> "RunConfig":
        if self.provider not in ("local", "remote"):
            raise ConfigError(f"provider must be local or remote, got {self.provider!r}")
        if self.format not in ("JSON", "NL"):
            raise ConfigError(f"format must be JSON or NL, got {self.format!r}")
        if self.generator not in ("mock", "remote"):
            raise ConfigError(f"generator must be mock or remote, got {self.generator!r}")
        if self.side not in ("all", "train", "test"):
            raise ConfigError(f"side must be all, train or test, got {self.side!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.k < 1 or self.parallelism < 1 or self.embed_dim < 8:
            raise ConfigError("k and parallelism must be >= 1, embed_dim >= 8")
        return self

    def snapshot(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key: str, value: Any) -> Any:
    if key in SECRET_KEYS:
        raise ConfigError(f"{key!r} must come from the environment, not a config file")
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    if value is None:
        return None
    typ = _TYPES[key]
    try:
        if typ.startswith("int"):
            return int(value)
        if typ.startswith("float"):
            return float(value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from None
    return str(value)


def read_config_file(path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = coerce(key.replace("-", "_"), value)
    return out


def read_manifest(path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return {k: coerce(k, v) for k, v in data["config"].items()}
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from None


def build_config(*layers: dict[str, Any]) -> RunConfig:
    """Merge layers left to right; later layers win, ``None`` means unset."""
    merged: dict[str, Any] = {}
    for layer in layers:
        merged.update({k: v for k, v in layer.items() if v is not None})
    return RunConfig(**merged).validate()


def env_token(kind: str) -> str | None:
    return os.environ.get(f"RATATOOL_{kind.upper()}_TOKEN")
