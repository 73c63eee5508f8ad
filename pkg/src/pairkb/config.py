"""Engine configuration: a flat TOML document plus environment overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # py3.10
    import tomli as tomllib

from .errors import ConfigError

ENV_DATA_DIR = "PAIRKB_DATA_DIR"
ENV_ENCODER_URL = "PAIRKB_ENCODER_URL"


@dataclass(frozen=True)
class EngineConfig:
    data_dir: Path = Path(".")
    default_w: float = 0.5
    exact_threshold: int = 100_000
    n_clusters: int = 32
    n_probe: int = 8
    encoder_url: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.default_w <= 1.0:
            raise ConfigError(f"default_w {self.default_w} outside [0, 1]")
        if self.exact_threshold < 0:
            raise ConfigError("exact_threshold must be >= 0")
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be >= 1")
        if not 1 <= self.n_probe <= self.n_clusters:
            raise ConfigError(f"n_probe {self.n_probe} outside 1..{self.n_clusters}")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")


_FIELD_TYPES = {
    "data_dir": str,
    "default_w": (int, float),
    "exact_threshold": int,
    "n_clusters": int,
    "n_probe": int,
    "encoder_url": str,
    "seed": int,
}


def load_config(path: Path | str | None = None, env: dict | None = None) -> EngineConfig:
    """Load config from a flat TOML file; env vars override file values."""
    env = os.environ if env is None else env
    values: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                doc = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
        for key, value in doc.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            if isinstance(value, dict):
                raise ConfigError(f"{path}: nested tables not allowed ({key!r})")
            if not isinstance(value, _FIELD_TYPES[key]) or isinstance(value, bool):
                raise ConfigError(f"{path}: key {key!r} has wrong type {type(value).__name__}")
            values[key] = value
    if env.get(ENV_DATA_DIR):
        values["data_dir"] = env[ENV_DATA_DIR]
    if env.get(ENV_ENCODER_URL):
        values["encoder_url"] = env[ENV_ENCODER_URL]
    if "data_dir" in values:
        values["data_dir"] = Path(values["data_dir"])
    if "default_w" in values:
        values["default_w"] = float(values["default_w"])
    return EngineConfig(**values)
