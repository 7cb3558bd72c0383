"""Service configuration.

Flat ``key=value`` file, overridden by ``CIRCULOOP_``-prefixed environment
variables, overridden by explicit flags. The service refuses to start on an
invalid configuration and reports the first violation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError
from .materials import ScoringWeights

ENV_PREFIX = "CIRCULOOP_"
SCHEMA_VERSION = 1


def packaged_data(name: str) -> Path:
    """Path to a data file shipped inside the package."""
    return Path(str(resources.files("circuloop") / "data" / name))


@dataclass
class ServiceConfig:
    data_dir: Path = Path("./circuloop-data")
    listen_host: str = "127.0.0.1"
    listen_port: int = 8000
    permission_matrix_file: Path = field(
        default_factory=lambda: packaged_data("permission_matrix.conf")
    )
    factor_table_file: Path = field(
        default_factory=lambda: packaged_data("demo_factors.csv")
    )
    users_file: Path = field(default_factory=lambda: packaged_data("users.conf"))
    high_value_threshold: float = 50.0
    session_ttl_minutes: int = 480
    snapshot_interval: int = 200
    schema_version: int = SCHEMA_VERSION
    scoring: ScoringWeights = field(default_factory=ScoringWeights)

    def validate(self) -> None:
        """Raise ConfigError on the first violation found."""
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version must be {SCHEMA_VERSION}, got {self.schema_version}"
            )
        if self.listen_port < 1 or self.listen_port > 65535:
            raise ConfigError(f"listen_port {self.listen_port} outside 1..65535")
        if self.high_value_threshold < 0:
            raise ConfigError("high_value_threshold must be >= 0")
        if self.session_ttl_minutes <= 0:
            raise ConfigError("session_ttl_minutes must be positive")
        if self.snapshot_interval <= 0:
            raise ConfigError("snapshot_interval must be positive")
        for name in (
            "permission_matrix_file",
            "factor_table_file",
            "users_file",
        ):
            path = getattr(self, name)
            if not Path(path).exists():
                raise ConfigError(f"{name} does not exist: {path}")
        for wname in (
            "term_weight",
            "recyclable_bonus",
            "certified_bonus",
            "low_carbon_bonus",
            "low_carbon_max_kg",
        ):
            if getattr(self.scoring, wname) < 0:
                raise ConfigError(f"scoring_{wname} must be >= 0")


_KEY_PARSERS: dict[str, Any] = {
    "data_dir": Path,
    "listen_host": str,
    "listen_port": int,
    "permission_matrix_file": Path,
    "factor_table_file": Path,
    "users_file": Path,
    "high_value_threshold": float,
    "session_ttl_minutes": int,
    "snapshot_interval": int,
    "schema_version": int,
    "scoring_term_weight": float,
    "scoring_recyclable_bonus": float,
    "scoring_certified_bonus": float,
    "scoring_low_carbon_bonus": float,
    "scoring_low_carbon_max_kg": float,
}


def _apply(config: ServiceConfig, key: str, raw: str, origin: str) -> None:
    parser = _KEY_PARSERS.get(key)
    if parser is None:
        raise ConfigError(f"{origin}: unknown config key {key!r}", key=key)
    try:
        value = parser(raw)
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad value for {key!r}: {exc}", key=key) from exc
    if key.startswith("scoring_"):
        setattr(config.scoring, key[len("scoring_") :], value)
    else:
        setattr(config, key, value)


def parse_config_text(text: str, config: ServiceConfig, origin: str) -> None:
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(
                f"{origin} line {line_no}: expected key=value", line=line_no
            )
        key, _, value = line.partition("=")
        _apply(config, key.strip(), value.strip(), f"{origin} line {line_no}")


def load_config(
    config_file: Optional[Path] = None,
    overrides: Optional[dict[str, str]] = None,
    env: Optional[dict[str, str]] = None,
) -> ServiceConfig:
    """Resolve configuration: flag > env var > file > defaults."""
    config = ServiceConfig()
    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parse_config_text(path.read_text(encoding="utf-8"), config, str(path))
    env = dict(os.environ) if env is None else env
    for name, value in sorted(env.items()):
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX) :].lower()
            _apply(config, key, value, f"env {name}")
    for key, value in (overrides or {}).items():
        if value is not None:
            _apply(config, key, str(value), f"flag --{key.replace('_', '-')}")
    config.validate()
    return config
