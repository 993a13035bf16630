"""Configuration management.

Resolution order is flags > environment > config file > defaults.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigurationError

CONFIG_FILE = Path("lemmaforge.yaml")

DEFAULT_TRIVIAL_TACTICS = [
    "hint", "linarith", "exact?", "simp", "omega", "ring", "norm_cast", "norm_num",
]

# Environment variable -> config key.
ENV_OVERRIDES = {
    "LEMMAFORGE_REPL": "repl_path",
    "LEMMAFORGE_LEAN_PROJECT": "lean_project_root",
    "LEMMAFORGE_POOL_SIZE": "pool_size",
    "LEMMAFORGE_RUNS_DIR": "runs_dir",
    "LEMMAFORGE_DATASETS_DIR": "datasets_dir",
}


def _default_pool_size() -> int:
    return max(1, (os.cpu_count() or 2) - 1)


class ModelSpec(BaseModel):
    """One entry of the model endpoint registry.

    API keys are never stored here; `api_key_env` names the variable to read.
    """

    model_config = ConfigDict(extra="forbid")

    adapter: Literal["openai-chat", "scripted"] = "openai-chat"
    model_id: str
    endpoint: str = ""
    api_key_env: str = "LEMMAFORGE_MODEL_KEY"
    decoding: dict[str, Any] = Field(default_factory=dict)
    timeout_s: float = 300.0
    max_retries: int = 3
    responses_file: Path | None = None


class GlobalConfig(BaseModel):
    """Resolved configuration shared by every command."""

    model_config = ConfigDict(extra="forbid")

    repl_path: Path | None = None
    repl_args: list[str] = Field(default_factory=list)
    lean_project_root: Path | None = None
    base_imports: list[str] = Field(default_factory=lambda: ["import Mathlib"])
    lean_version: str = "4.17.0"
    pool_size: int = Field(default_factory=_default_pool_size)
    verify_timeout_s: float = 60.0
    batch_timeout_s: float = 600.0
    memory_cap_mb: int = 8192
    max_requests_per_worker: int = 200
    trivial_tactics: list[str] = Field(default_factory=lambda: list(DEFAULT_TRIVIAL_TACTICS))
    triviality_timeout_s: float = 30.0
    digest_budget_bytes: int = 4096
    datasets_dir: Path = Path("datasets")
    runs_dir: Path = Path("runs")
    models: dict[str, ModelSpec] = Field(default_factory=dict)

    @field_validator("pool_size")
    @classmethod
    def _pool_size_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("pool_size must be >= 1")
        return value

    @field_validator("verify_timeout_s", "batch_timeout_s", "triviality_timeout_s")
    @classmethod
    def _timeouts_positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("timeouts must be > 0")
        return value


def get_config(path: Path | None = None) -> dict[str, Any]:
    """Load the raw configuration mapping from file."""
    config_file = path or CONFIG_FILE
    if not config_file.exists():
        return {}

    try:
        with open(config_file, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{config_file}: invalid YAML ({e})") from e

    if not isinstance(data, dict):
        raise ConfigurationError(f"{config_file}: expected a mapping at top level")
    return data


def set_config(key: str, value: str, path: Path | None = None) -> None:
    """Set a top-level configuration value in the config file."""
    config_file = path or CONFIG_FILE
    if key not in GlobalConfig.model_fields:
        raise ConfigurationError(f"unknown configuration key: {key}")

    config = get_config(config_file)
    config[key] = yaml.safe_load(value) if value else value
    # Validate before writing so a bad value never lands on disk.
    _validate({**config})

    config_file.parent.mkdir(parents=True, exist_ok=True)
    with open(config_file, "w", encoding="utf-8") as f:
        yaml.safe_dump(config, f, sort_keys=True, allow_unicode=True)


def load_config(path: Path | None = None, **overrides: Any) -> GlobalConfig:
    """Resolve the configuration from file, environment and flag overrides.

    Overrides whose value is None are ignored, so CLI options can be passed
    through unconditionally.
    """
    data = get_config(path)

    for env_var, key in ENV_OVERRIDES.items():
        value = os.environ.get(env_var)
        if value:
            data[key] = value

    data.update({key: value for key, value in overrides.items() if value is not None})
    return _validate(data)


def _validate(data: dict[str, Any]) -> GlobalConfig:
    try:
        return GlobalConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e


def get_api_key(spec: ModelSpec) -> str | None:
    """Get the bearer token for a model from the environment."""
    return os.environ.get(spec.api_key_env)
