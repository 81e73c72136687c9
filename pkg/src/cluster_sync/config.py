"""Configuration management for Cluster Sync Lab."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .core import ClusterSyncError

CONFIG_FILENAME = ".csync_config.yaml"


class ConfigError(ClusterSyncError):
    """Raised when configuration operations fail."""

    pass


DEFAULT_CONFIG: Dict[str, Any] = {
    "log_level": "INFO",
    "log_file": None,
    "max_workers": 4,
    "progress_bar": True,
    "pbh_tol": 1e-8,
    "balance_tol": 1e-9,
    "edge_tol": 1e-6,
    "xi_tol": 1e-9,
    "contraction_tol": 1e-9,
    "average_samples": 64,
    "divergence_limit": 1e12,
}

POSITIVE_FLOAT_KEYS = (
    "pbh_tol",
    "balance_tol",
    "edge_tol",
    "xi_tol",
    "contraction_tol",
    "divergence_limit",
)
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def find_config_file(start_path: Path) -> Optional[Path]:
    """
    Find the configuration file by searching up the directory tree.

    Args:
        start_path: Starting directory to search from

    Returns:
        Path to config file if found, None otherwise
    """
    current = start_path.resolve()

    while True:
        config_file = current / CONFIG_FILENAME
        if config_file.exists():
            return config_file

        parent = current.parent
        if parent == current:
            break
        current = parent

    return None


def load_config(config_path: Optional[Path] = None) -> Dict[str, Any]:
    """
    Load configuration from file or return defaults.

    Args:
        config_path: Path to config file, or None to auto-detect

    Returns:
        Configuration dictionary

    Raises:
        ConfigError: If config file cannot be read, parsed or holds unknown keys
    """
    if config_path is None:
        config_path = find_config_file(Path.cwd())

    if config_path is None or not config_path.exists():
        return DEFAULT_CONFIG.copy()

    try:
        with open(config_path, "r", encoding="utf-8") as f:
            config = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Failed to parse config file {config_path}: {e}")
    except OSError as e:
        raise ConfigError(f"Failed to read config file {config_path}: {e}")

    if not isinstance(config, dict):
        raise ConfigError(f"Config file {config_path} must contain a mapping")

    unknown = sorted(set(config) - set(DEFAULT_CONFIG))
    if unknown:
        raise ConfigError(
            f"Unknown config key(s) in {config_path}: {', '.join(unknown)}"
        )

    merged_config = DEFAULT_CONFIG.copy()
    merged_config.update(config)
    return _checked(merged_config, config_path)


def _checked(config: Dict[str, Any], source: Path) -> Dict[str, Any]:
    # PyYAML reads 1e-8 (no dot) as a string
    for key in POSITIVE_FLOAT_KEYS:
        try:
            value = float(config[key])
        except (TypeError, ValueError):
            raise ConfigError(f"{key} in {source} must be a number, got {config[key]!r}")
        if not value > 0:
            raise ConfigError(f"{key} in {source} must be positive, got {value:g}")
        config[key] = value
    for key in ("max_workers", "average_samples"):
        value = config[key]
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError(f"{key} in {source} must be an integer >= 1, got {value!r}")
    level = str(config["log_level"]).upper()
    if level not in LOG_LEVELS:
        raise ConfigError(f"log_level in {source} must be one of {', '.join(LOG_LEVELS)}")
    config["log_level"] = level
    return config


def save_config(config: Dict[str, Any], config_path: Path) -> None:
    """
    Save configuration to file.

    Args:
        config: Configuration dictionary
        config_path: Path to save config file

    Raises:
        ConfigError: If config file cannot be written
    """
    try:
        config_path.parent.mkdir(parents=True, exist_ok=True)
        with open(config_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(config, f, default_flow_style=False, indent=2)
    except OSError as e:
        raise ConfigError(f"Failed to write config file {config_path}: {e}")
    except (TypeError, ValueError, yaml.YAMLError) as e:
        raise ConfigError(f"Failed to serialize config data: {e}")


def get_config_value(config: Dict[str, Any], key: str, default: Any = None) -> Any:
    """
    Get a configuration value with fallback to default.

    Args:
        config: Configuration dictionary
        key: Configuration key
        default: Default value if key not found

    Returns:
        Configuration value or default
    """
    return config.get(key, default)
