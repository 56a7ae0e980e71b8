"""
Run configuration files.

Line-oriented `key = value` text, `#` starts a comment. Keys are the fields of
`RunConfig`; command-line flags override file values. Presets live in
`configs/*.conf`.
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import structlog
from pydantic import ValidationError

from app.errors import ConfigError, OutputError
from app.schemas import RunConfig

logger = structlog.get_logger()


def read_key_values(path: str) -> Dict[str, str]:
    """Parse a key = value file into a dict of raw strings."""
    file_path = Path(path)
    if not file_path.exists():
        logger.error("run_config_not_found", path=str(file_path))
        raise ConfigError("config", f"file not found: {file_path}")

    values: Dict[str, str] = {}
    for number, line in enumerate(file_path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {number}", f"expected 'key = value', got {line!r}")
        values[key.strip()] = value.strip()
    return values


def _validate(values: Mapping[str, Any]) -> RunConfig:
    try:
        return RunConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else "config"
        message = "unknown key" if error["type"] == "extra_forbidden" else error["msg"]
        logger.error("run_config_invalid", key=key, error=message)
        raise ConfigError(key, message) from e


def parse_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Build a validated RunConfig.

    Args:
        path: optional key = value file
        overrides: values from flags; None entries are ignored

    Raises:
        ConfigError: naming the offending key
    """
    values: Dict[str, Any] = read_key_values(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return _validate(values)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return "x".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def dump_config(config: RunConfig) -> str:
    """key = value text that `parse_config` reads back to an equal config."""
    lines = []
    for key in RunConfig.model_fields:
        value = getattr(config, key)
        if value is None:
            continue
        lines.append(f"{key} = {_format(value)}")
    return "\n".join(lines) + "\n"


def write_config(config: RunConfig, path: str) -> None:
    try:
        Path(path).write_text(dump_config(config))
    except OSError as e:
        raise OutputError(f"cannot write config ({e})", str(path)) from e


class RunConfigManager:
    """Loads and caches the preset run files in configs/."""

    def __init__(self, config_dir: Optional[str] = None):
        if config_dir is None:
            config_dir = Path(__file__).parent.parent / "configs"

        self.config_dir = Path(config_dir)
        self._cache: Dict[str, RunConfig] = {}

    def load_config(self, name: str) -> RunConfig:
        """
        Load a preset by name (file stem).

        Raises:
            ConfigError: if the preset does not exist or is invalid
        """
        if name in self._cache:
            logger.debug("run_config_cache_hit", preset=name)
            return self._cache[name]

        config_file = self.config_dir / f"{name}.conf"
        if not config_file.exists():
            logger.error("run_config_preset_not_found", preset=name)
            available = ", ".join(self.list_presets()) or "none"
            raise ConfigError("config", f"no file or preset named {name!r} (presets: {available})")

        config = parse_config(str(config_file))
        self._cache[name] = config
        logger.info("run_config_loaded", preset=name, coarse=_format(config.coarse), field=config.field)
        return config

    def list_presets(self) -> List[str]:
        return sorted(p.stem for p in self.config_dir.glob("*.conf"))


_config_manager = None


def get_config_manager() -> RunConfigManager:
    """Singleton preset manager."""
    global _config_manager
    if _config_manager is None:
        _config_manager = RunConfigManager()
    return _config_manager


def load_run_config(source: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Config for a CLI invocation: `source` is a key = value file, a preset name
    or None; non-None `overrides` win over its values.
    """
    if source is None or Path(source).exists():
        return parse_config(source, overrides)

    preset = get_config_manager().load_config(source)
    values: Dict[str, Any] = preset.model_dump()
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return _validate(values)
