"""
Runtime configuration for ranger commands.
Values come from flags, then RANGER_* environment variables, then ranger.toml, then defaults.
"""
import os
import tomllib
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from ranger.errors import ConfigError


class RangerSettings:
    """Configuration settings for analysis and restoration commands."""

    ENV_PREFIX = "RANGER_"
    CONFIG_FILE = "ranger.toml"

    # Corpus Configuration
    index: Optional[str] = None
    poms: Optional[str] = None
    vulns: Optional[str] = None
    snapshot: Optional[str] = None

    # Analysis Configuration
    max_depth: int = 10
    halflife_mode: str = "absolute"
    min_affected: int = 0
    bucket: str = "month"
    horizon: Optional[str] = None
    count_scopes: Tuple[str, ...] = ("compile", "runtime")

    # Restoration Configuration
    open_upper: bool = False
    allow_holes: bool = False
    validate_cmd: Optional[str] = None
    validate_timeout: float = 300.0
    parallelism: int = 4
    surfaces: Optional[str] = None
    usage_dir: Optional[str] = None

    # Runtime Configuration
    duckdb: Optional[str] = None
    log_level: str = "INFO"

    _KEYS: Tuple[str, ...] = (
        "index", "poms", "vulns", "snapshot",
        "max_depth", "halflife_mode", "min_affected", "bucket", "horizon", "count_scopes",
        "open_upper", "allow_holes", "validate_cmd", "validate_timeout", "parallelism",
        "surfaces", "usage_dir", "duckdb", "log_level",
    )

    _TYPES: Dict[str, type] = {
        "max_depth": int,
        "min_affected": int,
        "parallelism": int,
        "validate_timeout": float,
        "open_upper": bool,
        "allow_holes": bool,
        "count_scopes": tuple,
    }

    def __init__(self, **values: Any) -> None:
        for key, value in values.items():
            if key not in self.keys():
                raise ConfigError(f"unknown setting: {key}")
            setattr(self, key, self._coerce(key, value))

    @classmethod
    def keys(cls) -> Tuple[str, ...]:
        return cls._KEYS

    @classmethod
    def _coerce(cls, key: str, value: Any) -> Any:
        kind = cls._TYPES.get(key)
        if value is None or kind is None:
            return value
        try:
            if kind is bool:
                if isinstance(value, str):
                    return value.strip().lower() in ("1", "true", "yes", "on")
                return bool(value)
            if kind is tuple:
                if isinstance(value, str):
                    return tuple(part.strip() for part in value.split(",") if part.strip())
                return tuple(value)
            return kind(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid value for {key}: {value!r}") from e

    @classmethod
    def read_config_file(cls, path: Optional[str]) -> Dict[str, Any]:
        """Read a flat key/value ranger.toml; a missing default file is not an error."""
        explicit = path is not None
        target = Path(path) if explicit else Path(cls.CONFIG_FILE)
        if not target.exists():
            if explicit:
                raise ConfigError(f"config file not found: {target}")
            return {}
        try:
            with open(target, "rb") as handle:
                data = tomllib.load(handle)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"cannot read {target}: {e}") from e
        return {key.replace("-", "_"): value for key, value in data.items()}

    @classmethod
    def read_environment(cls, environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
        environ = os.environ if environ is None else environ
        found: Dict[str, Any] = {}
        for key in cls.keys():
            name = cls.ENV_PREFIX + key.upper()
            if name in environ:
                found[key] = environ[name]
        return found

    @classmethod
    def load(
        cls,
        config_path: Optional[str] = None,
        overrides: Optional[Mapping[str, Any]] = None,
        environ: Optional[Mapping[str, str]] = None,
    ) -> "RangerSettings":
        """Merge config file, environment and flag overrides (None means not given)."""
        merged: Dict[str, Any] = {}
        merged.update(cls.read_config_file(config_path))
        merged.update(cls.read_environment(environ))
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        unknown = sorted(set(merged) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown setting(s): {', '.join(unknown)}")
        settings = cls(**merged)
        settings.validate()
        return settings

    def validate(self) -> None:
        """Validate configuration values."""
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.halflife_mode not in ("absolute", "relative"):
            raise ConfigError("halflife_mode must be 'absolute' or 'relative'")
        if self.bucket not in ("day", "month"):
            raise ConfigError("bucket must be 'day' or 'month'")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.validate_timeout <= 0:
            raise ConfigError("validate_timeout must be positive")
        if self.validate_cmd and "{version}" not in self.validate_cmd:
            raise ConfigError("validate_cmd must contain a {version} placeholder")
        valid_scopes = {"compile", "provided", "runtime", "test", "system", "import"}
        bad = [s for s in self.count_scopes if s not in valid_scopes]
        if bad:
            raise ConfigError(f"unknown scope(s) in count_scopes: {', '.join(bad)}")

    def as_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in self.keys()}
