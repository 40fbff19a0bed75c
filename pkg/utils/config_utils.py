# utils/config_utils.py

import hashlib
import json
import logging
import os
from dataclasses import asdict, fields, is_dataclass, replace
from typing import Any, Dict, Iterable, Optional, Type, TypeVar

from dotenv import load_dotenv

from core.errors import ConfigError

T = TypeVar("T")

DEFAULT_OUT_DIR = "runs"
DEFAULT_WORKERS = 1


def load_environment() -> None:
    """Pick up CORRECTOR_* process defaults from a .env file, if any."""
    load_dotenv()


def env_out_dir() -> str:
    return os.getenv("CORRECTOR_OUT_DIR", DEFAULT_OUT_DIR)


def env_workers() -> int:
    raw = os.getenv("CORRECTOR_WORKERS")
    if not raw:
        return DEFAULT_WORKERS
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError("CORRECTOR_WORKERS", f"not an integer: {raw!r}")


def env_log_level() -> str:
    return os.getenv("CORRECTOR_LOG_LEVEL", "INFO").upper()


def _env_flag(name: str) -> bool:
    return os.getenv(name, "").lower() in ("1", "true", "yes")


def spinner_disabled() -> bool:
    return _env_flag("CORRECTOR_NO_SPINNER")


def env_step_logging() -> bool:
    return _env_flag("CORRECTOR_STEP_LOG")


def load_config(path: str) -> Dict[str, Any]:
    """Read a flat JSON config object."""
    if not os.path.exists(path):
        raise ConfigError("config", f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"{path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path} must hold a JSON object")
    logging.info(f"Loaded config from {path}")
    return data


def _coerce(value: Any, current: Any) -> Any:
    # JSON has no tuples
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def apply_overrides(config: T, overrides: Dict[str, Any], allowed_extra: Iterable[str] = ()) -> T:
    """Return a copy of a dataclass config with the given keys replaced; unknown keys are an error."""
    names = {f.name for f in fields(config)}
    extra = set(allowed_extra)
    unknown = [k for k in overrides if k not in names and k not in extra]
    if unknown:
        raise ConfigError(unknown[0], f"unknown key for {type(config).__name__}")
    changes = {k: _coerce(v, getattr(config, k)) for k, v in overrides.items() if k in names and v is not None}
    return replace(config, **changes)


def resolve_config(cls: Type[T], file_values: Optional[Dict[str, Any]] = None,
                   cli_values: Optional[Dict[str, Any]] = None, **defaults) -> T:
    """
    Dataclass defaults, then the config file, then CLI flags.

    CLI values of None mean "flag not given" and are skipped.
    """
    config = cls(**defaults)
    if file_values:
        config = apply_overrides(config, file_values)
    if cli_values:
        config = apply_overrides(config, {k: v for k, v in cli_values.items() if v is not None})
    return config


def split_config(file_values: Dict[str, Any], *classes: type) -> list:
    """Partition one flat key namespace across several config dataclasses."""
    known = [{f.name for f in fields(cls)} for cls in classes]
    parts = [{} for _ in classes]
    for key, value in file_values.items():
        owners = [i for i, names in enumerate(known) if key in names]
        if not owners:
            raise ConfigError(key, "unknown config key")
        for i in owners:
            parts[i][key] = value
    return parts


def to_plain(value: Any) -> Any:
    """JSON-ready copy of configs and numpy scalars."""
    if is_dataclass(value) and not isinstance(value, type):
        return to_plain(asdict(value))
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if hasattr(value, "item") and callable(value.item):
        return value.item()
    return value


def canonical_json(config: Any) -> str:
    return json.dumps(to_plain(config), sort_keys=True, separators=(",", ":"))


def config_digest(config: Any) -> str:
    """SHA-256 of the canonical config with every 'seed' key removed."""
    plain = to_plain(config)

    def strip(value):
        if isinstance(value, dict):
            return {k: strip(v) for k, v in value.items() if k != "seed"}
        if isinstance(value, list):
            return [strip(v) for v in value]
        return value

    return hashlib.sha256(canonical_json(strip(plain)).encode("utf-8")).hexdigest()
