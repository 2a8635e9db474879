import logging
import os
from pathlib import Path
from typing import Iterable

from spectral_diffusion.utils.errors import ConfigurationError
from spectral_diffusion.utils.logger import configure_logger


logger = logging.getLogger(__name__)
configure_logger(logger)

TRUE_VALUES = ("true", "yes", "on", "1")
FALSE_VALUES = ("false", "no", "off", "0")


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    """
    Parses `key = value` lines. `#` starts a comment; blank lines are ignored.

    Raises:
        ConfigurationError: On a line without `=`, an empty key or a repeated key.
    """
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            logger.error("%s:%d is not a key = value line", source, number)
            raise ConfigurationError(f"{source}:{number}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}:{number}: empty key")
        if key in values:
            raise ConfigurationError(f"{source}:{number}: key '{key}' given twice")
        values[key] = value
    return values


def read_config(path) -> dict[str, str]:
    """Reads a key = value file; OSError propagates when it cannot be read."""
    path = Path(path)
    return parse_key_values(path.read_text(encoding="utf-8"), str(path))


def format_key_values(pairs: Iterable[tuple[str, object]]) -> str:
    return "".join(f"{key} = {value}\n" for key, value in pairs)


def parse_bool(value: str, key: str) -> bool:
    lowered = value.strip().lower()
    if lowered in TRUE_VALUES:
        return True
    if lowered in FALSE_VALUES:
        return False
    raise ConfigurationError(f"Key '{key}' expects a boolean, got '{value}'")


def env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigurationError(f"Environment variable {name} must be an integer, got '{raw}'") from e


def default_out_dir() -> str:
    return os.getenv("SPDM_OUT_DIR", "runs")
