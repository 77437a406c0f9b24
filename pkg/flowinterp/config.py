"""
Configuration layering for runs.

Lowest to highest priority: built-in ``RunConfig`` defaults, a flat ``key = value``
config file, ``FLOWINTERP_<KEY>`` environment variables (``.env`` files loaded first)
and finally explicit overrides such as command-line flags.
"""
import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from dotenv import dotenv_values, load_dotenv

from .control import RunConfig
from .grid import ImageIOError

# Configure logger
logger = logging.getLogger(__name__)

ENV_PREFIX = "FLOWINTERP_"
CONFIG_ENV = "FLOWINTERP_CONFIG"
DEFAULT_CONFIG_NAME = "flowinterp.cfg"


def load_env_files() -> None:
    """Load ``~/.env`` then ``./.env`` without overriding variables already set."""
    env_paths = [
        Path.home() / ".env",  # global
        Path.cwd() / ".env",   # project-specific
    ]
    for env_path in env_paths:
        if env_path.exists():
            load_dotenv(env_path, override=False)


def find_config_file(explicit: Optional[Path] = None,
                     environ: Optional[Mapping[str, str]] = None) -> Optional[Path]:
    """``explicit``, else ``$FLOWINTERP_CONFIG``, else ``./flowinterp.cfg`` if it exists."""
    environ = os.environ if environ is None else environ
    if explicit is not None:
        return Path(explicit)
    if environ.get(CONFIG_ENV):
        return Path(environ[CONFIG_ENV])
    local = Path.cwd() / DEFAULT_CONFIG_NAME
    return local if local.exists() else None


def read_config_file(path: Path) -> Dict[str, str]:
    """Parse a flat ``key = value`` file (``#`` comments allowed).

    Raises:
        ImageIOError: If the file cannot be read.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"Config file not found: {path}")
    try:
        values = dotenv_values(path)
    except (OSError, UnicodeDecodeError) as e:
        raise ImageIOError(f"Cannot read config file {path}: {e}") from e
    logger.debug(f"Loaded {len(values)} keys from {path}")
    return {key: value for key, value in values.items() if value is not None}


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """``FLOWINTERP_<KEY>`` variables for every RunConfig key."""
    environ = os.environ if environ is None else environ
    out = {}
    for key in RunConfig.keys():
        name = ENV_PREFIX + key.upper()
        if name in environ and environ[name] != "":
            out[key] = environ[name]
    return out


def resolve_config(
    config_path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Merge defaults, config file, environment and overrides into a RunConfig.

    Raises:
        ConfigError: On unknown keys or invalid values.
        ImageIOError: If an explicitly named config file cannot be read.
    """
    cfg = RunConfig()
    path = find_config_file(config_path, environ)
    if path is not None:
        cfg = RunConfig.from_mapping(read_config_file(path), cfg)
    env = env_overrides(environ)
    if env:
        logger.debug(f"Environment overrides: {sorted(env)}")
        cfg = RunConfig.from_mapping(env, cfg)
    if overrides:
        cfg = RunConfig.from_mapping(overrides, cfg)
    return cfg


def upsert_config_value(config_file: Path, key: str, value: str) -> None:
    """Insert or update a ``key = value`` line in a config file."""
    config_file = Path(config_file)
    line_text = f"{key} = {value}\n"
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")

    lines = []
    if config_file.exists():
        with open(config_file, "r") as f:
            lines = f.readlines()

    for i, line in enumerate(lines):
        if pattern.match(line):
            lines[i] = line_text
            break
    else:
        if lines and not lines[-1].endswith("\n"):
            lines[-1] += "\n"
        lines.append(line_text)

    try:
        config_file.parent.mkdir(parents=True, exist_ok=True)
        with open(config_file, "w") as f:
            f.writelines(lines)
    except OSError as e:
        raise ImageIOError(f"Cannot write config file {config_file}: {e}") from e
