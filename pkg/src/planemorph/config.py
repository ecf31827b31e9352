# planemorph/config.py
"""
Runtime configuration for planemorph.

Environment-level knobs only (threads, device, determinism, log level).
Experiment configuration (model, loss, training) is validated from JSON via
``planemorph.common.schemas`` and never read from the environment.
"""
import os
import logging
from typing import Any, Optional

from dotenv import load_dotenv, find_dotenv

logger = logging.getLogger(__name__)

# --- .env loading ---
project_root_path = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..'))
explicit_env_path = os.path.join(project_root_path, '.env')

dotenv_path_to_load: Optional[str] = None
if os.path.exists(explicit_env_path):
    dotenv_path_to_load = explicit_env_path
else:
    try:
        found_path = find_dotenv(usecwd=True, raise_error_if_not_found=False)
        if found_path and os.path.exists(found_path):
            dotenv_path_to_load = found_path
    except Exception as e:  # pylint: disable=broad-except
        logger.warning("Config: Error during find_dotenv: %s. Proceeding without .env.", e)

if dotenv_path_to_load:
    # Values already exported in the shell win over .env entries.
    load_dotenv(dotenv_path=dotenv_path_to_load, override=False)
    logger.debug("Config: Loaded environment variables from: %s", dotenv_path_to_load)
else:
    logger.debug("Config: No .env file found. Using process environment only.")


def _env_int(name: str, default: int, minimum: int = 1) -> int:
    """Reads a positive integer environment variable, falling back to `default` on bad input."""
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning("Config: %s ('%s') is not a valid integer. Using default %d.", name, raw, default)
        return default
    if value < minimum:
        logger.warning("Config: %s (%d) must be >= %d. Using default %d.", name, value, minimum, default)
        return default
    return value


def _env_flag(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    return raw.strip().lower() in ("1", "true", "yes", "on")


# --- Worker parallelism ---
# 1: single-threaded torch, serial evaluation.
THREADS = _env_int("PLANEMORPH_THREADS", 1)

DEVICE = os.getenv("PLANEMORPH_DEVICE", "cpu").strip() or "cpu"
DETERMINISTIC = _env_flag("PLANEMORPH_DETERMINISTIC", True)

LOG_LEVEL = os.getenv("PLANEMORPH_LOG_LEVEL", "INFO").strip().upper()
if LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
    logger.warning("Config: Invalid PLANEMORPH_LOG_LEVEL '%s'. Defaulting to 'INFO'.", LOG_LEVEL)
    LOG_LEVEL = "INFO"


def _log_config_var(var_name: str, var_value: Any):
    """Logs one effective configuration value at DEBUG level."""
    if var_value is not None:
        logger.debug("Config: Effective %s: %s", var_name, var_value)
    else:
        logger.debug("Config: %s is not set or resolved to None.", var_name)


_log_config_var("PLANEMORPH_THREADS", THREADS)
_log_config_var("PLANEMORPH_DEVICE", DEVICE)
_log_config_var("PLANEMORPH_DETERMINISTIC", DETERMINISTIC)
_log_config_var("PLANEMORPH_LOG_LEVEL", LOG_LEVEL)
