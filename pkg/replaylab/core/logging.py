from __future__ import annotations

import logging
import sys
from typing import TextIO

from loguru import logger

from replaylab.core.errors import ConfigError

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level} | {name}:{function}:{line} - {message}"
# matplotlib and numpy report through the stdlib; only their warnings reach the console
THIRD_PARTY_LEVEL = logging.WARNING

_LOGGING_CONFIGURED = False


def resolve_level(level: str) -> str:
    name = level.strip().upper()
    try:
        logger.level(name)
    except ValueError as exc:
        raise ConfigError(f"unknown log level '{level}'", key="LOG_LEVEL") from exc
    return name


def setup_logging(level: str = "INFO", *, sink: TextIO | None = None) -> None:
    """Route loguru to stderr once per process; study summaries stay alone on stdout."""
    global _LOGGING_CONFIGURED
    name = resolve_level(level)
    if _LOGGING_CONFIGURED:
        return

    logging.basicConfig(level=THIRD_PARTY_LEVEL)

    logger.remove()
    # enqueue so records from pool workers do not interleave
    logger.add(
        sink if sink is not None else sys.stderr,
        level=name,
        format=LOG_FORMAT,
        enqueue=True,
        diagnose=False,
        backtrace=False,
    )

    _LOGGING_CONFIGURED = True
