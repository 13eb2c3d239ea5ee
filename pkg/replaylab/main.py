from __future__ import annotations

from collections.abc import Sequence

from loguru import logger

from replaylab.cli.commands import EXIT_CONFIG
from replaylab.cli.commands import main as cli_main
from replaylab.core.config import get_settings
from replaylab.core.errors import ConfigError
from replaylab.core.logging import setup_logging


def main(argv: Sequence[str] | None = None) -> int:
    try:
        setup_logging(get_settings().log_level)
    except ConfigError as exc:
        logger.error("Configuration error: {error}", error=str(exc))
        return EXIT_CONFIG
    return cli_main(argv)
