import logging
import sys
from typing import TextIO, Union


def setup_logging(level: Union[int, str] = logging.INFO, stream: TextIO = None):
    """
    Configures the logging system for the command line tools.

    Args:
        level: The logging level, as a number or a name such as "DEBUG" (default: logging.INFO).
        stream: Where records go (default: stderr, so stdout stays free for results and CSV).
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    formatter = logging.Formatter(
        fmt='%(asctime)s | %(levelname)-8s | %(name)-15s | %(message)s',
        datefmt='%H:%M:%S'
    )

    console_handler = logging.StreamHandler(stream or sys.stderr)
    console_handler.setFormatter(formatter)

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Remove existing handlers to avoid duplicates if called multiple times
    if root_logger.hasHandlers():
        root_logger.handlers.clear()

    root_logger.addHandler(console_handler)

    logging.debug("Logging system initialized.")
