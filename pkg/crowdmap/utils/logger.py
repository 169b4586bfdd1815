"""
Logging setup shared by the library and the command line.
"""

import logging
import sys
from typing import Optional

LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"

_ROOT = "crowdmap"


def setup_logging(level: str = "INFO") -> logging.Logger:
    """
    Install a single stream handler on the package logger.

    Args:
        level: Logging level name (DEBUG, INFO, WARNING, ...)

    Returns:
        The configured package logger
    """
    logger = logging.getLogger(_ROOT)
    logger.setLevel(level.upper())
    # exactly one package handler, bound to the current sys.stderr
    for old in [h for h in logger.handlers if getattr(h, "_crowdmap", False)]:
        logger.removeHandler(old)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._crowdmap = True
    logger.addHandler(handler)
    logger.propagate = False
    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Return a logger below the package logger."""
    if not name or name == _ROOT:
        return logging.getLogger(_ROOT)
    if name.startswith(_ROOT + "."):
        return logging.getLogger(name)
    return logging.getLogger(f"{_ROOT}.{name}")


class LoggerMixin:
    """Gives a class a `logger` named after it."""

    @property
    def logger(self) -> logging.Logger:
        return get_logger(type(self).__name__)
