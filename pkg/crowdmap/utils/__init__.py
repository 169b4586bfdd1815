"""
Utility functions and helpers for crowdmap.
"""

from .config import Config
from .helpers import (
    atomic_write_bytes,
    atomic_write_text,
    file_digest,
    format_float,
    load_dmap,
    load_pgm,
    save_dmap,
    save_pgm,
    timer,
)
from .logger import LoggerMixin, get_logger, setup_logging

__all__ = [
    'Config',
    'LoggerMixin',
    'atomic_write_bytes',
    'atomic_write_text',
    'file_digest',
    'format_float',
    'get_logger',
    'load_dmap',
    'load_pgm',
    'save_dmap',
    'save_pgm',
    'setup_logging',
    'timer',
]
