"""
Helper functions for crowdmap: file formats, atomic output, digests and timing.
"""

import functools
import hashlib
import io
import os
import struct
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, Tuple, TypeVar, Union

import numpy as np
from PIL import Image

from ..exceptions import ValidationError
from .logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, os.PathLike]
T = TypeVar('T')
R = TypeVar('R')

DMAP_MAGIC = b'DMAP'
DMAP_VERSION = 1
_DMAP_HEADER = struct.Struct('<4sBII')


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """
    Write bytes to a temp file next to `path`, then rename it into place.

    Args:
        path: Destination file
        data: Content

    Returns:
        The destination path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f'.{path.name}.', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Text variant of `atomic_write_bytes` (UTF-8, '\\n' line endings)."""
    return atomic_write_bytes(path, text.encode('utf-8'))


def file_digest(path: PathLike) -> str:
    """SHA-256 hex digest of a file."""
    sha = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            sha.update(chunk)
    return sha.hexdigest()


def format_float(value: float) -> str:
    """Shortest decimal string that round-trips to the same float."""
    return repr(float(value))


def encode_dmap(values: np.ndarray) -> bytes:
    """
    Encode a 2-D grid in the DMAP format.

    Layout: magic 'DMAP', version u8, rows u32, cols u32 (little-endian), then
    rows*cols float32 little-endian values in row-major order.
    """
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValidationError(f"DMAP needs a 2-D grid, got shape {values.shape}")
    rows, cols = values.shape
    header = _DMAP_HEADER.pack(DMAP_MAGIC, DMAP_VERSION, rows, cols)
    return header + np.ascontiguousarray(values, dtype='<f4').tobytes()


def decode_dmap(data: bytes) -> np.ndarray:
    """Decode DMAP bytes into a float64 grid."""
    if len(data) < _DMAP_HEADER.size:
        raise ValidationError("DMAP data is shorter than its header")
    magic, version, rows, cols = _DMAP_HEADER.unpack_from(data)
    if magic != DMAP_MAGIC:
        raise ValidationError(f"bad DMAP magic {magic!r}")
    if version != DMAP_VERSION:
        raise ValidationError(f"unsupported DMAP version {version}")
    expected = _DMAP_HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise ValidationError(f"DMAP payload is {len(data)} bytes, expected {expected}")
    grid = np.frombuffer(data, dtype='<f4', offset=_DMAP_HEADER.size)
    return grid.reshape(rows, cols).astype(np.float64)


def save_dmap(path: PathLike, values: np.ndarray) -> Path:
    return atomic_write_bytes(path, encode_dmap(values))


def load_dmap(path: PathLike) -> np.ndarray:
    return decode_dmap(Path(path).read_bytes())


def encode_pgm(pixels: np.ndarray) -> bytes:
    """Encode an 8-bit grayscale image as binary PGM (P5)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValidationError(f"PGM needs a 2-D image, got shape {pixels.shape}")
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(buffer, format='PPM')
    return buffer.getvalue()


def save_pgm(path: PathLike, pixels: np.ndarray) -> Path:
    return atomic_write_bytes(path, encode_pgm(pixels))


def load_pgm(path: PathLike) -> np.ndarray:
    """Read a grayscale image as a float64 array of 0-255 intensities."""
    with Image.open(path) as image:
        return np.asarray(image.convert('L'), dtype=np.float64)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Round and clamp intensities to 0-255 bytes."""
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def parallel_map(func: Callable[[T], R], items: Iterable[T], workers: int) -> List[R]:
    """
    Apply `func` over `items` with up to `workers` threads; results keep input order.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def timer(func):
    """
    Decorator that logs how long a function took.

    Args:
        func: Function to time

    Returns:
        Wrapped function
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        logger.debug(f"{func.__name__} executed in {time.perf_counter() - start_time:.2f} seconds")
        return result
    return wrapper


def split_shape(shape: Tuple[int, int]) -> Tuple[int, int]:
    """Validate a (rows, cols) pair of positive integers."""
    if len(shape) != 2:
        raise ValidationError(f"shape must be (rows, cols), got {shape!r}")
    rows, cols = (int(v) for v in shape)
    if rows <= 0 or cols <= 0 or rows != shape[0] or cols != shape[1]:
        raise ValidationError(f"shape must hold positive integers, got {shape!r}")
    return rows, cols
