"""
crowdmap - Density Core Module
Impulse maps, Gaussian splatting, fixed and k-NN adaptive ground truth, counting and
count-preserving downscaling.

Every Gaussian is rasterised directly on its truncated pixel window, clipped to the
image and renormalised so that one person always contributes exactly one unit of
mass, borders included.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .annotations import ImageAnnotation, Point2D, Shape
from .exceptions import ValidationError
from .utils.helpers import split_shape


@dataclass
class DensityMap:
    """
    Nonnegative 2-D grid of persons per pixel.

    `padding` records zero rows/cols appended by `downscale_preserving_count` before
    pooling, expressed in source pixels.
    """

    values: np.ndarray
    padding: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(f"density map must be 2-D, got shape {self.values.shape}")

    @classmethod
    def zeros(cls, shape: Shape) -> "DensityMap":
        return cls(np.zeros(split_shape(shape), dtype=np.float64))

    @property
    def shape(self) -> Shape:
        return self.values.shape

    def copy(self) -> "DensityMap":
        return DensityMap(self.values.copy(), self.padding)


@dataclass(frozen=True)
class KernelSpec:
    sigma_row: float
    sigma_col: float
    truncation_radius_in_sigmas: float = 3.0

    def __post_init__(self):
        if not (self.sigma_row > 0 and self.sigma_col > 0):
            raise ValidationError(f"kernel sigmas must be positive, got ({self.sigma_row}, {self.sigma_col})")
        if not self.truncation_radius_in_sigmas > 0:
            raise ValidationError("truncation radius must be positive")

    @classmethod
    def isotropic(cls, sigma: float, truncation: float = 3.0) -> "KernelSpec":
        return cls(sigma, sigma, truncation)


@dataclass(frozen=True)
class KnnConfig:
    k: int = 3
    beta: float = 0.3
    fallback_sigma: float = 4.0
    min_sigma: float = 0.5
    truncation: float = 3.0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValidationError(f"k must be a positive integer, got {self.k}")
        if not self.beta > 0:
            raise ValidationError(f"beta must be positive, got {self.beta}")
        if not (self.fallback_sigma > 0 and self.min_sigma > 0):
            raise ValidationError("fallback_sigma and min_sigma must be positive")


def _check_inside(point: Point2D, shape: Shape) -> None:
    if not point.inside(shape):
        raise ValidationError(f"point ({point.row}, {point.col}) lies outside shape {tuple(shape)}")


def _nearest_pixel(coordinate: float, extent: int) -> int:
    # round half toward the smaller index, clamp onto the grid
    return min(int(math.ceil(coordinate - 0.5)), extent - 1)


def impulse_map(heads: Sequence[Point2D], shape: Shape) -> np.ndarray:
    """
    Unit impulse per head at its nearest pixel; coincident heads accumulate.

    Args:
        heads: Head points, all inside `shape`
        shape: (rows, cols)

    Returns:
        Float64 grid whose sum is exactly the number of heads
    """
    rows, cols = split_shape(shape)
    grid = np.zeros((rows, cols), dtype=np.float64)
    for head in heads:
        _check_inside(head, (rows, cols))
        grid[_nearest_pixel(head.row, rows), _nearest_pixel(head.col, cols)] += 1.0
    return grid


def _axis_weights(center: float, sigma: float, radius_in_sigmas: float, extent: int) -> Tuple[int, np.ndarray]:
    reach = radius_in_sigmas * sigma
    nearest = _nearest_pixel(center, extent)
    # the nearest pixel is always in the window, however narrow the kernel
    first = min(max(int(math.ceil(center - reach)), 0), nearest)
    last = max(min(int(math.floor(center + reach)), extent - 1), nearest)
    pixels = np.arange(first, last + 1)
    offsets = pixels.astype(np.float64) - center
    weights = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    if not weights.sum() > 0:
        # every weight underflowed: the kernel is narrower than a pixel
        weights = (pixels == nearest).astype(np.float64)
    return first, weights


def kernel_window(center: Point2D, kernel: KernelSpec, shape: Shape) -> Tuple[int, int, np.ndarray]:
    """
    Clipped, renormalised kernel for a splat.

    Returns:
        (first_row, first_col, window) with `window.sum() == 1` up to rounding
    """
    rows, cols = shape
    r0, row_weights = _axis_weights(center.row, kernel.sigma_row, kernel.truncation_radius_in_sigmas, rows)
    c0, col_weights = _axis_weights(center.col, kernel.sigma_col, kernel.truncation_radius_in_sigmas, cols)
    window = np.outer(row_weights / row_weights.sum(), col_weights / col_weights.sum())
    return r0, c0, window


def splat_gaussian(density: DensityMap, center: Point2D, kernel: KernelSpec) -> DensityMap:
    """
    Add one separable Gaussian of unit mass centred on `center` (in place).

    The kernel is evaluated at pixel centres within `truncation_radius_in_sigmas`
    of the exact (possibly fractional) centre, clipped to the image and
    renormalised, so the map's sum grows by exactly one.

    Raises:
        ValidationError: centre outside the map
    """
    _check_inside(center, density.shape)
    r0, c0, window = kernel_window(center, kernel, density.shape)
    density.values[r0:r0 + window.shape[0], c0:c0 + window.shape[1]] += window
    return density


def _splat_all(ann: ImageAnnotation, kernels: Sequence[KernelSpec]) -> DensityMap:
    density = DensityMap.zeros(ann.shape)
    for head, kernel in zip(ann.heads, kernels):
        splat_gaussian(density, head, kernel)
    return density


def gen_fixed(ann: ImageAnnotation, sigma: float = 4.0, truncation: float = 3.0) -> DensityMap:
    """
    Fixed-kernel ground truth: one isotropic Gaussian of width `sigma` per head.
    """
    kernel = KernelSpec.isotropic(sigma, truncation)
    return _splat_all(ann, [kernel] * ann.count)


def _coordinates(heads: Sequence[Point2D]) -> np.ndarray:
    return np.array([[h.row, h.col] for h in heads], dtype=np.float64).reshape(-1, 2)


def knn_mean_distances(heads: Sequence[Point2D], k: int) -> np.ndarray:
    """
    Mean distance from every head to its min(k, P-1) nearest other heads.

    Returns:
        Array of length P; NaN where a head has no neighbours (P = 1)
    """
    count = len(heads)
    if count == 0:
        return np.zeros(0, dtype=np.float64)
    if count == 1:
        return np.full(1, np.nan)
    neighbours = min(int(k), count - 1)
    points = _coordinates(heads)
    distances, _ = cKDTree(points).query(points, k=neighbours + 1)
    # column 0 is the query point itself (distance 0, the minimum)
    return np.asarray(distances, dtype=np.float64).reshape(count, neighbours + 1)[:, 1:].mean(axis=1)


def knn_mean_distance(heads: Sequence[Point2D], i: int, k: int) -> Optional[float]:
    """
    Mean Euclidean distance from head `i` to its min(k, P-1) nearest other heads.

    Returns:
        The distance in pixels, or None when head `i` has no neighbours
    """
    count = len(heads)
    if not 0 <= i < count:
        raise IndexError(f"head index {i} out of range for {count} heads")
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    if count == 1:
        return None
    neighbours = min(int(k), count - 1)
    points = _coordinates(heads)
    distances, _ = cKDTree(points).query(points[i], k=neighbours + 1)
    return float(np.sort(np.atleast_1d(distances))[1:].mean())


def knn_sigmas(ann: ImageAnnotation, cfg: KnnConfig) -> np.ndarray:
    """Per-head sigma: beta * mean k-NN distance, fallback when alone, floored at min_sigma."""
    distances = knn_mean_distances(ann.heads, cfg.k)
    sigmas = np.where(np.isnan(distances), cfg.fallback_sigma, cfg.beta * np.nan_to_num(distances))
    return np.maximum(sigmas, cfg.min_sigma)


def gen_knn(ann: ImageAnnotation, cfg: Optional[KnnConfig] = None) -> DensityMap:
    """
    Geometry-adaptive ground truth: sigma_i = beta * mean distance to the k nearest heads.
    """
    cfg = cfg or KnnConfig()
    kernels = [KernelSpec.isotropic(float(s), cfg.truncation) for s in knn_sigmas(ann, cfg)]
    return _splat_all(ann, kernels)


def count_from_map(density) -> float:
    """Person count read off a map: the sum of its values."""
    values = density.values if isinstance(density, DensityMap) else np.asarray(density)
    return float(values.sum())


def downscale_preserving_count(density: DensityMap, factor: int) -> DensityMap:
    """
    Sum-pool non-overlapping factor x factor blocks.

    The map is zero-padded at the bottom/right to the next multiple of `factor`;
    the padding is recorded on the result. The sum is preserved.
    """
    if int(factor) != factor or factor < 1:
        raise ValidationError(f"downscale factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return density.copy()
    rows, cols = density.shape
    pad_rows, pad_cols = (-rows) % factor, (-cols) % factor
    values = np.pad(density.values, ((0, pad_rows), (0, pad_cols)))
    pooled = values.reshape(values.shape[0] // factor, factor, values.shape[1] // factor, factor).sum(axis=(1, 3))
    return DensityMap(pooled, padding=(pad_rows, pad_cols))


def render_pgm_pixels(density: DensityMap) -> np.ndarray:
    """
    8-bit rendering of a map: linear scaling so the maximum maps to 255.
    An all-zero map renders black.
    """
    values = np.clip(density.values, 0.0, None)
    peak = values.max() if values.size else 0.0
    if peak <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.clip(np.rint(values / peak * 255.0), 0, 255).astype(np.uint8)
