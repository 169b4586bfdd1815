"""
crowdmap - Augmentation Module
Sliding-window patches and seeded photometric noise, applied jointly to images and
their density maps.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .annotations import ImageAnnotation, Point2D, Shape
from .density_core import DensityMap, count_from_map
from .exceptions import ShapeError, ValidationError
from .utils.logger import LoggerMixin, get_logger

logger = get_logger(__name__)

Origin = Tuple[int, int]


@dataclass(frozen=True)
class PatchSpec:
    window: int = 256
    stride: int = 70

    def __post_init__(self):
        if int(self.window) != self.window or self.window <= 0:
            raise ValidationError(f"window must be a positive integer, got {self.window}")
        if int(self.stride) != self.stride or self.stride <= 0:
            raise ValidationError(f"stride must be a positive integer, got {self.stride}")


@dataclass(frozen=True)
class NoiseSpec:
    gaussian_stddev: float = 5.0
    brightness_delta_range: Tuple[float, float] = (-20.0, 20.0)
    contrast_factor_range: Tuple[float, float] = (0.8, 1.25)
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_stddev < 0:
            raise ValidationError(f"gaussian_stddev must be >= 0, got {self.gaussian_stddev}")
        low, high = self.brightness_delta_range
        if low > high:
            raise ValidationError(f"brightness range is reversed: {self.brightness_delta_range}")
        low, high = self.contrast_factor_range
        if not (0 < low <= high):
            raise ValidationError(f"contrast range must be positive and ordered: {self.contrast_factor_range}")


@dataclass(frozen=True)
class NoiseDraw:
    """The per-image values drawn by `apply_noise`, kept for provenance."""

    seed: int
    contrast: float
    brightness: float
    gaussian_stddev: float


@dataclass
class Patch:
    origin: Origin
    annotation: ImageAnnotation
    density: DensityMap

    @property
    def head_count(self) -> int:
        return self.annotation.count

    @property
    def mass(self) -> float:
        return count_from_map(self.density)

    @property
    def discrepancy(self) -> float:
        """Map mass minus head count; nonzero when a Gaussian straddles the cut."""
        return self.mass - self.head_count


def _axis_origins(extent: int, window: int, stride: int) -> List[int]:
    if extent < window:
        return []
    return list(range(0, extent - window + 1, stride))


def slide_patches(image_shape: Shape, spec: PatchSpec) -> List[Origin]:
    """
    Row-major patch origins (0, stride, 2*stride, ...) per axis with origin + window <= extent.

    An image smaller than the window yields no origins and a warning.
    """
    rows, cols = int(image_shape[0]), int(image_shape[1])
    row_origins = _axis_origins(rows, spec.window, spec.stride)
    col_origins = _axis_origins(cols, spec.window, spec.stride)
    origins = [(r, c) for r in row_origins for c in col_origins]
    if not origins:
        logger.warning(f"image of shape {(rows, cols)} is smaller than the {spec.window}px window; no patches")
    return origins


def cut_patch(ann: ImageAnnotation, density: DensityMap, origin: Origin, window: int) -> Patch:
    """
    Crop a window out of an annotation and its map.

    Heads are kept iff their point lies in [origin, origin + window) and are re-based to
    patch coordinates; the map is a plain crop, so its mass may differ from the head count.

    Raises:
        ShapeError: annotation and map shapes differ
        ValidationError: window does not fit at `origin`
    """
    if tuple(ann.shape) != tuple(density.shape):
        raise ShapeError(f"annotation shape {ann.shape} differs from map shape {density.shape}")
    r0, c0 = int(origin[0]), int(origin[1])
    rows, cols = ann.shape
    if r0 < 0 or c0 < 0 or r0 + window > rows or c0 + window > cols:
        raise ValidationError(f"window {window} at origin {origin} does not fit image {ann.shape}")
    heads = tuple(
        Point2D(h.row - r0, h.col - c0)
        for h in ann.heads
        if r0 <= h.row < r0 + window and c0 <= h.col < c0 + window
    )
    sub_annotation = ImageAnnotation(f"{ann.image_id}_r{r0}_c{c0}", (window, window), heads)
    sub_map = DensityMap(density.values[r0:r0 + window, c0:c0 + window].copy())
    return Patch((r0, c0), sub_annotation, sub_map)


def noise_rng(spec: NoiseSpec, index: int) -> np.random.Generator:
    """Per-image generator; seed XOR image index keeps parallel order irrelevant."""
    return np.random.default_rng(int(spec.seed) ^ int(index))


def apply_noise(image: np.ndarray, spec: NoiseSpec, index: int = 0) -> Tuple[np.ndarray, NoiseDraw]:
    """
    out = clamp((in + N(0, stddev)) * contrast + brightness, 0, 255).

    Contrast and brightness are drawn once per image. Density maps are not touched.

    Returns:
        (noisy image as float64, the values drawn)
    """
    image = np.asarray(image, dtype=np.float64)
    rng = noise_rng(spec, index)
    contrast = float(rng.uniform(*spec.contrast_factor_range))
    brightness = float(rng.uniform(*spec.brightness_delta_range))
    noise = rng.normal(0.0, spec.gaussian_stddev, size=image.shape)
    out = np.clip((image + noise) * contrast + brightness, 0.0, 255.0)
    return out, NoiseDraw(int(spec.seed) ^ int(index), contrast, brightness, spec.gaussian_stddev)


@dataclass
class AugmentedRecord:
    patch_id: str
    source_image: str
    origin: Origin
    image: np.ndarray
    patch: Patch
    noise: Optional[NoiseDraw]

    def provenance(self) -> Dict[str, Any]:
        return {
            'patch': self.patch_id,
            'source_image': self.source_image,
            'origin': list(self.origin),
            'heads': self.patch.head_count,
            'map_mass': self.patch.mass,
            'discrepancy': self.patch.discrepancy,
            'noise': asdict(self.noise) if self.noise else None,
        }


class DatasetAugmenter(LoggerMixin):
    """
    Tile every image with a sliding window and optionally add photometric noise.
    """

    def __init__(self, patch_spec: PatchSpec, noise_spec: Optional[NoiseSpec] = None):
        self.patch_spec = patch_spec
        self.noise_spec = noise_spec
        self.warnings: List[str] = []

    def augment_image(self, index: int, ann: ImageAnnotation, image: np.ndarray,
                      density: DensityMap) -> List[AugmentedRecord]:
        """
        All patches of one image; patch k of image `index` uses noise stream
        (index, k) so records are reproducible in any processing order.
        """
        if tuple(np.shape(image)) != tuple(ann.shape):
            raise ShapeError(f"image '{ann.image_id}' has shape {np.shape(image)}, annotation says {ann.shape}")
        origins = slide_patches(ann.shape, self.patch_spec)
        if not origins:
            self.warnings.append(f"{ann.image_id}: smaller than window {self.patch_spec.window}")
        records = []
        window = self.patch_spec.window
        for k, origin in enumerate(origins):
            patch = cut_patch(ann, density, origin, window)
            r0, c0 = origin
            pixels = np.asarray(image, dtype=np.float64)[r0:r0 + window, c0:c0 + window]
            draw = None
            if self.noise_spec is not None:
                pixels, draw = apply_noise(pixels, self.noise_spec, self._stream(index, k))
            if abs(patch.discrepancy) > 1e-6:
                self.logger.debug(
                    f"{patch.annotation.image_id}: map mass {patch.mass:.4f} vs {patch.head_count} heads"
                )
            records.append(AugmentedRecord(patch.annotation.image_id, ann.image_id, origin, pixels, patch, draw))
        return records

    @staticmethod
    def _stream(image_index: int, patch_index: int) -> int:
        return (int(image_index) << 20) | int(patch_index)

    def augment(self, items: Sequence[Tuple[ImageAnnotation, np.ndarray, DensityMap]]) -> List[AugmentedRecord]:
        """Augment a dataset of (annotation, image, map) triples, in input order."""
        self.logger.info(f"Starting augmentation of {len(items)} images...")
        records = []
        for index, (ann, image, density) in enumerate(items):
            records.extend(self.augment_image(index, ann, image, density))
        self.logger.info(f"Augmentation completed: {len(records)} patches")
        return records
