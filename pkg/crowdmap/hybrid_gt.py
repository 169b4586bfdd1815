"""
crowdmap - Hybrid (face-assisted) Ground Truth Module
Per-person box sizes interpolated from sparse face detections, crowdedness from
overlap counting, anisotropic Gaussian density maps.
"""

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .annotations import BBox, DetectionSet, ImageAnnotation, Point2D
from .density_core import DensityMap, KernelSpec, gen_fixed, splat_gaussian
from .exceptions import ImageMismatchError, NoDetectionsError, ValidationError
from .utils.logger import get_logger

logger = get_logger(__name__)

OVERLAP_AGAINST = ('regions', 'detections')

# below this many regions the pairwise scan beats building the grid
GRID_MIN_REGIONS = 64


@dataclass(frozen=True)
class FaceGtConfig:
    t_overlaps: int = 3
    crowded_sigma: float = 4.0
    sigma_scale: float = 1.0
    distance_epsilon: float = 1e-6
    overlap_against: str = 'regions'
    truncation: float = 3.0

    def __post_init__(self):
        if int(self.t_overlaps) != self.t_overlaps or self.t_overlaps < 0:
            raise ValidationError(f"t_overlaps must be a nonnegative integer, got {self.t_overlaps}")
        if not (self.crowded_sigma > 0 and self.sigma_scale > 0 and self.distance_epsilon > 0):
            raise ValidationError("crowded_sigma, sigma_scale and distance_epsilon must be positive")
        if self.overlap_against not in OVERLAP_AGAINST:
            raise ValidationError(f"overlap_against must be one of {OVERLAP_AGAINST}, got {self.overlap_against!r}")


@dataclass(frozen=True)
class PersonBox:
    person_index: int
    box: BBox
    crowded: bool


def overlap_weight(x: Point2D, c: Point2D, eps: float) -> float:
    """Inverse distance weight, 1 / max(|x - c|, eps)."""
    return 1.0 / max(x.distance(c), eps)


def bb_weight(x: Point2D, c: Point2D, eps: float) -> float:
    """Inverse tenth-power distance weight, 1 / max(|x - c|, eps)**10."""
    return 1.0 / max(x.distance(c), eps) ** 10


def _detection_arrays(detections: DetectionSet) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    centers = np.array([[b.center.row, b.center.col] for b in detections.boxes], dtype=np.float64)
    heights = np.array([b.height for b in detections.boxes], dtype=np.float64)
    widths = np.array([b.width for b in detections.boxes], dtype=np.float64)
    return centers, heights, widths


def _weighted_size(x: Point2D, detections: DetectionSet, eps: float, power: int) -> Tuple[float, float]:
    if len(detections) == 0:
        raise NoDetectionsError(f"no detections for image '{detections.image_id}'")
    centers, heights, widths = _detection_arrays(detections)
    distances = np.maximum(np.hypot(centers[:, 0] - x.row, centers[:, 1] - x.col), eps)
    # scale by the nearest distance so tenth powers neither overflow nor underflow
    weights = (distances.min() / distances) ** power
    total = weights.sum()
    return float(weights @ heights / total), float(weights @ widths / total)


def overlap_region(x_i: Point2D, detections: DetectionSet, eps: float = 1e-6) -> BBox:
    """
    Overlap region r_i: a box centred at x_i whose height and width are the
    inverse-distance weighted means of all detection heights and widths.

    Raises:
        NoDetectionsError: empty detection set
    """
    height, width = _weighted_size(x_i, detections, eps, power=1)
    return BBox(x_i, height, width)


def interpolate_box(x_i: Point2D, detections: DetectionSet, eps: float = 1e-6) -> BBox:
    """
    Interpolated person box d_i: like `overlap_region` but weighted by inverse
    tenth-power distance, so far detections barely count.

    Raises:
        NoDetectionsError: empty detection set
    """
    height, width = _weighted_size(x_i, detections, eps, power=10)
    return BBox(x_i, height, width)


def boxes_intersect(a: BBox, b: BBox) -> bool:
    """True when two boxes share positive area; touching edges do not count."""
    return (min(a.bottom, b.bottom) - max(a.top, b.top) > 0
            and min(a.right, b.right) - max(a.left, b.left) > 0)


def count_overlaps_bruteforce(regions: Sequence[BBox]) -> np.ndarray:
    """Pairwise O(P^2) overlap count for every region."""
    counts = np.zeros(len(regions), dtype=np.int64)
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            if boxes_intersect(regions[i], regions[j]):
                counts[i] += 1
                counts[j] += 1
    return counts


class RegionGrid:
    """
    Uniform bucket grid over boxes; the cell side is the median box extent.
    """

    def __init__(self, boxes: Sequence[BBox]):
        self.boxes = list(boxes)
        extents = [max(b.height, b.width) for b in self.boxes]
        self.cell = float(np.median(extents)) if extents else 1.0
        self.buckets: Dict[Tuple[int, int], List[int]] = defaultdict(list)
        for index, box in enumerate(self.boxes):
            for key in self._cells(box):
                self.buckets[key].append(index)

    def _cells(self, box: BBox):
        r0, r1 = math.floor(box.top / self.cell), math.floor(box.bottom / self.cell)
        c0, c1 = math.floor(box.left / self.cell), math.floor(box.right / self.cell)
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                yield r, c

    def query(self, box: BBox) -> List[int]:
        """Indices of stored boxes intersecting `box` with positive area."""
        candidates = set()
        for key in self._cells(box):
            candidates.update(self.buckets.get(key, ()))
        return sorted(j for j in candidates if boxes_intersect(box, self.boxes[j]))


def count_all_overlaps(regions: Sequence[BBox]) -> np.ndarray:
    """Overlap count for every region against all the others."""
    if len(regions) < GRID_MIN_REGIONS:
        return count_overlaps_bruteforce(regions)
    grid = RegionGrid(regions)
    return np.array([len(grid.query(box)) - 1 for box in regions], dtype=np.int64)


def count_overlaps(regions: Sequence[BBox], i: int) -> int:
    """
    Number of regions j != i intersecting regions[i] with positive area.
    """
    if not 0 <= i < len(regions):
        raise IndexError(f"region index {i} out of range for {len(regions)} regions")
    if len(regions) < GRID_MIN_REGIONS:
        return sum(1 for j, other in enumerate(regions) if j != i and boxes_intersect(regions[i], other))
    return len([j for j in RegionGrid(regions).query(regions[i]) if j != i])


def count_detection_overlaps(regions: Sequence[BBox], detections: DetectionSet) -> np.ndarray:
    """Overlap count of every region against the raw detection boxes."""
    grid = RegionGrid(detections.boxes)
    return np.array([len(grid.query(box)) for box in regions], dtype=np.int64)


def _check_same_image(ann: ImageAnnotation, detections: DetectionSet) -> None:
    if ann.image_id != detections.image_id:
        raise ImageMismatchError(
            f"annotation is for '{ann.image_id}' but detections are for '{detections.image_id}'"
        )


def person_boxes(ann: ImageAnnotation, detections: DetectionSet,
                 cfg: FaceGtConfig) -> List[PersonBox]:
    """
    Decide every person's box and crowdedness.

    Crowded persons (more than `t_overlaps` overlapping regions) and every person of
    an image without detections get a square box of side `crowded_sigma`.
    """
    _check_same_image(ann, detections)
    crowded_size = cfg.crowded_sigma
    if len(detections) == 0:
        return [PersonBox(i, BBox(head, crowded_size, crowded_size), True) for i, head in enumerate(ann.heads)]

    regions = [overlap_region(head, detections, cfg.distance_epsilon) for head in ann.heads]
    if cfg.overlap_against == 'regions':
        overlaps = count_all_overlaps(regions)
    else:
        overlaps = count_detection_overlaps(regions, detections)

    boxes = []
    for i, head in enumerate(ann.heads):
        if overlaps[i] > cfg.t_overlaps:
            boxes.append(PersonBox(i, BBox(head, crowded_size, crowded_size), True))
        else:
            boxes.append(PersonBox(i, interpolate_box(head, detections, cfg.distance_epsilon), False))
    return boxes


def gen_face(ann: ImageAnnotation, detections: DetectionSet,
             cfg: FaceGtConfig = FaceGtConfig()) -> Tuple[DensityMap, List[PersonBox]]:
    """
    Hybrid ground truth.

    Crowded persons get an isotropic Gaussian of width `crowded_sigma`; the others an
    anisotropic one with sigma_row = sigma_scale * height and sigma_col = sigma_scale
    * width of their interpolated box. Without detections this is exactly
    `gen_fixed(ann, crowded_sigma)`.

    Returns:
        (density map, per-person boxes)

    Raises:
        ImageMismatchError: annotation and detections name different images
    """
    boxes = person_boxes(ann, detections, cfg)
    if len(detections) == 0:
        logger.debug(f"'{ann.image_id}': no detections, falling back to fixed sigma {cfg.crowded_sigma}")
        return gen_fixed(ann, cfg.crowded_sigma, cfg.truncation), boxes

    crowded_kernel = KernelSpec.isotropic(cfg.crowded_sigma, cfg.truncation)
    density = DensityMap.zeros(ann.shape)
    for person in boxes:
        if person.crowded:
            kernel = crowded_kernel
        else:
            kernel = KernelSpec(cfg.sigma_scale * person.box.height,
                                cfg.sigma_scale * person.box.width, cfg.truncation)
        splat_gaussian(density, ann.heads[person.person_index], kernel)
    crowded = sum(p.crowded for p in boxes)
    logger.debug(f"'{ann.image_id}': {crowded}/{len(boxes)} persons in crowded regions")
    return density, boxes
