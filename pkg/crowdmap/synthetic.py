"""
Synthetic dot datasets: grayscale images of bright blobs with exact head annotations.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from .annotations import ImageAnnotation, Point2D, write_annotations
from .density_core import DensityMap, gen_fixed
from .msnn import normalize_image
from .utils.helpers import save_dmap, save_pgm, to_uint8
from .utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class DotDatasetSpec:
    count: int = 200
    size: int = 64
    min_people: int = 5
    max_people: int = 25
    dot_sigma: float = 1.5
    dot_peak: float = 200.0
    background: float = 20.0
    seed: int = 0
    prefix: str = 'synth'


def render_dots(heads: List[Point2D], shape: Tuple[int, int], spec: DotDatasetSpec) -> np.ndarray:
    """Dark background plus one Gaussian blob per head, clipped to 0-255."""
    rows, cols = shape
    grid_r, grid_c = np.mgrid[0:rows, 0:cols].astype(np.float64)
    image = np.full(shape, spec.background, dtype=np.float64)
    for head in heads:
        image += spec.dot_peak * np.exp(-((grid_r - head.row) ** 2 + (grid_c - head.col) ** 2)
                                        / (2.0 * spec.dot_sigma ** 2))
    return np.clip(image, 0.0, 255.0)


def make_dot_dataset(spec: DotDatasetSpec) -> List[Tuple[ImageAnnotation, np.ndarray]]:
    """
    `spec.count` images with a uniform number of people in [min_people, max_people],
    positions uniform over the image, reproducible from `spec.seed`.
    """
    rng = np.random.default_rng(spec.seed)
    shape = (spec.size, spec.size)
    items = []
    for index in range(spec.count):
        people = int(rng.integers(spec.min_people, spec.max_people + 1))
        coords = rng.uniform(0.0, spec.size - 1, size=(people, 2))
        heads = [Point2D(float(r), float(c)) for r, c in coords]
        annotation = ImageAnnotation(f"{spec.prefix}_{index:04d}", shape, tuple(heads))
        items.append((annotation, to_uint8(render_dots(heads, shape, spec))))
    return items


def write_dot_dataset(out_dir: Union[str, Path], spec: DotDatasetSpec,
                      map_sigma: float = 0.0) -> List[ImageAnnotation]:
    """
    Write `annotations.json`, `images/<id>.pgm` and, when `map_sigma` > 0,
    fixed-kernel maps `maps/<id>.dmap`.
    """
    out_dir = Path(out_dir)
    items = make_dot_dataset(spec)
    for annotation, pixels in items:
        save_pgm(out_dir / 'images' / f"{annotation.image_id}.pgm", pixels)
        if map_sigma > 0:
            save_dmap(out_dir / 'maps' / f"{annotation.image_id}.dmap", gen_fixed(annotation, map_sigma).values)
    annotations = [annotation for annotation, _ in items]
    write_annotations(out_dir / 'annotations.json', annotations)
    logger.info(f"Wrote {len(items)} synthetic images to {out_dir}")
    return annotations


def dataset_samples(items: List[Tuple[ImageAnnotation, np.ndarray]],
                    sigma: float) -> List[Tuple[np.ndarray, DensityMap]]:
    """(normalised image, fixed-kernel map) training pairs."""
    return [(normalize_image(pixels), gen_fixed(annotation, sigma)) for annotation, pixels in items]
