"""
crowdmap - Rendering Module
Grayscale exports of density maps and box overlays.
"""

from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle
import numpy as np
from PIL import Image, ImageDraw

from .annotations import BBox
from .density_core import DensityMap, render_pgm_pixels
from .utils.helpers import atomic_write_bytes, encode_pgm, save_pgm

DETECTED_COLOR = 'cyan'
INTERPOLATED_COLOR = 'magenta'
CROWDED_COLOR = 'yellow'


def render_map(density: DensityMap, path: Union[str, Path]) -> Path:
    """Write a map as an 8-bit PGM, its maximum scaled to 255."""
    return save_pgm(path, render_pgm_pixels(density))


def _outline(draw: ImageDraw.ImageDraw, box: BBox, shape: Tuple[int, int], fill: int) -> None:
    rows, cols = shape
    top = max(int(round(box.top)), 0)
    left = max(int(round(box.left)), 0)
    bottom = min(int(round(box.bottom)), rows - 1)
    right = min(int(round(box.right)), cols - 1)
    if bottom >= top and right >= left:
        draw.rectangle([left, top, right, bottom], outline=fill)


def render_box_overlay(background: np.ndarray, boxes: Sequence[BBox], path: Union[str, Path],
                       detections: Sequence[BBox] = ()) -> Path:
    """
    Grayscale overlay: interpolated boxes in white, detections in mid-gray, clipped
    to the image.
    """
    pixels = np.asarray(background, dtype=np.uint8)
    image = Image.fromarray(pixels.copy())
    draw = ImageDraw.Draw(image)
    for box in detections:
        _outline(draw, box, pixels.shape, 128)
    for box in boxes:
        _outline(draw, box, pixels.shape, 255)
    return atomic_write_bytes(path, encode_pgm(np.asarray(image)))


def render_color_overlay(density: DensityMap, path: Union[str, Path],
                         person_boxes: Sequence[Tuple[BBox, bool]] = (),
                         detections: Sequence[BBox] = (),
                         background: Optional[np.ndarray] = None, dpi: int = 100) -> Path:
    """
    PNG of a map (or the image under it) with detected boxes in cyan and
    interpolated person boxes in pink; crowded persons are drawn in yellow.
    """
    rows, cols = density.shape
    figure, axis = plt.subplots(figsize=(cols / dpi * 2, rows / dpi * 2), dpi=dpi)
    if background is not None:
        axis.imshow(background, cmap='gray', vmin=0, vmax=255)
        axis.imshow(density.values, cmap='jet', alpha=0.4)
    else:
        axis.imshow(density.values, cmap='jet')
    for box in detections:
        axis.add_patch(Rectangle((box.left - 0.5, box.top - 0.5), box.width, box.height,
                                 fill=False, edgecolor=DETECTED_COLOR, linewidth=1))
    for box, crowded in person_boxes:
        axis.add_patch(Rectangle((box.left - 0.5, box.top - 0.5), box.width, box.height, fill=False,
                                 edgecolor=CROWDED_COLOR if crowded else INTERPOLATED_COLOR, linewidth=1))
    axis.set_xlim(-0.5, cols - 0.5)
    axis.set_ylim(rows - 0.5, -0.5)
    axis.set_axis_off()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    figure.savefig(path, bbox_inches='tight', pad_inches=0)
    plt.close(figure)
    return path
