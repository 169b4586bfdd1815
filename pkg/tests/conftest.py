"""
Shared fixtures for crowdmap tests.
"""

import os
import sys

import numpy as np
import pytest

# Add the repository root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from crowdmap.annotations import BBox, DetectionSet, ImageAnnotation, Point2D


@pytest.fixture
def small_annotation():
    """Five heads on a 40x50 image, one of them near a corner."""
    heads = [Point2D(10, 10), Point2D(12, 14), Point2D(20.5, 30.25), Point2D(35, 45), Point2D(1, 1)]
    return ImageAnnotation('img_small', (40, 50), tuple(heads))


@pytest.fixture
def random_annotation():
    rng = np.random.default_rng(7)
    coords = rng.uniform(0, 63.999, size=(120, 2))
    return ImageAnnotation('img_random', (64, 64), tuple(Point2D(float(r), float(c)) for r, c in coords))


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    monkeypatch.setenv('CROWDMAP_THREADS', '1')


def make_crowd(seed, max_side=512, max_people=200, detection_rate=0.1):
    """
    A random annotation of up to `max_side` pixels per side and 0..`max_people` heads,
    plus sparse detections around some of the heads (down to sub-pixel boxes).
    """

    rng = np.random.default_rng(seed)
    rows, cols = (int(v) for v in rng.integers(16, max_side + 1, size=2))
    people = int(rng.integers(0, max_people + 1))
    coords = rng.uniform(0.0, 1.0, size=(people, 2)) * [rows - 1e-6, cols - 1e-6]
    heads = tuple(Point2D(float(r), float(c)) for r, c in coords)
    image_id = f'crowd_{seed}'
    picked = [h for h in heads if rng.uniform() < detection_rate]
    sizes = rng.uniform(0.1, 24.0, size=(len(picked), 2))
    boxes = tuple(BBox(h, float(a), float(b)) for h, (a, b) in zip(picked, sizes))
    return ImageAnnotation(image_id, (rows, cols), heads), DetectionSet(image_id, boxes)


@pytest.fixture
def crowd_factory():
    return make_crowd
