"""
Tests for Augmentation Module
"""

import numpy as np
import pytest

from crowdmap.annotations import ImageAnnotation, Point2D
from crowdmap.augment import (
    DatasetAugmenter,
    NoiseSpec,
    PatchSpec,
    apply_noise,
    cut_patch,
    slide_patches,
)
from crowdmap.density_core import count_from_map, gen_fixed
from crowdmap.exceptions import ShapeError, ValidationError


def brute_force_origins(shape, window, stride):
    rows = [r for r in range(0, shape[0]) if r % stride == 0 and r + window <= shape[0]]
    cols = [c for c in range(0, shape[1]) if c % stride == 0 and c + window <= shape[1]]
    return [(r, c) for r in rows for c in cols]


class TestSlidePatches:
    def test_nine_origins(self):
        origins = slide_patches((396, 396), PatchSpec(256, 70))
        assert len(origins) == 9
        assert origins[:3] == [(0, 0), (0, 70), (0, 140)]

    def test_exact_fit(self):
        assert slide_patches((256, 256), PatchSpec()) == [(0, 0)]

    def test_too_small(self):
        assert slide_patches((200, 300), PatchSpec()) == []

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            shape = tuple(int(v) for v in rng.integers(1, 600, size=2))
            window, stride = int(rng.integers(1, 300)), int(rng.integers(1, 150))
            assert slide_patches(shape, PatchSpec(window, stride)) == brute_force_origins(shape, window, stride)

    def test_invalid_spec(self):
        with pytest.raises(ValidationError):
            PatchSpec(0, 10)
        with pytest.raises(ValidationError):
            PatchSpec(10, -1)


class TestCutPatch:
    @pytest.fixture
    def annotated(self):
        ann = ImageAnnotation('img', (64, 64), (Point2D(5, 5), Point2D(31.5, 32), Point2D(50, 10), Point2D(32, 60)))
        return ann, gen_fixed(ann, 2.0)

    def test_whole_image(self, annotated):
        ann, density = annotated
        patch = cut_patch(ann, density, (0, 0), 64)
        assert patch.annotation.heads == ann.heads
        np.testing.assert_array_equal(patch.density.values, density.values)

    def test_rebased_heads(self, annotated):
        ann, density = annotated
        patch = cut_patch(ann, density, (32, 0), 32)
        assert patch.annotation.heads == (Point2D(18, 10),)
        assert patch.annotation.image_id == 'img_r32_c0'

    def test_disjoint_tiling_conserves_mass(self, annotated):
        ann, density = annotated
        patches = [cut_patch(ann, density, origin, 32) for origin in slide_patches(ann.shape, PatchSpec(32, 32))]
        assert sum(p.mass for p in patches) == pytest.approx(count_from_map(density), abs=1e-9)
        assert sum(p.head_count for p in patches) == ann.count

    def test_straddling_head_reports_discrepancy(self, annotated):
        ann, density = annotated
        patch = cut_patch(ann, density, (0, 0), 32)
        assert patch.head_count == 1
        assert patch.discrepancy > 0

    def test_empty_region(self):
        ann = ImageAnnotation('img', (100, 100), (Point2D(90, 90),))
        patch = cut_patch(ann, gen_fixed(ann, 1.0), (0, 0), 50)
        assert patch.head_count == 0 and patch.mass == 0

    def test_origin_out_of_range(self, annotated):
        ann, density = annotated
        with pytest.raises(ValidationError):
            cut_patch(ann, density, (40, 0), 32)


class TestNoise:
    @pytest.fixture
    def gray(self):
        return np.full((16, 16), 128.0)

    def test_identity(self):
        image = np.random.default_rng(1).uniform(0, 255, size=(12, 12))
        spec = NoiseSpec(0.0, (0.0, 0.0), (1.0, 1.0), seed=4)
        out, _ = apply_noise(image, spec)
        np.testing.assert_array_equal(out, image)

    def test_brightness_shift(self, gray):
        out, draw = apply_noise(gray, NoiseSpec(0.0, (10.0, 10.0), (1.0, 1.0)))
        np.testing.assert_array_equal(out, gray + 10)
        assert draw.brightness == 10.0

    def test_deterministic(self, gray):
        spec = NoiseSpec(seed=123)
        first, _ = apply_noise(gray, spec, index=3)
        second, _ = apply_noise(gray, spec, index=3)
        assert first.tobytes() == second.tobytes()
        other, _ = apply_noise(gray, spec, index=4)
        assert not np.array_equal(first, other)

    def test_clamped(self):
        out, _ = apply_noise(np.full((8, 8), 250.0), NoiseSpec(0.0, (20.0, 20.0), (1.0, 1.0)))
        assert out.max() == 255.0

    def test_invalid_contrast(self):
        with pytest.raises(ValidationError):
            NoiseSpec(contrast_factor_range=(0.0, 1.0))


class TestDatasetAugmenter:
    @pytest.fixture
    def dataset(self):
        rng = np.random.default_rng(8)
        items = []
        for index in range(2):
            heads = tuple(Point2D(float(r), float(c)) for r, c in rng.uniform(0, 99, size=(10, 2)))
            ann = ImageAnnotation(f'img{index}', (100, 100), heads)
            items.append((ann, rng.uniform(0, 255, size=(100, 100)), gen_fixed(ann, 2.0)))
        return items

    def test_reproducible(self, dataset):
        spec = PatchSpec(64, 18)
        first = DatasetAugmenter(spec, NoiseSpec(seed=5)).augment(dataset)
        second = DatasetAugmenter(spec, NoiseSpec(seed=5)).augment(dataset)
        assert [r.provenance() for r in first] == [r.provenance() for r in second]
        for a, b in zip(first, second):
            assert a.image.tobytes() == b.image.tobytes()

    def test_maps_untouched_by_noise(self, dataset):
        spec = PatchSpec(64, 18)
        clean = DatasetAugmenter(spec).augment(dataset)
        noisy = DatasetAugmenter(spec, NoiseSpec(seed=1)).augment(dataset)
        assert len(clean) == len(noisy) == 2 * 9
        for a, b in zip(clean, noisy):
            np.testing.assert_array_equal(a.patch.density.values, b.patch.density.values)

    def test_small_image_warns(self):
        ann = ImageAnnotation('tiny', (10, 10))
        augmenter = DatasetAugmenter(PatchSpec(32, 8))
        assert augmenter.augment([(ann, np.zeros((10, 10)), gen_fixed(ann))]) == []
        assert augmenter.warnings and 'tiny' in augmenter.warnings[0]

    def test_shape_mismatch(self):
        ann = ImageAnnotation('img', (10, 10))
        with pytest.raises(ShapeError):
            DatasetAugmenter(PatchSpec(4, 4)).augment_image(0, ann, np.zeros((8, 8)), gen_fixed(ann))
