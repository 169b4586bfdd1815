"""
Tests for Density Core Module
"""

import numpy as np
import pytest
from scipy.signal import convolve2d

from crowdmap.annotations import ImageAnnotation, Point2D
from crowdmap.density_core import (
    DensityMap,
    KernelSpec,
    KnnConfig,
    count_from_map,
    downscale_preserving_count,
    gen_fixed,
    gen_knn,
    impulse_map,
    knn_mean_distance,
    knn_mean_distances,
    knn_sigmas,
    render_pgm_pixels,
    splat_gaussian,
)
from crowdmap.exceptions import ValidationError


def gaussian_table(sigma, radius):
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    table = np.exp(-(offsets[:, None] ** 2 + offsets[None, :] ** 2) / (2 * sigma ** 2))
    return table / table.sum()


class TestImpulseMap:
    def test_empty(self):
        assert impulse_map([], (5, 5)).sum() == 0

    def test_single_impulse(self):
        grid = impulse_map([Point2D(2, 3)], (5, 5))
        assert grid[2, 3] == 1 and grid.sum() == 1

    def test_accumulates(self):
        assert impulse_map([Point2D(2, 3), Point2D(2, 3)], (5, 5))[2, 3] == 2

    def test_ties_round_to_smaller_index(self):
        grid = impulse_map([Point2D(2.5, 0.5)], (5, 5))
        assert grid[2, 0] == 1

    def test_outside_rejected(self):
        with pytest.raises(ValidationError):
            impulse_map([Point2D(5, 0)], (5, 5))


class TestSplatGaussian:
    def test_unit_mass(self):
        density = DensityMap.zeros((30, 40))
        before = density.values.sum()
        splat_gaussian(density, Point2D(12.3, 20.7), KernelSpec(2.0, 3.5))
        assert density.values.sum() - before == pytest.approx(1.0, abs=1e-9)

    def test_peak_value(self):
        density = splat_gaussian(DensityMap.zeros((101, 101)), Point2D(50, 50), KernelSpec.isotropic(1.0))
        assert density.values[50, 50] == pytest.approx(gaussian_table(1.0, 3)[3, 3], rel=1e-12)
        assert density.values[50, 50] == pytest.approx(0.1592, abs=1e-4)

    def test_matches_convolution_of_impulses(self):
        heads = [Point2D(10, 10), Point2D(14, 20), Point2D(25, 12)]
        ann = ImageAnnotation('conv', (40, 40), tuple(heads))
        expected = convolve2d(impulse_map(heads, ann.shape), gaussian_table(2.0, 6), mode='same')
        np.testing.assert_allclose(gen_fixed(ann, sigma=2.0).values, expected, atol=1e-12)

    def test_corner_is_renormalised(self):
        density = splat_gaussian(DensityMap.zeros((20, 20)), Point2D(0, 0), KernelSpec.isotropic(4.0))
        assert density.values.sum() == pytest.approx(1.0, abs=1e-9)

    def test_translation_equivariance(self):
        kernel = KernelSpec(1.5, 2.5)
        first = splat_gaussian(DensityMap.zeros((40, 40)), Point2D(15, 18), kernel).values
        second = splat_gaussian(DensityMap.zeros((40, 40)), Point2D(16, 18), kernel).values
        np.testing.assert_allclose(first[:-1], second[1:], atol=1e-12)

    def test_isotropic_window_is_symmetric(self):
        values = splat_gaussian(DensityMap.zeros((31, 31)), Point2D(15, 15), KernelSpec.isotropic(3.0)).values
        np.testing.assert_allclose(values, values.T, atol=1e-15)

    def test_outside_centre(self):
        with pytest.raises(ValidationError):
            splat_gaussian(DensityMap.zeros((5, 5)), Point2D(-0.1, 2), KernelSpec.isotropic(1.0))


class TestGenerators:
    def test_fixed_empty(self):
        assert count_from_map(gen_fixed(ImageAnnotation('e', (8, 8)))) == 0

    def test_fixed_counts(self, small_annotation):
        density = gen_fixed(small_annotation)
        assert count_from_map(density) == pytest.approx(5, abs=1e-6 * 5)
        assert density.values.min() >= 0

    @pytest.mark.parametrize('generator', [gen_fixed, gen_knn])
    def test_count_conservation(self, random_annotation, generator):
        density = generator(random_annotation)
        assert count_from_map(density) == pytest.approx(random_annotation.count, abs=1e-6 * random_annotation.count)
        assert density.values.min() >= 0

    def test_seven_heads(self):
        rng = np.random.default_rng(3)
        heads = tuple(Point2D(float(r), float(c)) for r, c in rng.uniform(0, 49, size=(7, 2)))
        assert count_from_map(gen_fixed(ImageAnnotation('seven', (50, 50), heads))) == pytest.approx(7, abs=1e-5)


class TestKnn:
    @pytest.fixture
    def collinear(self):
        return [Point2D(5, 0), Point2D(5, 2), Point2D(5, 4)]

    def test_mean_distance(self, collinear):
        assert knn_mean_distance(collinear, 1, 2) == pytest.approx(2.0)

    def test_k_clamped(self, collinear):
        assert knn_mean_distance(collinear, 0, 10) == pytest.approx(3.0)

    def test_no_neighbours(self):
        assert knn_mean_distance([Point2D(1, 1)], 0, 3) is None
        assert np.isnan(knn_mean_distances([Point2D(1, 1)], 3)[0])

    def test_index_out_of_range(self, collinear):
        with pytest.raises(IndexError):
            knn_mean_distance(collinear, 3, 2)

    def test_vectorised_matches_single(self, random_annotation):
        every = knn_mean_distances(random_annotation.heads, 3)
        for i in (0, 17, 119):
            assert every[i] == pytest.approx(knn_mean_distance(random_annotation.heads, i, 3))

    def test_sigma_from_beta(self, collinear):
        ann = ImageAnnotation('c', (10, 10), tuple(collinear))
        sigmas = knn_sigmas(ann, KnnConfig(k=2, beta=0.3))
        assert sigmas[1] == pytest.approx(0.6)

    def test_single_head_uses_fallback(self):
        ann = ImageAnnotation('one', (30, 30), (Point2D(14, 9),))
        np.testing.assert_allclose(gen_knn(ann, KnnConfig(fallback_sigma=2.5)).values,
                                   gen_fixed(ann, 2.5).values, atol=1e-15)

    def test_coincident_heads_floor(self):
        ann = ImageAnnotation('same', (20, 20), (Point2D(9, 9),) * 4)
        density = gen_knn(ann, KnnConfig(min_sigma=0.5))
        assert np.isfinite(density.values).all()
        assert count_from_map(density) == pytest.approx(4, abs=1e-9)
        assert knn_sigmas(ann, KnnConfig()) == pytest.approx([0.5] * 4)


class TestDownscale:
    def test_identity(self, small_annotation):
        density = gen_fixed(small_annotation)
        np.testing.assert_array_equal(downscale_preserving_count(density, 1).values, density.values)

    def test_block_sum(self):
        result = downscale_preserving_count(DensityMap(np.full((4, 4), 0.25)), 4)
        np.testing.assert_allclose(result.values, [[4.0]])

    def test_padding_recorded(self, small_annotation):
        result = downscale_preserving_count(gen_fixed(small_annotation), 4)
        assert result.shape == (10, 13)
        assert result.padding == (0, 2)
        assert count_from_map(result) == pytest.approx(count_from_map(gen_fixed(small_annotation)), abs=1e-9)

    def test_composition(self, random_annotation):
        density = gen_knn(random_annotation)
        twice = downscale_preserving_count(downscale_preserving_count(density, 2), 4)
        once = downscale_preserving_count(density, 8)
        np.testing.assert_allclose(twice.values, once.values, atol=1e-9)

    def test_invalid_factor(self):
        with pytest.raises(ValidationError):
            downscale_preserving_count(DensityMap.zeros((4, 4)), 0)


class TestRendering:
    def test_zero_map_is_black(self):
        assert render_pgm_pixels(DensityMap.zeros((3, 3))).max() == 0

    def test_peak_is_white(self, small_annotation):
        pixels = render_pgm_pixels(gen_fixed(small_annotation))
        assert pixels.dtype == np.uint8 and pixels.max() == 255


# the first ten instances run everywhere, the rest with the slow suite
CROWD_SEEDS = [pytest.param(seed, marks=pytest.mark.slow) if seed >= 10 else seed for seed in range(100)]


def brute_force_splat(shape, centre, kernel):
    """Full-image evaluation of one truncated Gaussian, renormalised over the image."""
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    dr, dc = rows - centre.row, cols - centre.col
    reach = kernel.truncation_radius_in_sigmas
    inside = (np.abs(dr) <= reach * kernel.sigma_row) & (np.abs(dc) <= reach * kernel.sigma_col)
    weights = np.exp(-dr ** 2 / (2 * kernel.sigma_row ** 2) - dc ** 2 / (2 * kernel.sigma_col ** 2)) * inside
    return weights / weights.sum()


class TestNarrowKernels:
    def test_sub_pixel_kernel_keeps_its_mass(self):
        density = splat_gaussian(DensityMap.zeros((5, 5)), Point2D(2.5, 2.5), KernelSpec.isotropic(0.1))
        assert density.values.sum() == pytest.approx(1.0, abs=1e-12)
        assert density.values[2, 2] == pytest.approx(1.0)

    @pytest.mark.parametrize('sigma', [1e-4, 0.01, 0.1, 0.15, 0.3])
    @pytest.mark.parametrize('centre', [(2.5, 2.5), (2.3, 1.7), (0.2, 4.9), (4.5, 0.0)])
    def test_unit_mass_for_any_width(self, sigma, centre):
        density = splat_gaussian(DensityMap.zeros((5, 5)), Point2D(*centre), KernelSpec.isotropic(sigma))
        assert density.values.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.isfinite(density.values).all()

    def test_underflowing_kernel_lands_on_nearest_pixel(self):
        density = splat_gaussian(DensityMap.zeros((5, 5)), Point2D(2.3, 1.7), KernelSpec.isotropic(1e-4))
        assert density.values[2, 2] == 1.0

    def test_fixed_with_small_sigma(self):
        ann = ImageAnnotation('narrow', (5, 5), (Point2D(2.5, 2.5), Point2D(4, 4)))
        assert count_from_map(gen_fixed(ann, sigma=0.1)) == pytest.approx(2.0, abs=1e-12)

    def test_knn_with_short_truncation(self):
        ann = ImageAnnotation('narrow', (10, 10), (Point2D(2.5, 2.5), Point2D(3.5, 3.5)))
        assert count_from_map(gen_knn(ann, KnnConfig(truncation=0.5))) == pytest.approx(2.0, abs=1e-12)


class TestCountConservationAtScale:
    @pytest.mark.parametrize('seed', CROWD_SEEDS)
    def test_fixed_and_knn(self, crowd_factory, seed):
        ann, _ = crowd_factory(seed)
        tolerance = 1e-6 * max(1, ann.count)
        for density in (gen_fixed(ann), gen_knn(ann)):
            assert abs(count_from_map(density) - ann.count) <= tolerance
            assert density.values.min() >= 0


class TestSplatOracles:
    @pytest.mark.parametrize('seed', range(10))
    def test_matches_full_image_evaluation(self, seed):
        rng = np.random.default_rng(100 + seed)
        shape = (64, 64)
        heads = [Point2D(float(r), float(c)) for r, c in rng.uniform(0, 63.999, size=(int(rng.integers(1, 30)), 2))]
        kernels = [KernelSpec(float(a), float(b), float(t))
                   for a, b, t in zip(rng.uniform(0.6, 5, len(heads)), rng.uniform(0.6, 5, len(heads)),
                                      rng.uniform(1.5, 4, len(heads)))]
        density = DensityMap.zeros(shape)
        expected = np.zeros(shape)
        for head, kernel in zip(heads, kernels):
            splat_gaussian(density, head, kernel)
            expected += brute_force_splat(shape, head, kernel)
        np.testing.assert_allclose(density.values, expected, rtol=0, atol=1e-9)

    @pytest.mark.parametrize('seed', range(10))
    def test_interior_heads_match_convolution(self, seed):
        rng = np.random.default_rng(200 + seed)
        heads = tuple(Point2D(float(r), float(c)) for r, c in rng.integers(6, 58, size=(int(rng.integers(1, 40)), 2)))
        ann = ImageAnnotation('conv', (64, 64), heads)
        expected = convolve2d(impulse_map(heads, ann.shape), gaussian_table(2.0, 6), mode='same')
        np.testing.assert_allclose(gen_fixed(ann, sigma=2.0).values, expected, rtol=0, atol=1e-9)
