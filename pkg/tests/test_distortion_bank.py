"""Tests for the six distortion operators."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage, signal

from relational_iqa.distortion_bank import (
    DEFAULT_CONSTANTS,
    DistortionDomainError,
    DistortionKind,
    OperatorConstants,
    apply_distortion,
    bad_pixels,
    checkerboard,
    distortion_magnitude,
    gaussian_blur,
    gaussian_kernel,
    haze,
    oversaturate,
    perlin_noise_distortion,
)
from relational_iqa.errors import ValidationError
from relational_iqa.imagecore import ImageBuffer, Rng
from relational_iqa.mask_engine import noise_field
from relational_iqa.triplet_synth import procedural_scene


class TestIdentity:
    """Every operator is the identity at alpha = 0."""

    @pytest.mark.parametrize("kind", list(DistortionKind))
    def test_zero_alpha(self, kind: DistortionKind, scene: ImageBuffer) -> None:
        out = apply_distortion(kind, scene, 0.0, Rng(1))
        np.testing.assert_array_equal(out.data, scene.data)

    @pytest.mark.parametrize("alpha", [-0.1, 1.2])
    def test_domain(self, alpha: float, scene: ImageBuffer) -> None:
        with pytest.raises(DistortionDomainError):
            apply_distortion(DistortionKind.GAUSSIAN_BLUR, scene, alpha, Rng(1))

    @pytest.mark.parametrize("kind", list(DistortionKind))
    def test_output_in_range(self, kind: DistortionKind, scene: ImageBuffer) -> None:
        out = apply_distortion(kind, scene, 1.0, Rng(2))
        assert out.data.shape == scene.data.shape
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0


class TestBlur:
    """Separable Gaussian blur."""

    def test_constant_image_unchanged(self, mid_gray: ImageBuffer) -> None:
        np.testing.assert_allclose(gaussian_blur(mid_gray, 0.7).data, mid_gray.data, atol=1e-12)

    def test_impulse_matches_dense_convolution(self) -> None:
        data = np.zeros((1, 33, 33))
        data[0, 16, 16] = 1.0
        out = gaussian_blur(ImageBuffer(data), 0.5)
        kernel = gaussian_kernel(2.0)
        dense = signal.convolve2d(data[0], np.outer(kernel, kernel), mode="same")
        assert np.max(np.abs(out.data[0] - dense)) < 1e-6


class TestAdditiveOperators:
    """Noise and checkerboard amplitudes."""

    def test_noise_bound(self, mid_gray: ImageBuffer) -> None:
        out = perlin_noise_distortion(mid_gray, 1.0, seed=4)
        assert np.max(np.abs(out.data - 0.5)) <= 0.25

    def test_checkerboard_lattice(self, mid_gray: ImageBuffer) -> None:
        out = checkerboard(mid_gray, 1.0, Rng(0), cell=1)
        assert out.data[0, 0, 0] == pytest.approx(0.65)
        assert out.data[0, 0, 1] == pytest.approx(0.35)
        assert out.data[0, 1, 1] == pytest.approx(0.65)

    def test_noise_matches_regenerated_field(self) -> None:
        """The distortion adds exactly 0.25 * alpha times the seeded field."""
        img = ImageBuffer(np.full((3, 64, 64), 0.5))
        out = perlin_noise_distortion(img, 0.6, seed=9)
        field = noise_field(64, 64, DEFAULT_CONSTANTS.noise_cell, 9)
        np.testing.assert_allclose(out.data, 0.5 + 0.25 * 0.6 * np.broadcast_to(field, (3, 64, 64)), atol=1e-12)

    @pytest.mark.parametrize("cell", [1, 2, 4])
    def test_checkerboard_has_zero_mean(self, cell: int) -> None:
        """On samples away from the clamp bounds the overlay does not shift the mean."""
        base = procedural_scene(64, 64, seed=12)
        img = ImageBuffer(0.2 + 0.6 * base.data)
        out = checkerboard(img, 1.0, Rng(0), cell=cell)
        assert abs(out.data.mean() - img.data.mean()) < 1e-3

    def test_drawn_cell_has_zero_mean(self) -> None:
        img = ImageBuffer(0.2 + 0.6 * procedural_scene(64, 64, seed=13).data)
        for seed in range(5):
            out = checkerboard(img, 0.7, Rng(seed))
            assert abs(out.data.mean() - img.data.mean()) < 1e-3


class TestBadPixels:
    """Dead and hot pixels."""

    def test_defect_count(self, scene: ImageBuffer) -> None:
        big = ImageBuffer(np.full((3, 100, 100), 0.5))
        out = bad_pixels(big, 1.0, Rng(3))
        changed = np.any(out.data != 0.5, axis=0)
        assert changed.sum() == 100
        assert set(np.unique(out.data[:, changed])) <= {0.0, 1.0}

    def test_larger_alpha_extends_defects(self) -> None:
        big = ImageBuffer(np.full((3, 50, 50), 0.5))
        small = np.any(bad_pixels(big, 0.4, Rng(6)).data != 0.5, axis=0)
        large = np.any(bad_pixels(big, 1.0, Rng(6)).data != 0.5, axis=0)
        assert np.all(large[small])

    def test_clusters_hold_two_or_three_pixels(self) -> None:
        """With clustering forced every defect grows, so isolated pixels only come from the density cap."""
        constants = OperatorConstants(defect_density=0.01, cluster_probability=1.0)
        img = ImageBuffer(np.full((3, 100, 100), 0.5))
        out = bad_pixels(img, 1.0, Rng(17), constants)
        changed = np.any(out.data != 0.5, axis=0)
        assert changed.sum() == 100
        labels, count = ndimage.label(changed)
        sizes = np.bincount(labels.ravel())[1:]
        assert count > 0
        assert np.sum(sizes == 1) <= 1

    def test_clusters_grow_along_a_strip(self) -> None:
        """In a one-row frame only horizontal neighbours exist, and clusters still reach two pixels."""
        constants = OperatorConstants(defect_density=0.05, cluster_probability=1.0)
        img = ImageBuffer(np.full((3, 1, 400), 0.5))
        out = bad_pixels(img, 1.0, Rng(2), constants)
        changed = np.any(out.data != 0.5, axis=0)
        assert changed.sum() == 20
        labels, _ = ndimage.label(changed)
        sizes = np.bincount(labels.ravel())[1:]
        assert np.sum(sizes == 1) <= 1


class TestColourOperators:
    """Haze and over-saturation closed forms."""

    def test_haze_black_pixel(self) -> None:
        out = haze(ImageBuffer(np.zeros((3, 1, 1))), 1.0)
        np.testing.assert_allclose(out.data, 0.72)

    def test_haze_fixed_point(self) -> None:
        out = haze(ImageBuffer(np.full((3, 1, 1), 0.9)), 1.0)
        np.testing.assert_allclose(out.data, 0.9)

    def test_saturation_substitution(self) -> None:
        img = ImageBuffer(np.array([0.5, 0.3, 0.1]).reshape(3, 1, 1))
        out = oversaturate(img, 0.5)
        np.testing.assert_allclose(out.data.ravel(), [0.7, 0.3, 0.0], atol=1e-12)

    def test_saturation_needs_rgb(self) -> None:
        with pytest.raises(ValidationError):
            oversaturate(ImageBuffer(np.zeros((1, 2, 2))), 0.5)


class TestMagnitude:
    """RMS distortion magnitude."""

    def test_identical(self, scene: ImageBuffer) -> None:
        assert distortion_magnitude(scene, scene) == 0.0

    def test_extremes(self) -> None:
        zeros = ImageBuffer(np.zeros((3, 4, 4)))
        ones = ImageBuffer(np.ones((3, 4, 4)))
        assert distortion_magnitude(zeros, ones) == 1.0

    def test_haze_on_mid_gray(self, mid_gray: ImageBuffer) -> None:
        assert distortion_magnitude(mid_gray, haze(mid_gray, 1.0)) == pytest.approx(0.32)

    @pytest.mark.parametrize("kind", list(DistortionKind))
    def test_non_decreasing_in_alpha(self, kind: DistortionKind) -> None:
        """Over the 0.1 ... 1.0 grid a stronger intensity never lowers the RMS change."""
        img = procedural_scene(64, 64, seed=5)
        grid = [round(0.1 * i, 1) for i in range(1, 11)]
        values = [distortion_magnitude(img, apply_distortion(kind, img, alpha, Rng(23))) for alpha in grid]
        assert values[0] > 0.0
        assert all(later >= earlier for earlier, later in zip(values, values[1:]))
