"""Tests for label maps, gradient noise and the mask pool."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from relational_iqa.imagecore import Rng
from relational_iqa.mask_engine import (
    MaskError,
    MaskSet,
    load_label_map,
    masks_from_provenance,
    partition_from_shapes,
    perlin2d,
    perlin_mask,
    rect_mask,
    sample_mask_pool,
)


def _save_labels(path: Path, labels: np.ndarray) -> Path:
    Image.fromarray(labels.astype(np.uint8)).save(path)
    return path


class TestLabelMaps:
    """One mask per distinct class id."""

    def test_uniform_map(self, tmp_path: Path) -> None:
        masks = load_label_map(_save_labels(tmp_path / "l.png", np.full((8, 8), 7)))
        assert masks.count == 1
        assert masks.masks.all()
        assert masks.sources == ("class:7",)

    def test_halves_are_complementary(self, tmp_path: Path) -> None:
        labels = np.zeros((8, 8))
        labels[:, 4:] = 1
        masks = load_label_map(_save_labels(tmp_path / "l.png", labels))
        assert masks.count == 2
        np.testing.assert_array_equal(masks.masks[0], ~masks.masks[1])

    def test_one_hot_against_pixel_scan(self, tmp_path: Path) -> None:
        labels = np.random.default_rng(1).choice([0, 3, 9], size=(16, 16))
        masks = load_label_map(_save_labels(tmp_path / "l.png", labels))
        assert masks.count == 3
        for k, cls in enumerate([0, 3, 9]):
            for r in range(16):
                for c in range(16):
                    assert masks.masks[k, r, c] == (labels[r, c] == cls)

    def test_provenance_path_is_absolute(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        """A relative label path is recorded resolved and still rebuilds elsewhere."""
        _save_labels(tmp_path / "l.png", np.full((8, 8), 2))
        monkeypatch.chdir(tmp_path)
        masks = load_label_map("l.png")
        recorded = Path(masks.provenance["path"])
        assert recorded.is_absolute()
        assert recorded == (tmp_path / "l.png").resolve()

        monkeypatch.chdir(tmp_path.parent)
        rebuilt = masks_from_provenance(masks.provenance, 8, 8)
        np.testing.assert_array_equal(rebuilt.masks, masks.masks)

    def test_overlapping_masks_rejected(self) -> None:
        with pytest.raises(MaskError):
            MaskSet(np.ones((2, 3, 3), dtype=bool), ("a", "b"))


class TestPerlin:
    """Gradient noise and threshold masks."""

    def test_zero_on_lattice(self) -> None:
        for x, y in [(0, 0), (3, -2), (17, 5)]:
            assert perlin2d(x, y, seed=11) == 0.0

    def test_deterministic_and_continuous(self) -> None:
        a = perlin2d(2.3, 4.7, seed=5)
        assert a == perlin2d(2.3, 4.7, seed=5)
        assert abs(perlin2d(2.3 + 1e-4, 4.7, seed=5) - a) < 1e-2

    def test_threshold_extremes(self) -> None:
        assert perlin_mask(32, 32, 8, -1.0, seed=3).all()
        assert not perlin_mask(32, 32, 8, 1.0, seed=3).any()

    def test_zero_threshold_coverage(self) -> None:
        coverage = perlin_mask(256, 256, 16, 0.0, seed=2024).mean()
        assert 0.3 <= coverage <= 0.7

    def test_rejects_small_cell(self) -> None:
        with pytest.raises(MaskError):
            perlin_mask(8, 8, 1, 0.0, seed=0)


class TestRectangles:
    """Axis-aligned rectangle masks."""

    def test_full_frame(self) -> None:
        raster = rect_mask(6, 5, Rng(0), top=0, left=0, rect_height=6, rect_width=5)
        assert raster.all()

    def test_single_pixel(self) -> None:
        raster = rect_mask(6, 5, Rng(0), top=0, left=0, rect_height=1, rect_width=1)
        assert raster.sum() == 1
        assert raster[0, 0]

    def test_out_of_frame_rejected(self) -> None:
        with pytest.raises(MaskError):
            rect_mask(6, 5, Rng(0), top=4, left=0, rect_height=3, rect_width=1)

    def test_area_fraction_bounds(self) -> None:
        """Sides in [0.1, 0.6] of a square frame bound the covered fraction."""
        rng = Rng(21)
        fractions = np.array([rect_mask(100, 100, rng).mean() for _ in range(1000)])
        assert fractions.min() >= 0.01
        assert fractions.max() <= 0.36


class TestMaskPool:
    """Semantic or random partitions."""

    def test_semantic_returned_when_random_disabled(self) -> None:
        semantic = MaskSet(np.ones((1, 8, 8), dtype=bool), ("class:0",))
        assert sample_mask_pool(semantic, 8, 8, Rng(1), p_random=0.0) is semantic

    def test_no_shapes_gives_background(self) -> None:
        masks = sample_mask_pool(None, 8, 8, Rng(1), p_random=1.0, n_shapes=0)
        assert masks.count == 1
        assert masks.sources == ("background",)
        assert masks.masks.all()

    def test_random_branch_frequency(self) -> None:
        semantic = MaskSet(np.ones((1, 4, 4), dtype=bool), ("class:0",))
        rng = Rng(77)
        draws = 10_000
        hits = sum(sample_mask_pool(semantic, 4, 4, rng, p_random=0.3) is not semantic for _ in range(draws))
        assert abs(hits / draws - 0.3) <= 0.015

    def test_random_partition_covers_frame(self) -> None:
        masks = sample_mask_pool(None, 32, 32, Rng(5), p_random=1.0)
        np.testing.assert_array_equal(masks.masks.sum(axis=0), 1)

    def test_earlier_shapes_win_overlaps(self) -> None:
        shapes = [
            {"type": "rect", "top": 0, "left": 0, "height": 4, "width": 4},
            {"type": "rect", "top": 2, "left": 2, "height": 4, "width": 4},
        ]
        masks = partition_from_shapes(shapes, 8, 8)
        assert masks.masks[0, 3, 3]
        assert not masks.masks[1, 3, 3]
        assert masks.sources == ("rect", "rect", "background")

    def test_provenance_rebuilds_masks(self) -> None:
        masks = sample_mask_pool(None, 16, 16, Rng(8), p_random=1.0)
        rebuilt = masks_from_provenance(masks.provenance, 16, 16)
        np.testing.assert_array_equal(rebuilt.masks, masks.masks)

    def test_semantic_size_mismatch(self) -> None:
        semantic = MaskSet(np.ones((1, 4, 4), dtype=bool), ("class:0",))
        with pytest.raises(MaskError):
            sample_mask_pool(semantic, 8, 8, Rng(0))
