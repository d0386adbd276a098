"""Tests for rasters, random streams and tensor/PNG I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from relational_iqa.errors import DimensionMismatchError, ValidationError
from relational_iqa.imagecore import (
    DTYPE_F64,
    BadMagicError,
    DistortionMap,
    ImageBuffer,
    ImageFormatError,
    Rng,
    TruncatedPayloadError,
    VersionMismatchError,
    decode_tensor,
    encode_tensor,
    gradient_magnitude,
    load_label_png,
    load_png,
    quantize_8bit,
    read_map,
    read_tensor,
    rng_derive,
    save_png,
    splitmix64,
    write_tensor,
)


class TestRasters:
    """Validation performed by ImageBuffer and DistortionMap."""

    def test_rejects_out_of_range_samples(self) -> None:
        with pytest.raises(ValidationError):
            ImageBuffer(np.full((1, 2, 2), 1.5))

    def test_rejects_non_finite_samples(self) -> None:
        data = np.zeros((1, 2, 2))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            ImageBuffer(data)

    def test_rejects_wrong_rank(self) -> None:
        with pytest.raises(DimensionMismatchError):
            ImageBuffer(np.zeros((4, 4)))

    def test_data_is_read_only(self) -> None:
        img = ImageBuffer(np.zeros((1, 2, 2)))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0

    def test_sparse_and_complement(self) -> None:
        data = np.zeros((6, 2, 2))
        data[4, 0, 0] = 0.3
        y = DistortionMap(data)
        assert y.is_sparse()
        comp = y.complement()
        assert comp.data[4, 0, 0] == pytest.approx(0.7)
        assert comp.data[0, 1, 1] == 1.0
        assert not comp.is_sparse()


class TestRandomStreams:
    """splitmix64 seeding and xoshiro256** streams."""

    def test_splitmix64_reference_value(self) -> None:
        assert splitmix64(0) == 0xE220A8397B1DCDAF

    def test_same_seed_same_stream(self) -> None:
        a = rng_derive(42, 3)
        b = rng_derive(42, 3)
        assert [a.next_u64() for _ in range(1000)] == [b.next_u64() for _ in range(1000)]

    def test_item_streams_differ(self) -> None:
        assert rng_derive(42, 0).next_u64() != rng_derive(42, 1).next_u64()

    def test_derive_uses_splitmix_of_xor(self) -> None:
        assert rng_derive(5, 9).next_u64() == Rng(splitmix64(5 ^ 9)).next_u64()

    def test_random_in_unit_interval(self) -> None:
        rng = Rng(1)
        draws = [rng.random() for _ in range(2000)]
        assert min(draws) >= 0.0
        assert max(draws) < 1.0
        assert abs(np.mean(draws) - 0.5) < 0.05

    def test_integers_range(self) -> None:
        rng = Rng(2)
        draws = {rng.integers(3, 6) for _ in range(200)}
        assert draws == {3, 4, 5}

    def test_integers_empty_range(self) -> None:
        with pytest.raises(ValidationError):
            Rng(0).integers(2, 2)

    def test_beta_mean(self) -> None:
        rng = Rng(3)
        draws = [rng.beta(2.0, 2.0) for _ in range(4000)]
        assert abs(np.mean(draws) - 0.5) < 0.02

    def test_spawn_is_deterministic(self) -> None:
        assert Rng(9).spawn().next_u64() == Rng(9).spawn().next_u64()


class TestPng:
    """8-bit PNG load/save."""

    def test_load_scales_bytes(self, tmp_path: Path) -> None:
        pixels = np.array([[0, 128, 255]], dtype=np.uint8)
        Image.fromarray(pixels).save(tmp_path / "g.png")
        img = load_png(tmp_path / "g.png")
        assert img.channels == 1
        np.testing.assert_allclose(img.data[0, 0], [0.0, 128 / 255, 1.0])

    def test_quantize_rounds_half_up(self) -> None:
        np.testing.assert_array_equal(quantize_8bit(np.array([1.0, 0.5, 0.0])), [255, 128, 0])

    def test_save_then_load_rgb(self, tmp_path: Path, scene: ImageBuffer) -> None:
        save_png(scene, tmp_path / "s.png")
        loaded = load_png(tmp_path / "s.png")
        assert loaded.channels == 3
        assert np.max(np.abs(loaded.data - scene.data)) <= 0.5 / 255 + 1e-12

    def test_as_rgb_repeats_gray(self, tmp_path: Path) -> None:
        Image.fromarray(np.full((3, 3), 10, dtype=np.uint8)).save(tmp_path / "g.png")
        assert load_png(tmp_path / "g.png", as_rgb=True).channels == 3

    def test_rejects_non_png(self, tmp_path: Path) -> None:
        Image.fromarray(np.zeros((3, 3), dtype=np.uint8)).save(tmp_path / "g.bmp", format="BMP")
        with pytest.raises(ImageFormatError):
            load_png(tmp_path / "g.bmp")

    def test_rejects_missing(self, tmp_path: Path) -> None:
        with pytest.raises(ImageFormatError):
            load_png(tmp_path / "missing.png")

    def test_cannot_save_six_channels(self, tmp_path: Path) -> None:
        with pytest.raises(ImageFormatError):
            save_png(ImageBuffer(np.zeros((6, 2, 2))), tmp_path / "x.png")

    def test_label_png_keeps_raw_ids(self, tmp_path: Path) -> None:
        Image.fromarray(np.array([[0, 3], [9, 3]], dtype=np.uint8)).save(tmp_path / "l.png")
        np.testing.assert_array_equal(load_label_png(tmp_path / "l.png"), [[0, 3], [9, 3]])


class TestTensors:
    """DQTF encoding."""

    def test_map_file_is_bit_identical(self, tmp_path: Path) -> None:
        data = np.random.default_rng(0).uniform(size=(6, 4, 4)).astype(np.float32)
        write_tensor(data, tmp_path / "y.dqtf")
        restored = read_map(tmp_path / "y.dqtf")
        assert restored.data.astype(np.float32).tobytes() == data.tobytes()

    def test_f64_keeps_precision(self, tmp_path: Path) -> None:
        data = np.array([1.0 / 3.0, np.pi])
        write_tensor(data, tmp_path / "w.dqtf", dtype=DTYPE_F64)
        assert read_tensor(tmp_path / "w.dqtf").tobytes() == data.tobytes()

    def test_bad_magic(self) -> None:
        blob = b"XXXX" + encode_tensor(np.zeros(2))[4:]
        with pytest.raises(BadMagicError):
            decode_tensor(blob)

    def test_version_mismatch(self) -> None:
        blob = bytearray(encode_tensor(np.zeros(2)))
        blob[4] = 9
        with pytest.raises(VersionMismatchError):
            decode_tensor(bytes(blob))

    def test_truncated_payload(self) -> None:
        with pytest.raises(TruncatedPayloadError):
            decode_tensor(encode_tensor(np.zeros((2, 2)))[:-1])


class TestGradientMagnitude:
    """Central-difference gradient."""

    def test_constant_plane_has_zero_gradient(self) -> None:
        assert np.all(gradient_magnitude(np.full((5, 5), 0.3)) == 0.0)

    def test_linear_ramp_interior(self) -> None:
        plane = np.tile(np.arange(6, dtype=np.float64), (4, 1))
        grad = gradient_magnitude(plane)
        np.testing.assert_allclose(grad[:, 1:-1], 1.0)
