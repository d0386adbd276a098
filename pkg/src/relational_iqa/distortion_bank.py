"""The six intensity-parameterized distortion operators.

Every operator maps (image, alpha) to an image of the same shape, returns its
input unchanged at alpha = 0, clamps to [0, 1], and gets monotonically more
severe as alpha grows. Operators act on the full frame; regional restriction
is done by mask compositing in ``triplet_synth``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .imagecore import ImageBuffer, Rng
from .mask_engine import noise_field


class DistortionKind(IntEnum):
    """Distortion types; the integer id is the DistortionMap channel."""

    GAUSSIAN_BLUR = 0
    PERLIN_NOISE = 1
    CHECKERBOARD = 2
    BAD_PIXELS = 3
    HAZE = 4
    OVER_SATURATION = 5


N_KINDS = len(DistortionKind)


class DistortionDomainError(ValidationError):
    """Raised when an intensity falls outside [0, 1]."""


@dataclass(frozen=True)
class OperatorConstants:
    """Fixed parameterization of the operator bank."""

    sigma_max: float = 4.0
    noise_amplitude: float = 0.25
    noise_cell: float = 8.0
    checker_amplitude: float = 0.15
    checker_cells: tuple[int, ...] = (1, 2, 4)
    defect_density: float = 0.01
    cluster_probability: float = 0.3
    haze_max: float = 0.8
    haze_veil: float = 0.9
    saturation_gain: float = 2.0

    def __post_init__(self) -> None:
        if self.sigma_max <= 0 or self.noise_amplitude < 0 or self.checker_amplitude < 0:
            raise ValidationError("Operator amplitudes must be non-negative and sigma_max positive.")
        if self.noise_cell < 2:
            raise ValidationError(f"noise_cell must be >= 2, got {self.noise_cell}.")
        if not self.checker_cells or any(c < 1 for c in self.checker_cells):
            raise ValidationError("checker_cells must be a non-empty list of positive integers.")
        for name in ("defect_density", "cluster_probability", "haze_max", "haze_veil"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}.")
        if self.saturation_gain < 0:
            raise ValidationError(f"saturation_gain must be non-negative, got {self.saturation_gain}.")


DEFAULT_CONSTANTS = OperatorConstants()


def _clamped(data: np.ndarray) -> ImageBuffer:
    return ImageBuffer(np.clip(data, 0.0, 1.0))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian with radius ceil(3 sigma)."""
    radius = max(1, math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(img: ImageBuffer, alpha: float, constants: OperatorConstants = DEFAULT_CONSTANTS) -> ImageBuffer:
    if alpha == 0:
        return img
    kernel = gaussian_kernel(alpha * constants.sigma_max)
    out = ndimage.correlate1d(img.data, kernel, axis=1, mode="mirror")
    out = ndimage.correlate1d(out, kernel, axis=2, mode="mirror")
    return _clamped(out)


def perlin_noise_distortion(
    img: ImageBuffer, alpha: float, seed: int, constants: OperatorConstants = DEFAULT_CONSTANTS
) -> ImageBuffer:
    if alpha == 0:
        return img
    noise = noise_field(img.height, img.width, constants.noise_cell, seed)
    return _clamped(img.data + constants.noise_amplitude * alpha * noise[None, :, :])


def checker_pattern(height: int, width: int, cell: int) -> np.ndarray:
    """+1 where (row // cell + col // cell) is even, else -1."""
    rows = np.arange(height)[:, None] // cell
    cols = np.arange(width)[None, :] // cell
    return np.where((rows + cols) % 2 == 0, 1.0, -1.0)


def checkerboard(
    img: ImageBuffer,
    alpha: float,
    rng: Rng,
    constants: OperatorConstants = DEFAULT_CONSTANTS,
    cell: int | None = None,
) -> ImageBuffer:
    if alpha == 0:
        return img
    if cell is None:
        cell = rng.choice(constants.checker_cells)
    pattern = checker_pattern(img.height, img.width, cell)
    return _clamped(img.data + constants.checker_amplitude * alpha * pattern[None, :, :])


_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def bad_pixels(img: ImageBuffer, alpha: float, rng: Rng, constants: OperatorConstants = DEFAULT_CONSTANTS) -> ImageBuffer:
    """Dead (0) or hot (1) pixels; clusters count toward the density.

    Sites are drawn from one sequential stream and never revisit a defective
    pixel, so a larger alpha extends the defect set of a smaller one.
    """
    if alpha == 0:
        return img
    height, width = img.spatial_shape
    target = round(alpha * constants.defect_density * height * width)
    out = np.array(img.data)
    defective = np.zeros((height, width), dtype=bool)
    placed = 0
    while placed < target:
        row = rng.integers(0, height)
        col = rng.integers(0, width)
        if defective[row, col]:
            continue
        value = 1.0 if rng.bernoulli(0.5) else 0.0
        sites = [(row, col)]
        if rng.bernoulli(constants.cluster_probability):
            for _ in range(rng.integers(1, 3)):
                candidates = sorted(
                    {
                        (r + dr, c + dc)
                        for r, c in sites
                        for dr, dc in _NEIGHBOURS
                        if 0 <= r + dr < height and 0 <= c + dc < width
                    }
                    - set(sites)
                )
                candidates = [site for site in candidates if not defective[site]]
                if not candidates:
                    break
                sites.append(rng.choice(candidates))
        for r, c in sites:
            if placed >= target or defective[r, c]:
                continue
            defective[r, c] = True
            out[:, r, c] = value
            placed += 1
    return ImageBuffer(out)


def haze(img: ImageBuffer, alpha: float, constants: OperatorConstants = DEFAULT_CONSTANTS) -> ImageBuffer:
    if alpha == 0:
        return img
    h = alpha * constants.haze_max
    return _clamped((1.0 - h) * img.data + h * constants.haze_veil)


def oversaturate(img: ImageBuffer, alpha: float, constants: OperatorConstants = DEFAULT_CONSTANTS) -> ImageBuffer:
    if alpha == 0:
        return img
    if img.channels != 3:
        raise ValidationError(f"Over-saturation needs an RGB image, got {img.channels} channels.")
    gray = img.data.mean(axis=0, keepdims=True)
    factor = 1.0 + constants.saturation_gain * alpha
    return _clamped(gray + factor * (img.data - gray))


def apply_distortion(
    kind: DistortionKind | int,
    img: ImageBuffer,
    alpha: float,
    rng: Rng,
    constants: OperatorConstants = DEFAULT_CONSTANTS,
) -> ImageBuffer:
    """Dispatch to the operator for ``kind``; alpha must lie in [0, 1]."""
    if not 0.0 <= alpha <= 1.0:
        raise DistortionDomainError(f"Intensity {alpha} is outside [0, 1].")
    kind = DistortionKind(kind)
    if alpha == 0:
        return img
    if kind is DistortionKind.GAUSSIAN_BLUR:
        return gaussian_blur(img, alpha, constants)
    if kind is DistortionKind.PERLIN_NOISE:
        return perlin_noise_distortion(img, alpha, rng.next_u64(), constants)
    if kind is DistortionKind.CHECKERBOARD:
        return checkerboard(img, alpha, rng, constants)
    if kind is DistortionKind.BAD_PIXELS:
        return bad_pixels(img, alpha, rng, constants)
    if kind is DistortionKind.HAZE:
        return haze(img, alpha, constants)
    return oversaturate(img, alpha, constants)


def distortion_magnitude(original: ImageBuffer, distorted: ImageBuffer) -> float:
    """Root-mean-square difference over all samples."""
    if original.data.shape != distorted.data.shape:
        raise ValidationError(
            f"Cannot compare images of shape {original.data.shape} and {distorted.data.shape}."
        )
    diff = distorted.data - original.data
    return float(np.sqrt(np.mean(diff * diff)))
