"""Raster types, deterministic random streams and bit-exact file I/O.

Every other module builds on the types defined here:

* ``ImageBuffer`` - a C x H x W raster with samples in [0, 1].
* ``DistortionMap`` - an N x H x W map of per-type distortion intensities.
* ``Rng`` - xoshiro256** seeded through splitmix64, identical on every platform.
* DQTF tensor files and 8/16-bit PNG images.

Samples are display-referred sRGB-encoded values; no transfer function is
applied on load or save.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence, TypeVar

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DimensionMismatchError, ValidationError

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

TENSOR_MAGIC = b"DQTF"
TENSOR_VERSION = 1
DTYPE_F32 = 0
DTYPE_F64 = 1
_DTYPES: dict[int, str] = {DTYPE_F32: "<f4", DTYPE_F64: "<f8"}
_TENSOR_HEADER = struct.Struct("<4sIBB")
_TENSOR_DIM = struct.Struct("<Q")

T = TypeVar("T")


class ImageFormatError(ValidationError):
    """Raised when a PNG cannot be read or written."""


class TensorFormatError(ValidationError):
    """Raised when a DQTF file is malformed."""


class BadMagicError(TensorFormatError):
    """Raised when a DQTF file does not start with the DQTF magic."""


class VersionMismatchError(TensorFormatError):
    """Raised when a DQTF file was written with an unsupported version."""


class TruncatedPayloadError(TensorFormatError):
    """Raised when a DQTF header or payload is shorter than declared."""


# ---------------------------------------------------------------------------
# Random streams


def splitmix64_mix(z: int) -> int:
    """splitmix64 output finalizer applied to a 64-bit state value."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Reference splitmix64 generator, used to seed and derive streams."""

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return splitmix64_mix(self.state)


def splitmix64(seed: int) -> int:
    """First splitmix64 output for ``seed``."""
    return SplitMix64(seed).next()


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Rng:
    """xoshiro256** stream whose state is filled from splitmix64(seed).

    Instances are single-owner: hand each work item its own stream via
    :func:`rng_derive` or :meth:`spawn` instead of sharing one.
    """

    def __init__(self, seed: int) -> None:
        self.seed = seed & MASK64
        seeder = SplitMix64(self.seed)
        self._s = [seeder.next() for _ in range(4)]

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        span = high - low
        if span <= 0:
            raise ValidationError(f"Empty integer range [{low}, {high}).")
        return low + ((self.next_u64() * span) >> 64)

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def choice(self, options: Sequence[T]) -> T:
        if not options:
            raise ValidationError("Cannot choose from an empty sequence.")
        return options[self.integers(0, len(options))]

    def normal(self) -> float:
        """Standard normal draw (Box-Muller, cosine branch only)."""
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def gamma(self, shape: float) -> float:
        """Gamma(shape, 1) draw via Marsaglia-Tsang."""
        if shape <= 0:
            raise ValidationError(f"Gamma shape must be positive, got {shape}.")
        if shape < 1.0:
            boost = (1.0 - self.random()) ** (1.0 / shape)
            return self.gamma(shape + 1.0) * boost
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = (1.0 + c * x) ** 3
            if v <= 0.0:
                continue
            u = 1.0 - self.random()
            if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
                return d * v

    def beta(self, a: float, b: float) -> float:
        x = self.gamma(a)
        y = self.gamma(b)
        return x / (x + y)

    def spawn(self) -> "Rng":
        """Independent child stream seeded from the next draw."""
        return Rng(self.next_u64())

    def numpy_generator(self) -> np.random.Generator:
        """NumPy generator for bulk array draws, seeded from the next draw."""
        return np.random.Generator(np.random.PCG64(self.next_u64()))


def rng_derive(master_seed: int, item_index: int) -> Rng:
    """Stream for one work item: Rng(splitmix64(master_seed XOR item_index))."""
    return Rng(splitmix64((master_seed ^ item_index) & MASK64))


# ---------------------------------------------------------------------------
# Raster types


@dataclass(frozen=True, eq=False)
class _Raster:
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise DimensionMismatchError(
                f"{type(self).__name__} expects a 3-D array, got shape {arr.shape}."
            )
        if min(arr.shape) < 1:
            raise DimensionMismatchError(
                f"{type(self).__name__} has a degenerate shape {arr.shape}."
            )
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{type(self).__name__} contains non-finite samples.")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError(
                f"{type(self).__name__} samples must lie in [0, 1]; "
                f"got range [{arr.min():.6g}, {arr.max():.6g}]."
            )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    @property
    def width(self) -> int:
        return int(self.data.shape[2])

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.height, self.width


class ImageBuffer(_Raster):
    """C x H x W image, channel-major, samples in [0, 1]."""

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])


class DistortionMap(_Raster):
    """N x H x W map; channel j holds the intensity of distortion type j."""

    @property
    def n_types(self) -> int:
        return int(self.data.shape[0])

    def is_sparse(self) -> bool:
        """At most one non-zero channel per pixel."""
        return bool(np.all(np.count_nonzero(self.data, axis=0) <= 1))

    def complement(self) -> "DistortionMap":
        return DistortionMap(1.0 - self.data)


def require_same_spatial(*rasters: _Raster) -> None:
    shapes = {r.spatial_shape for r in rasters}
    if len(shapes) > 1:
        raise DimensionMismatchError(
            f"Spatial dimensions disagree: {sorted(shapes)}."
        )


# ---------------------------------------------------------------------------
# PNG


def _open_png(path: Path) -> Image.Image:
    if not path.exists():
        raise ImageFormatError(f"PNG file {path} does not exist.")
    try:
        image = Image.open(path)
        image.load()
    except OSError as exc:
        raise ImageFormatError(f"Unable to read {path}: {exc}") from exc
    if image.format != "PNG":
        raise ImageFormatError(f"{path} is a {image.format} file, expected PNG.")
    return image


def load_png(path: Path | str, as_rgb: bool = False) -> ImageBuffer:
    """Load an 8/16-bit RGB or grayscale PNG, scaled to [0, 1].

    16-bit grayscale keeps its full precision. Pillow decodes 16-bit RGB
    files to 8 bits per channel, so those load at 8-bit precision.
    """
    path = Path(path)
    with _open_png(path) as image:
        mode = image.mode
        if mode == "L":
            arr = np.asarray(image, dtype=np.float64)[None] / 255.0
        elif mode in {"I;16", "I;16B", "I;16L", "I"}:
            arr = np.asarray(image).astype(np.float64)[None] / 65535.0
        elif mode == "RGB":
            arr = np.asarray(image, dtype=np.float64).transpose(2, 0, 1) / 255.0
        else:
            raise ImageFormatError(
                f"Unsupported PNG colour type {mode!r} in {path}; "
                "expected RGB or grayscale."
            )
    if as_rgb and arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    return ImageBuffer(arr)


def load_label_png(path: Path | str) -> np.ndarray:
    """Raw integer pixel values of a single-channel PNG (no scaling)."""
    path = Path(path)
    with _open_png(path) as image:
        mode = image.mode
        if mode not in {"L", "I;16", "I;16B", "I;16L", "I"}:
            raise ImageFormatError(
                f"Label map {path} has colour type {mode!r}; "
                "expected a single-channel PNG."
            )
        labels = np.asarray(image).astype(np.int64)
    if labels.size == 0:
        raise ImageFormatError(f"Label map {path} is empty.")
    return labels


def quantize_8bit(data: np.ndarray) -> np.ndarray:
    """round(x * 255) with halves rounded up, as uint8."""
    return np.floor(np.asarray(data, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def save_png(img: ImageBuffer, path: Path | str) -> None:
    """Write an 8-bit PNG; C must be 1 (grayscale) or 3 (RGB)."""
    path = Path(path)
    if img.channels not in (1, 3):
        raise ImageFormatError(
            f"Cannot save a {img.channels}-channel image as PNG; expected 1 or 3."
        )
    q = quantize_8bit(img.data)
    pixels = q[0] if img.channels == 1 else q.transpose(1, 2, 0)
    try:
        Image.fromarray(np.ascontiguousarray(pixels)).save(path, format="PNG")
    except OSError as exc:
        raise ImageFormatError(f"Unable to write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# DQTF tensors


def encode_tensor(x: Any, dtype: int = DTYPE_F32) -> bytes:
    """Serialize an array (or raster) into DQTF bytes."""
    if dtype not in _DTYPES:
        raise TensorFormatError(f"Unknown DQTF dtype code {dtype}.")
    arr = np.asarray(x.data if isinstance(x, _Raster) else x)
    if arr.ndim > 255:
        raise TensorFormatError(f"DQTF supports at most 255 dims, got {arr.ndim}.")
    parts = [_TENSOR_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, dtype, arr.ndim)]
    parts.extend(_TENSOR_DIM.pack(int(dim)) for dim in arr.shape)
    parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    return b"".join(parts)


def decode_tensor(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    """Parse DQTF bytes; the result keeps the stored precision."""
    if len(blob) < _TENSOR_HEADER.size:
        raise TruncatedPayloadError(f"{source}: header is truncated.")
    magic, version, dtype, ndim = _TENSOR_HEADER.unpack_from(blob, 0)
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}.")
    if version != TENSOR_VERSION:
        raise VersionMismatchError(
            f"{source}: DQTF version {version} is not supported (expected {TENSOR_VERSION})."
        )
    if dtype not in _DTYPES:
        raise TensorFormatError(f"{source}: unknown dtype code {dtype}.")
    offset = _TENSOR_HEADER.size
    if len(blob) < offset + ndim * _TENSOR_DIM.size:
        raise TruncatedPayloadError(f"{source}: dimension table is truncated.")
    dims = tuple(
        _TENSOR_DIM.unpack_from(blob, offset + i * _TENSOR_DIM.size)[0] for i in range(ndim)
    )
    offset += ndim * _TENSOR_DIM.size
    item = np.dtype(_DTYPES[dtype])
    expected = int(np.prod(dims, dtype=np.int64)) * item.itemsize
    payload = blob[offset:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{source}: payload has {len(payload)} bytes, expected {expected}."
        )
    if len(payload) > expected:
        raise TensorFormatError(
            f"{source}: {len(payload) - expected} trailing bytes after payload."
        )
    return np.frombuffer(payload, dtype=item).reshape(dims).copy()


def write_tensor(x: Any, path: Path | str, dtype: int = DTYPE_F32) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_tensor(x, dtype))
    except OSError as exc:
        raise TensorFormatError(f"Unable to write {path}: {exc}") from exc


def read_tensor(path: Path | str) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise TensorFormatError(f"Tensor file {path} does not exist.")
    return decode_tensor(path.read_bytes(), source=str(path))


def read_map(path: Path | str) -> DistortionMap:
    tensor = read_tensor(path)
    if tensor.ndim != 3:
        raise TensorFormatError(
            f"{path}: a distortion map needs 3 dims, found {tensor.ndim}."
        )
    return DistortionMap(tensor)


def luma(data: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of a 3 x H x W array (grayscale passes through)."""
    if data.shape[0] == 1:
        return np.asarray(data[0], dtype=np.float64)
    return 0.299 * data[0] + 0.587 * data[1] + 0.114 * data[2]


_CENTRAL_DIFF = np.array([-0.5, 0.0, 0.5])


def gradient_magnitude(plane: np.ndarray) -> np.ndarray:
    """|grad| of a 2-D plane from central differences, reflect-101 borders."""
    gy = ndimage.correlate1d(plane, _CENTRAL_DIFF, axis=0, mode="mirror")
    gx = ndimage.correlate1d(plane, _CENTRAL_DIFF, axis=1, mode="mirror")
    return np.hypot(gx, gy)
