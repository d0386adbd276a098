"""Mask pool: semantic label maps plus random Perlin-threshold and rectangle masks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ValidationError
from .imagecore import GOLDEN_GAMMA, MASK64, Rng, load_label_png

PERLIN_CELLS = (8, 16, 32)
PERLIN_THRESHOLDS = (-0.2, 0.25)
RECT_SIDE_RANGE = (0.1, 0.6)
MAX_RANDOM_SHAPES = 4

_S = 1.0 / math.sqrt(2.0)
# Eight unit gradients, indexed by the top three bits of the lattice hash.
_GRADIENTS = np.array(
    [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (_S, _S), (-_S, _S), (_S, -_S), (-_S, -_S)]
)
_HASH_Y = 0xC2B2AE3D27D4EB4F


class MaskError(ValidationError):
    """Raised when masks are malformed or do not partition the frame."""


@dataclass(frozen=True, eq=False)
class MaskSet:
    """K mutually exclusive binary masks covering every pixel exactly once."""

    masks: np.ndarray
    sources: tuple[str, ...]
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        masks = np.array(self.masks, dtype=bool)
        if masks.ndim != 3 or masks.shape[0] < 1:
            raise MaskError(f"MaskSet needs a K x H x W array with K >= 1, got {masks.shape}.")
        if len(self.sources) != masks.shape[0]:
            raise MaskError(
                f"MaskSet has {masks.shape[0]} masks but {len(self.sources)} source tags."
            )
        coverage = masks.sum(axis=0)
        if not np.all(coverage == 1):
            bad = int(np.count_nonzero(coverage != 1))
            raise MaskError(f"Masks do not partition the frame ({bad} pixels covered != 1 times).")
        masks.setflags(write=False)
        object.__setattr__(self, "masks", masks)

    @property
    def count(self) -> int:
        return int(self.masks.shape[0])

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return int(self.masks.shape[1]), int(self.masks.shape[2])


# ---------------------------------------------------------------------------
# Gradient noise


def fade(t: np.ndarray | float) -> np.ndarray | float:
    """Quintic fade 6t^5 - 15t^4 + 10t^3."""
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _lattice_gradients(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        ux = ix.astype(np.int64).view(np.uint64)
        uy = iy.astype(np.int64).view(np.uint64)
        z = np.uint64(seed & MASK64) ^ (ux * np.uint64(GOLDEN_GAMMA)) ^ (uy * np.uint64(_HASH_Y))
        z = z + np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return _GRADIENTS[(z >> np.uint64(61)).astype(np.intp)]


def perlin2d(x: Any, y: Any, seed: int) -> Any:
    """Classic 2-D gradient noise in [-1, 1], zero on the integer lattice.

    Accepts scalars or broadcastable arrays; returns the matching shape.
    """
    xs, ys = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    ix = x0.astype(np.int64)
    iy = y0.astype(np.int64)

    def corner(dx: int, dy: int) -> np.ndarray:
        g = _lattice_gradients(ix + dx, iy + dy, seed)
        return g[..., 0] * (fx - dx) + g[..., 1] * (fy - dy)

    u = fade(fx)
    v = fade(fy)
    n00, n10, n01, n11 = corner(0, 0), corner(1, 0), corner(0, 1), corner(1, 1)
    nx0 = n00 + u * (n10 - n00)
    nx1 = n01 + u * (n11 - n01)
    value = nx0 + v * (nx1 - nx0)
    if value.ndim == 0:
        return float(value)
    return value


def noise_field(height: int, width: int, cell_size: float, seed: int) -> np.ndarray:
    """perlin2d sampled at (column / cell, row / cell) for every pixel."""
    rows = np.arange(height, dtype=np.float64)[:, None] / cell_size
    cols = np.arange(width, dtype=np.float64)[None, :] / cell_size
    return perlin2d(cols, rows, seed)


def _check_dims(height: int, width: int) -> None:
    if height < 1 or width < 1:
        raise MaskError(f"Degenerate mask dimensions {height}x{width}.")


def perlin_mask(height: int, width: int, cell_size: int, threshold: float, seed: int) -> np.ndarray:
    """Pixels where the gradient noise exceeds ``threshold``."""
    _check_dims(height, width)
    if cell_size < 2:
        raise MaskError(f"Perlin cell size must be >= 2, got {cell_size}.")
    if not -1.0 <= threshold <= 1.0:
        raise MaskError(f"Perlin threshold must lie in [-1, 1], got {threshold}.")
    return noise_field(height, width, cell_size, seed) > threshold


# ---------------------------------------------------------------------------
# Rectangles


def _rect_side_bounds(extent: int) -> tuple[int, int]:
    low = max(1, math.ceil(RECT_SIDE_RANGE[0] * extent))
    high = max(low, math.floor(RECT_SIDE_RANGE[1] * extent))
    return low, high


def _draw_rect(height: int, width: int, rng: Rng) -> dict[str, int]:
    extent = min(height, width)
    low, high = _rect_side_bounds(extent)

    def side() -> int:
        return min(high, max(low, round(rng.uniform(*RECT_SIDE_RANGE) * extent)))

    rect_h, rect_w = side(), side()
    top = rng.integers(0, height - rect_h + 1)
    left = rng.integers(0, width - rect_w + 1)
    return {"top": top, "left": left, "height": rect_h, "width": rect_w}


def _render_rect(height: int, width: int, top: int, left: int, rect_h: int, rect_w: int) -> np.ndarray:
    if rect_h < 1 or rect_w < 1 or top < 0 or left < 0 or top + rect_h > height or left + rect_w > width:
        raise MaskError(
            f"Rectangle {rect_h}x{rect_w} at ({top}, {left}) does not fit a {height}x{width} frame."
        )
    raster = np.zeros((height, width), dtype=bool)
    raster[top : top + rect_h, left : left + rect_w] = True
    return raster


def rect_mask(
    height: int,
    width: int,
    rng: Rng,
    *,
    top: int | None = None,
    left: int | None = None,
    rect_height: int | None = None,
    rect_width: int | None = None,
) -> np.ndarray:
    """Random axis-aligned rectangle; any parameter may be forced."""
    _check_dims(height, width)
    params = _draw_rect(height, width, rng)
    if rect_height is not None:
        params["height"] = rect_height
    if rect_width is not None:
        params["width"] = rect_width
    if top is not None:
        params["top"] = top
    if left is not None:
        params["left"] = left
    return _render_rect(height, width, params["top"], params["left"], params["height"], params["width"])


# ---------------------------------------------------------------------------
# Pools


def load_label_map(path: Path | str) -> MaskSet:
    """One mask per distinct class id of a single-channel label PNG.

    Provenance records the absolute path so datasets rebuild from any working
    directory.
    """
    labels = load_label_png(path)
    if labels.ndim != 2:
        raise MaskError(f"Label map {path} must be single-channel, got shape {labels.shape}.")
    ids = np.unique(labels)
    masks = labels[None, :, :] == ids[:, None, None]
    return MaskSet(
        masks=masks,
        sources=tuple(f"class:{int(i)}" for i in ids),
        provenance={"kind": "semantic", "path": str(Path(path).resolve())},
    )


def render_shape(shape: dict[str, Any], height: int, width: int) -> np.ndarray:
    """Rebuild one recorded random shape."""
    kind = shape.get("type")
    if kind == "perlin":
        return perlin_mask(height, width, int(shape["cell_size"]), float(shape["threshold"]), int(shape["seed"]))
    if kind == "rect":
        return _render_rect(
            height, width, int(shape["top"]), int(shape["left"]), int(shape["height"]), int(shape["width"])
        )
    raise MaskError(f"Unknown random shape type {kind!r}.")


def partition_from_shapes(shapes: list[dict[str, Any]], height: int, width: int) -> MaskSet:
    """Earlier shapes keep contested pixels; the rest form a background mask."""
    claimed = np.zeros((height, width), dtype=bool)
    masks: list[np.ndarray] = []
    sources: list[str] = []
    for shape in shapes:
        region = render_shape(shape, height, width) & ~claimed
        if not region.any():
            continue
        claimed |= region
        masks.append(region)
        sources.append(str(shape["type"]))
    if not claimed.all():
        masks.append(~claimed)
        sources.append("background")
    return MaskSet(
        masks=np.stack(masks),
        sources=tuple(sources),
        provenance={"kind": "random", "shapes": [dict(s) for s in shapes]},
    )


def masks_from_provenance(provenance: dict[str, Any], height: int, width: int) -> MaskSet:
    kind = provenance.get("kind")
    if kind == "semantic":
        masks = load_label_map(provenance["path"])
        if masks.spatial_shape != (height, width):
            raise MaskError(
                f"Label map {provenance['path']} is {masks.spatial_shape}, expected {(height, width)}."
            )
        return masks
    if kind == "random":
        return partition_from_shapes(list(provenance.get("shapes", [])), height, width)
    raise MaskError(f"Unknown mask provenance kind {kind!r}.")


def _draw_shape(height: int, width: int, rng: Rng) -> dict[str, Any]:
    if rng.bernoulli(0.5):
        return {
            "type": "perlin",
            "cell_size": rng.choice(PERLIN_CELLS),
            "threshold": rng.uniform(*PERLIN_THRESHOLDS),
            "seed": rng.next_u64(),
        }
    return {"type": "rect", **_draw_rect(height, width, rng)}


def sample_mask_pool(
    semantic: MaskSet | None,
    height: int,
    width: int,
    rng: Rng,
    p_random: float = 0.3,
    n_shapes: int | None = None,
) -> MaskSet:
    """Semantic set with probability 1 - p_random, otherwise a random partition.

    The random branch replaces the whole pool for this draw. ``n_shapes``
    forces the number of random shapes (normally 1..4).
    """
    _check_dims(height, width)
    if not 0.0 <= p_random <= 1.0:
        raise MaskError(f"p_random must lie in [0, 1], got {p_random}.")
    if semantic is not None and semantic.spatial_shape != (height, width):
        raise MaskError(
            f"Semantic masks are {semantic.spatial_shape}, expected {(height, width)}."
        )
    use_random = rng.random() < p_random
    if semantic is not None and not use_random:
        return semantic
    count = n_shapes if n_shapes is not None else rng.integers(1, MAX_RANDOM_SHAPES + 1)
    shapes = [_draw_shape(height, width, rng) for _ in range(count)]
    return partition_from_shapes(shapes, height, width)
