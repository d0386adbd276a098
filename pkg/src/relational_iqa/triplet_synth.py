"""Synthetic distortion engine: masked compositing, ground-truth maps, swaps and tiers."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .distortion_bank import (
    DEFAULT_CONSTANTS,
    N_KINDS,
    DistortionKind,
    OperatorConstants,
    apply_distortion,
    distortion_magnitude,
)
from .errors import DimensionMismatchError, ValidationError
from .imagecore import DistortionMap, ImageBuffer, Rng, require_same_spatial, rng_derive
from .mask_engine import MaskSet, noise_field, sample_mask_pool

logger = logging.getLogger(__name__)


class TierError(ValidationError):
    """Raised when a tier schedule or TierSet is malformed."""


@dataclass(frozen=True)
class IntensityLaw:
    """Distribution of region intensities with a pristine (alpha = 0) atom."""

    kind: str = "uniform"
    a: float = 2.0
    b: float = 2.0
    p_zero: float = 0.2

    def __post_init__(self) -> None:
        if self.kind not in {"uniform", "beta"}:
            raise ValidationError(f"Intensity law must be 'uniform' or 'beta', got {self.kind!r}.")
        if self.a <= 0 or self.b <= 0:
            raise ValidationError("Beta parameters must be positive.")
        if not 0.0 <= self.p_zero <= 1.0:
            raise ValidationError(f"p_zero must lie in [0, 1], got {self.p_zero}.")

    def sample(self, rng: Rng) -> float:
        """One intensity, rounded to float32 precision so maps store it exactly."""
        if rng.random() < self.p_zero:
            return 0.0
        value = rng.random() if self.kind == "uniform" else rng.beta(self.a, self.b)
        return min(1.0, max(0.0, float(np.float32(value))))


@dataclass(frozen=True)
class EngineConfig:
    """Everything the engine needs to turn a reference into a triplet."""

    constants: OperatorConstants = DEFAULT_CONSTANTS
    law: IntensityLaw = field(default_factory=IntensityLaw)
    p_random: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_random <= 1.0:
            raise ValidationError(f"p_random must lie in [0, 1], got {self.p_random}.")


@dataclass(frozen=True)
class RegionAssignment:
    region: int
    kind: DistortionKind
    alpha: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"Region {self.region} intensity {self.alpha} is outside [0, 1].")

    def to_record(self) -> dict[str, Any]:
        return {"region": self.region, "kind": int(self.kind), "alpha": self.alpha, "seed": self.seed}

    @classmethod
    def from_record(cls, data: dict[str, Any]) -> "RegionAssignment":
        return cls(
            region=int(data["region"]),
            kind=DistortionKind(int(data["kind"])),
            alpha=float(data["alpha"]),
            seed=int(data["seed"]),
        )


@dataclass(frozen=True, eq=False)
class Triplet:
    """(reference, test, target map) plus the provenance needed to rebuild it.

    ``forward_map`` is always the ground-truth map of the un-swapped triplet; the weight
    map of both loss terms is derived from its support.
    """

    reference: ImageBuffer
    test: ImageBuffer
    distortion_map: DistortionMap
    forward_map: DistortionMap
    assignments: tuple[RegionAssignment, ...]
    masks: MaskSet
    swapped: bool = False
    master_seed: int | None = None
    item_index: int | None = None

    def __post_init__(self) -> None:
        require_same_spatial(self.reference, self.test, self.distortion_map, self.forward_map)
        if self.masks.spatial_shape != self.reference.spatial_shape:
            raise DimensionMismatchError("Triplet masks do not match the image dimensions.")
        if not self.forward_map.is_sparse():
            raise ValidationError("Forward distortion map is not per-pixel sparse.")
        if not self.swapped and not self.distortion_map.is_sparse():
            raise ValidationError("Un-swapped triplet target map is not per-pixel sparse.")

    def weight_map(self, beta: float = 0.05, w_high: float = 10.0) -> np.ndarray:
        return make_weight_map(self.forward_map, beta, w_high)

    def unswapped(self) -> "Triplet":
        if not self.swapped:
            return self
        return replace(
            self,
            reference=self.test,
            test=self.reference,
            distortion_map=self.forward_map,
            swapped=False,
        )


@dataclass(frozen=True)
class Tier:
    tier_id: int
    intensity: float
    images: tuple[ImageBuffer, ...]


@dataclass(frozen=True, eq=False)
class TierSet:
    """Tiers 0, -1, ..., -T over the same scenes, quality decreasing with t."""

    tiers: tuple[Tier, ...]
    assignments: tuple[tuple[RegionAssignment, ...], ...] = ()
    masks: tuple[MaskSet, ...] = ()
    master_seed: int | None = None

    def __post_init__(self) -> None:
        if len(self.tiers) < 2:
            raise TierError(f"A TierSet needs at least two tiers, got {len(self.tiers)}.")
        expected_ids = list(range(0, -len(self.tiers), -1))
        if [t.tier_id for t in self.tiers] != expected_ids:
            raise TierError(f"Tier ids must be {expected_ids}, got {[t.tier_id for t in self.tiers]}.")
        if self.tiers[0].intensity != 0.0:
            raise TierError("Tier 0 must have intensity 0.")
        intensities = [t.intensity for t in self.tiers]
        if any(b <= a for a, b in zip(intensities, intensities[1:])):
            raise TierError(f"Tier intensities must increase as t decreases, got {intensities}.")
        counts = {len(t.images) for t in self.tiers}
        if len(counts) != 1:
            raise TierError(f"Every tier must hold the same scenes, got counts {sorted(counts)}.")

    @property
    def scene_count(self) -> int:
        return len(self.tiers[0].images)

    @property
    def tier_ids(self) -> list[int]:
        return [t.tier_id for t in self.tiers]

    def tier(self, tier_id: int) -> Tier:
        return self.tiers[-tier_id]

    def references(self) -> tuple[ImageBuffer, ...]:
        return self.tiers[0].images

    def image(self, tier_id: int, scene: int) -> ImageBuffer:
        return self.tier(tier_id).images[scene]

    def select_scenes(self, scenes: Sequence[int]) -> "TierSet":
        scenes = list(scenes)
        return TierSet(
            tiers=tuple(replace(t, images=tuple(t.images[s] for s in scenes)) for t in self.tiers),
            assignments=tuple(self.assignments[s] for s in scenes) if self.assignments else (),
            masks=tuple(self.masks[s] for s in scenes) if self.masks else (),
            master_seed=self.master_seed,
        )


# ---------------------------------------------------------------------------
# Reference scenes


def procedural_scene(height: int, width: int, seed: int) -> ImageBuffer:
    """Deterministic natural-looking RGB scene on the 8-bit grid."""
    rng = Rng(seed)
    rows = np.linspace(0.0, 1.0, height)[:, None]
    cols = np.linspace(0.0, 1.0, width)[None, :]
    corners = np.array([[rng.uniform(0.15, 0.85) for _ in range(3)] for _ in range(4)])
    data = np.empty((3, height, width))
    for c in range(3):
        top = corners[0, c] * (1 - cols) + corners[1, c] * cols
        bottom = corners[2, c] * (1 - cols) + corners[3, c] * cols
        data[c] = top * (1 - rows) + bottom * rows

    texture = np.zeros((height, width))
    amplitude = 0.16
    for cell in (32.0, 16.0, 8.0, 4.0):
        texture += amplitude * noise_field(height, width, cell, rng.next_u64())
        amplitude *= 0.5
    data += texture[None]
    for c in range(3):
        data[c] += 0.04 * noise_field(height, width, 12.0, rng.next_u64())

    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(2, 5)):
        colour = np.array([rng.uniform(0.1, 0.9) for _ in range(3)])
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry = rng.uniform(0.08, 0.3) * height
        rx = rng.uniform(0.08, 0.3) * width
        if rng.bernoulli(0.5):
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            inside = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        shade = 0.85 + 0.15 * texture / 0.3
        data[:, inside] = (colour[:, None] * shade[inside][None, :])
    data = np.clip(data, 0.02, 0.98)
    return ImageBuffer(np.floor(data * 255.0 + 0.5) / 255.0)


# ---------------------------------------------------------------------------
# Engine


def sample_assignments(masks: MaskSet, law: IntensityLaw, rng: Rng) -> list[RegionAssignment]:
    """One (operator, intensity, seed) per mask; operators uniform over the bank."""
    assignments = []
    for region in range(masks.count):
        kind = DistortionKind(rng.integers(0, N_KINDS))
        alpha = law.sample(rng)
        assignments.append(RegionAssignment(region=region, kind=kind, alpha=alpha, seed=rng.next_u64()))
    return assignments


def synthesize(
    reference: ImageBuffer,
    masks: MaskSet,
    assignments: Sequence[RegionAssignment],
    constants: OperatorConstants = DEFAULT_CONSTANTS,
) -> tuple[ImageBuffer, DistortionMap]:
    """I_test = sum_k m_k * x_jk(I_ref, alpha_k); Y_j = sum_{k: j_k = j} alpha_k m_k."""
    if masks.spatial_shape != reference.spatial_shape:
        raise DimensionMismatchError(
            f"Masks are {masks.spatial_shape} but the reference is {reference.spatial_shape}."
        )
    if len(assignments) != masks.count:
        raise ValidationError(f"{len(assignments)} assignments for {masks.count} masks.")
    test = np.array(reference.data)
    target = np.zeros((N_KINDS, *reference.spatial_shape))
    for assignment in assignments:
        mask = masks.masks[assignment.region]
        if assignment.alpha == 0:
            continue
        distorted = apply_distortion(assignment.kind, reference, assignment.alpha, Rng(assignment.seed), constants)
        test[:, mask] = distorted.data[:, mask]
        target[int(assignment.kind)][mask] = assignment.alpha
    return ImageBuffer(test), DistortionMap(target)


def make_weight_map(y: DistortionMap | np.ndarray, beta: float = 0.05, w_high: float = 10.0) -> np.ndarray:
    """w_high where |Y| > beta (strict), 1 elsewhere."""
    if not 0.0 <= beta < 1.0:
        raise ValidationError(f"beta must lie in [0, 1), got {beta}.")
    if w_high < 1.0:
        raise ValidationError(f"w_high must be >= 1, got {w_high}.")
    data = y.data if isinstance(y, DistortionMap) else np.asarray(y, dtype=np.float64)
    return np.where(np.abs(data) > beta, float(w_high), 1.0)


def build_triplet(
    reference: ImageBuffer,
    masks: MaskSet,
    assignments: Sequence[RegionAssignment],
    constants: OperatorConstants = DEFAULT_CONSTANTS,
    master_seed: int | None = None,
    item_index: int | None = None,
) -> Triplet:
    test, target = synthesize(reference, masks, assignments, constants)
    return Triplet(
        reference=reference,
        test=test,
        distortion_map=target,
        forward_map=target,
        assignments=tuple(assignments),
        masks=masks,
        master_seed=master_seed,
        item_index=item_index,
    )


def generate_triplet(
    master_seed: int,
    item_index: int,
    engine: EngineConfig = EngineConfig(),
    size: int = 128,
    reference: ImageBuffer | None = None,
    semantic: MaskSet | None = None,
) -> Triplet:
    """Item ``item_index`` of the dataset keyed by ``master_seed``."""
    rng = rng_derive(master_seed, item_index)
    scene_seed = rng.next_u64()
    if reference is None:
        reference = procedural_scene(size, size, scene_seed)
    height, width = reference.spatial_shape
    masks = sample_mask_pool(semantic, height, width, rng, engine.p_random)
    assignments = sample_assignments(masks, engine.law, rng)
    return build_triplet(reference, masks, assignments, engine.constants, master_seed, item_index)


def swap_augment(triplet: Triplet, rng: Rng, p_swap: float = 0.25) -> Triplet:
    """With probability p_swap exchange the images and complement the target."""
    if triplet.swapped:
        raise ValidationError("Triplet is already swapped; double swaps are rejected.")
    if not 0.0 <= p_swap <= 1.0:
        raise ValidationError(f"p_swap must lie in [0, 1], got {p_swap}.")
    if rng.random() >= p_swap:
        return triplet
    return swap_triplet(triplet)


def swap_triplet(triplet: Triplet) -> Triplet:
    """Unconditional swap of an un-swapped triplet."""
    if triplet.swapped:
        raise ValidationError("Triplet is already swapped; double swaps are rejected.")
    return replace(
        triplet,
        reference=triplet.test,
        test=triplet.reference,
        distortion_map=triplet.forward_map.complement(),
        swapped=True,
    )


# ---------------------------------------------------------------------------
# Tiers


def build_tier_schedule(
    base_images: Sequence[ImageBuffer],
    alpha_schedule: Sequence[float],
    rng: Rng,
    t_low: int | None = None,
    masks_per_image: Sequence[MaskSet] | None = None,
    constants: OperatorConstants = DEFAULT_CONSTANTS,
) -> TierSet:
    """Tier 0 = base images; tier -s distorts every region at alpha_schedule[s-1].

    Each scene draws its masks and per-region operators once, so only the
    intensity changes from tier to tier.
    """
    schedule = [float(a) for a in alpha_schedule]
    if not schedule:
        raise TierError("The intensity schedule is empty.")
    if t_low is not None and t_low != len(schedule):
        raise TierError(f"T_low = {t_low} but the schedule has {len(schedule)} entries.")
    if any(a <= 0 or a > 1 for a in schedule):
        raise TierError(f"Schedule intensities must lie in (0, 1], got {schedule}.")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise TierError(f"The schedule must be strictly increasing, got {schedule}.")
    if not base_images:
        raise TierError("No base images were given.")
    if masks_per_image is not None and len(masks_per_image) != len(base_images):
        raise TierError("masks_per_image must hold one MaskSet per base image.")

    tier_images: list[list[ImageBuffer]] = [list(base_images)] + [[] for _ in schedule]
    scene_assignments: list[tuple[RegionAssignment, ...]] = []
    scene_masks: list[MaskSet] = []
    for scene, base in enumerate(base_images):
        scene_rng = rng.spawn()
        if masks_per_image is not None:
            masks = masks_per_image[scene]
        else:
            masks = sample_mask_pool(None, base.height, base.width, scene_rng, p_random=1.0)
        draws = [(DistortionKind(scene_rng.integers(0, N_KINDS)), scene_rng.next_u64()) for _ in range(masks.count)]
        scene_masks.append(masks)
        scene_assignments.append(
            tuple(RegionAssignment(region=k, kind=kind, alpha=0.0, seed=seed) for k, (kind, seed) in enumerate(draws))
        )
        for step, alpha in enumerate(schedule, start=1):
            assignments = [
                RegionAssignment(region=k, kind=kind, alpha=alpha, seed=seed) for k, (kind, seed) in enumerate(draws)
            ]
            test, _ = synthesize(base, masks, assignments, constants)
            tier_images[step].append(test)
        logger.debug("Built %d tiers for scene %d", len(schedule) + 1, scene)

    tiers = tuple(
        Tier(tier_id=-step, intensity=0.0 if step == 0 else schedule[step - 1], images=tuple(images))
        for step, images in enumerate(tier_images)
    )
    return TierSet(tiers=tiers, assignments=tuple(scene_assignments), masks=tuple(scene_masks))


def tier_magnitudes(tiers: TierSet) -> np.ndarray:
    """RMS distance to the tier-0 image, shape (scenes, tiers) in tier order 0, -1, ..."""
    refs = tiers.references()
    return np.array(
        [[distortion_magnitude(refs[s], t.images[s]) for t in tiers.tiers] for s in range(tiers.scene_count)]
    )


def prune_tiers(tiers: TierSet) -> tuple[TierSet, list[int]]:
    """Drop scenes whose magnitude does not strictly increase as t decreases."""
    magnitudes = tier_magnitudes(tiers)
    keep = [s for s in range(tiers.scene_count) if np.all(np.diff(magnitudes[s]) > 0)]
    dropped = [s for s in range(tiers.scene_count) if s not in keep]
    if not keep:
        raise TierError("Every scene violates the ordinal assumption; nothing left after pruning.")
    if dropped:
        logger.info("Pruned %d scene(s) violating tier monotonicity: %s", len(dropped), dropped)
    return tiers.select_scenes(keep), dropped


def generate_triplets(
    count: int,
    master_seed: int,
    engine: EngineConfig = EngineConfig(),
    size: int = 128,
    references: Sequence[ImageBuffer] | None = None,
    semantic_sets: Sequence[MaskSet] | None = None,
    workers: int = 1,
) -> list[Triplet]:
    """Items 0..count-1 in index order; results do not depend on ``workers``.

    References and semantic sets, when given, are used cyclically.
    """
    if count < 0:
        raise ValidationError(f"Triplet count must be non-negative, got {count}.")

    def build(index: int) -> Triplet:
        reference = references[index % len(references)] if references else None
        semantic = semantic_sets[index % len(semantic_sets)] if semantic_sets else None
        return generate_triplet(master_seed, index, engine, size, reference, semantic)

    if workers <= 1:
        return [build(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(build, range(count)))
