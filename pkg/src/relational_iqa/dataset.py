"""Dataset directories: PNG images, DQTF maps and a JSON-Lines manifest.

Triplet layout::

    images/{item}_ref.png
    images/{item}_test.png
    maps/{item}_Y.dqtf
    manifest.jsonl

Tier layout::

    tier0/{scene}.png, tier-1/{scene}.png, ...
    manifest.jsonl

Triplets are stored in forward orientation with a ``swapped`` flag, so the
map on disk is always the sparse forward map. Unknown manifest fields are
ignored on read.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .distortion_bank import DEFAULT_CONSTANTS, N_KINDS, OperatorConstants
from .errors import RelationalIqaError, ValidationError
from .imagecore import ImageBuffer, load_png, read_map, save_png, write_tensor
from .mask_engine import masks_from_provenance
from .triplet_synth import (
    RegionAssignment,
    Tier,
    TierSet,
    Triplet,
    swap_triplet,
    synthesize,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
LAYOUT_TRIPLETS = "triplets"
LAYOUT_TIERS = "tiers"


class DatasetError(ValidationError):
    """Raised when a dataset directory cannot be read or written."""


class DatasetExistsError(DatasetError):
    """Raised when writing would overwrite an existing dataset."""


@dataclass(frozen=True)
class RecordError:
    index: int
    message: str


@dataclass
class DatasetContents:
    """What ``read_dataset`` could load, plus one error per bad record."""

    layout: str
    records: list[dict[str, Any]]
    triplets: list[Triplet] = field(default_factory=list)
    tiers: TierSet | None = None
    errors: list[RecordError] = field(default_factory=list)


def _item_name(index: int) -> str:
    return f"{index:06d}"


def _tier_dir(tier_id: int) -> str:
    return f"tier{tier_id}"


def _prepare_directory(directory: Path, force: bool) -> None:
    manifest = directory / MANIFEST_NAME
    if manifest.exists() and not force:
        raise DatasetExistsError(f"{manifest} already exists; pass force to overwrite.")
    directory.mkdir(parents=True, exist_ok=True)


def _write_manifest(directory: Path, records: list[dict[str, Any]]) -> None:
    lines = [json.dumps(record, sort_keys=True) for record in records]
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _triplet_record(triplet: Triplet, index: int) -> dict[str, Any]:
    name = _item_name(index)
    return {
        "layout": LAYOUT_TRIPLETS,
        "item": index,
        "master_seed": triplet.master_seed,
        "item_index": triplet.item_index,
        "reference": f"images/{name}_ref.png",
        "test": f"images/{name}_test.png",
        "map": f"maps/{name}_Y.dqtf",
        "height": triplet.reference.height,
        "width": triplet.reference.width,
        "n_types": triplet.forward_map.n_types,
        "assignments": [a.to_record() for a in triplet.assignments],
        "mask_provenance": triplet.masks.provenance,
        "mask_sources": list(triplet.masks.sources),
        "swapped": triplet.swapped,
        "tier": None,
    }


def write_triplets(triplets: Sequence[Triplet], directory: Path | str, force: bool = False) -> list[dict[str, Any]]:
    directory = Path(directory)
    _prepare_directory(directory, force)
    (directory / "images").mkdir(exist_ok=True)
    (directory / "maps").mkdir(exist_ok=True)
    records = []
    ordered = sorted(
        enumerate(triplets),
        key=lambda pair: pair[1].item_index if pair[1].item_index is not None else pair[0],
    )
    for position, triplet in ordered:
        index = triplet.item_index if triplet.item_index is not None else position
        forward = triplet.unswapped()
        record = _triplet_record(triplet, index)
        save_png(forward.reference, directory / record["reference"])
        save_png(forward.test, directory / record["test"])
        write_tensor(forward.forward_map, directory / record["map"])
        records.append(record)
        logger.debug("Wrote item %s", index)
    _write_manifest(directory, records)
    logger.info("Wrote %d triplet(s) to %s", len(records), directory)
    return records


def write_tiers(
    tiers: TierSet,
    directory: Path | str,
    force: bool = False,
    source_files: Sequence[Path] | None = None,
) -> list[dict[str, Any]]:
    """Write every tier; ``source_files`` are copied byte-for-byte as tier 0."""
    directory = Path(directory)
    _prepare_directory(directory, force)
    if source_files is not None and len(source_files) != tiers.scene_count:
        raise DatasetError(f"{len(source_files)} source files for {tiers.scene_count} scenes.")
    records = []
    for tier in tiers.tiers:
        (directory / _tier_dir(tier.tier_id)).mkdir(exist_ok=True)
    for scene in range(tiers.scene_count):
        reference_path = f"{_tier_dir(0)}/{scene:04d}.png"
        for tier in tiers.tiers:
            relative = f"{_tier_dir(tier.tier_id)}/{scene:04d}.png"
            if tier.tier_id == 0 and source_files is not None:
                shutil.copyfile(source_files[scene], directory / relative)
            else:
                save_png(tier.images[scene], directory / relative)
            assignments = tiers.assignments[scene] if tiers.assignments else ()
            record: dict[str, Any] = {
                "layout": LAYOUT_TIERS,
                "tier": tier.tier_id,
                "scene": scene,
                "intensity": tier.intensity,
                "image": relative,
                "reference": reference_path,
                "master_seed": tiers.master_seed,
                "item_index": scene,
                "height": tier.images[scene].height,
                "width": tier.images[scene].width,
                "assignments": [
                    {**a.to_record(), "alpha": tier.intensity} for a in assignments
                ],
                "mask_provenance": tiers.masks[scene].provenance if tiers.masks else None,
                "swapped": False,
            }
            records.append(record)
    _write_manifest(directory, records)
    logger.info("Wrote %d tier(s) x %d scene(s) to %s", len(tiers.tiers), tiers.scene_count, directory)
    return records


def write_dataset(
    data: Sequence[Triplet] | TierSet,
    directory: Path | str,
    force: bool = False,
    source_files: Sequence[Path] | None = None,
) -> list[dict[str, Any]]:
    """Write triplets or a TierSet; returns the manifest records."""
    if isinstance(data, TierSet):
        return write_tiers(data, directory, force, source_files)
    return write_triplets(data, directory, force)


def _read_records(directory: Path) -> tuple[list[dict[str, Any]], list[RecordError]]:
    manifest = directory / MANIFEST_NAME
    if not directory.is_dir():
        raise DatasetError(f"Dataset directory {directory} does not exist.")
    if not manifest.exists():
        raise DatasetError(f"Dataset {directory} has no {MANIFEST_NAME}.")
    records: list[dict[str, Any]] = []
    errors: list[RecordError] = []
    for line_no, line in enumerate(manifest.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append(RecordError(line_no, f"invalid JSON: {exc}"))
            continue
        if not isinstance(record, dict):
            errors.append(RecordError(line_no, "record is not an object"))
            continue
        record["_line"] = line_no
        records.append(record)
    return records, errors


def _check_image(image: ImageBuffer, record: dict[str, Any], label: str) -> None:
    expected = (int(record["height"]), int(record["width"]))
    if image.spatial_shape != expected:
        raise DatasetError(f"{label} is {image.spatial_shape}, manifest says {expected}")


def _load_triplet(directory: Path, record: dict[str, Any]) -> Triplet:
    reference = load_png(directory / record["reference"])
    test = load_png(directory / record["test"])
    forward = read_map(directory / record["map"])
    _check_image(reference, record, "reference")
    _check_image(test, record, "test image")
    if forward.spatial_shape != reference.spatial_shape or forward.n_types != N_KINDS:
        raise DatasetError(f"map shape {forward.data.shape} does not match the images")
    masks = masks_from_provenance(record["mask_provenance"], reference.height, reference.width)
    triplet = Triplet(
        reference=reference,
        test=test,
        distortion_map=forward,
        forward_map=forward,
        assignments=tuple(RegionAssignment.from_record(a) for a in record["assignments"]),
        masks=masks,
        master_seed=record.get("master_seed"),
        item_index=record.get("item_index"),
    )
    return swap_triplet(triplet) if record.get("swapped") else triplet


def _assemble_tiers(
    directory: Path, records: list[dict[str, Any]], errors: list[RecordError]
) -> TierSet | None:
    images: dict[tuple[int, int], ImageBuffer] = {}
    intensities: dict[int, float] = {}
    assignments: dict[int, tuple[RegionAssignment, ...]] = {}
    for record in records:
        try:
            tier_id, scene = int(record["tier"]), int(record["scene"])
            image = load_png(directory / record["image"])
            _check_image(image, record, "tier image")
        except (RelationalIqaError, KeyError, TypeError, ValueError) as exc:
            errors.append(RecordError(record["_line"], str(exc)))
            continue
        images[(tier_id, scene)] = image
        intensities[tier_id] = float(record.get("intensity", 0.0))
        if tier_id == 0:
            assignments[scene] = tuple(
                RegionAssignment.from_record({**a, "alpha": 0.0}) for a in record.get("assignments", [])
            )
    if not images:
        return None
    tier_ids = sorted(intensities, reverse=True)
    scenes = sorted({scene for _, scene in images})
    complete = [s for s in scenes if all((t, s) in images for t in tier_ids)]
    for scene in scenes:
        if scene not in complete:
            errors.append(RecordError(-1, f"scene {scene} is missing from at least one tier; dropped"))
    if not complete:
        return None
    tiers = tuple(
        Tier(tier_id=t, intensity=intensities[t], images=tuple(images[(t, s)] for s in complete))
        for t in tier_ids
    )
    scene_assignments = tuple(assignments.get(s, ()) for s in complete)
    return TierSet(
        tiers=tiers,
        assignments=scene_assignments if all(scene_assignments) else (),
        master_seed=records[0].get("master_seed"),
    )


def read_dataset(directory: Path | str) -> DatasetContents:
    """Load a dataset; bad records are reported and the rest still load."""
    directory = Path(directory)
    records, errors = _read_records(directory)
    layouts = {record.get("layout", LAYOUT_TRIPLETS) for record in records}
    if len(layouts) > 1:
        raise DatasetError(f"Dataset {directory} mixes layouts {sorted(layouts)}.")
    layout = layouts.pop() if layouts else LAYOUT_TRIPLETS
    contents = DatasetContents(layout=layout, records=records, errors=errors)
    if layout == LAYOUT_TIERS:
        contents.tiers = _assemble_tiers(directory, records, errors)
        return contents
    for record in records:
        try:
            contents.triplets.append(_load_triplet(directory, record))
        except (RelationalIqaError, KeyError, TypeError, ValueError) as exc:
            errors.append(RecordError(record["_line"], str(exc)))
    if errors:
        logger.warning("%d record(s) in %s failed to load", len(errors), directory)
    return contents


def regenerate_test(
    record: dict[str, Any],
    directory: Path | str,
    constants: OperatorConstants = DEFAULT_CONSTANTS,
) -> ImageBuffer:
    """Re-run synthesis for one manifest record (before PNG quantization)."""
    directory = Path(directory)
    reference = load_png(directory / record["reference"])
    provenance = record.get("mask_provenance")
    if not provenance:
        raise DatasetError("Record carries no mask provenance; it cannot be regenerated.")
    masks = masks_from_provenance(provenance, reference.height, reference.width)
    assignments = [RegionAssignment.from_record(a) for a in record["assignments"]]
    test, _ = synthesize(reference, masks, assignments, constants)
    return test
