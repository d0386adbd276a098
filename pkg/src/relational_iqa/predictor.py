"""Pairwise distortion-map predictor: a fixed local featurizer plus a per-pixel MLP.

The model maps an ordered pair (A, B) = (test, reference) to an N-channel
map in (0, 1). Anti-symmetry F(A, B) = 1 - F(B, A) is not built in; it is
learned from both orderings of every training pair.

Feature layout (42 per pixel): for image A then image B, for windows 3 then 9,
the seven features ``FEATURE_NAMES``; then the 14 differences A - B in the
same order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .distortion_bank import DEFAULT_CONSTANTS, N_KINDS, DistortionKind, OperatorConstants
from .errors import DivergenceError, ValidationError
from .imagecore import DistortionMap, ImageBuffer, Rng, gradient_magnitude, luma, require_same_spatial
from .mask_engine import MaskSet, partition_from_shapes
from .mlp import Mlp, MomentumSgd, load_checkpoint, save_checkpoint, scheduled_rate
from .objectives import antisym_loss
from .scorer import srcc
from .triplet_synth import RegionAssignment, Triplet, swap_augment, synthesize

logger = logging.getLogger(__name__)

WINDOWS = (3, 9)
FEATURE_NAMES = ("luma_mean", "luma_std", "grad_mean", "r_mean", "g_mean", "b_mean", "chroma")
SINGLE_FEATURES = len(FEATURE_NAMES) * len(WINDOWS)
FEATURE_DIM = 3 * SINGLE_FEATURES
FEATURE_SCHEMA_VERSION = 1
DEFAULT_HIDDEN = (64, 32)
SCALER_ITEMS = 32
SCALE_FLOOR = 1e-6
DEFAULT_ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))
CHECKPOINT_KIND = "predictor"


class MapPredictor(Protocol):
    def predict(self, image_a: ImageBuffer, image_b: ImageBuffer) -> DistortionMap: ...


# ---------------------------------------------------------------------------
# Features


def _local_mean(plane: np.ndarray, window: int) -> np.ndarray:
    return ndimage.uniform_filter(plane, size=window, mode="mirror")


def image_features(img: ImageBuffer) -> np.ndarray:
    """The 14 single-image features (windows 3 and 9), shape 14 x H x W."""
    if img.channels != 3:
        raise ValidationError(f"The featurizer needs RGB input, got {img.channels} channels.")
    data = img.data
    y = luma(data)
    grad = gradient_magnitude(y)
    gray = data.mean(axis=0)
    chroma = np.sqrt(np.mean((data - gray[None]) ** 2, axis=0))
    planes = []
    for window in WINDOWS:
        mean = _local_mean(y, window)
        variance = np.maximum(_local_mean(y * y, window) - mean * mean, 0.0)
        planes.append(mean)
        planes.append(np.sqrt(variance))
        planes.extend(_local_mean(plane, window) for plane in (grad, data[0], data[1], data[2], chroma))
    return np.stack(planes)


def combine_features(feats_a: np.ndarray, feats_b: np.ndarray) -> np.ndarray:
    return np.concatenate([feats_a, feats_b, feats_a - feats_b])


def featurize_pair(image_a: ImageBuffer, image_b: ImageBuffer) -> np.ndarray:
    """42 x H x W pair features; see the module docstring for the order."""
    require_same_spatial(image_a, image_b)
    return combine_features(image_features(image_a), image_features(image_b))


def _pixels(features: np.ndarray) -> np.ndarray:
    return features.reshape(features.shape[0], -1).T


@dataclass(frozen=True)
class FeatureScaler:
    """Input standardization that commutes with swapping the two images.

    Both single-image blocks share one centre and scale per feature; the
    difference block is only divided by its root mean square, so the scaled
    vector of (B, A) is still the scaled vector of (A, B) with its first two
    blocks exchanged and the last one negated.
    """

    centre: np.ndarray
    scale: np.ndarray
    diff_scale: np.ndarray

    def __post_init__(self) -> None:
        for name in ("centre", "scale", "diff_scale"):
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != (SINGLE_FEATURES,) or not np.all(np.isfinite(value)):
                raise ValidationError(f"Feature scaler {name} must hold {SINGLE_FEATURES} finite values.")
            object.__setattr__(self, name, value)
        if np.any(self.scale <= 0) or np.any(self.diff_scale <= 0):
            raise ValidationError("Feature scales must be positive.")

    @classmethod
    def identity(cls) -> "FeatureScaler":
        return cls(np.zeros(SINGLE_FEATURES), np.ones(SINGLE_FEATURES), np.ones(SINGLE_FEATURES))

    def apply(self, rows: np.ndarray) -> np.ndarray:
        """Scale (n, 42) feature rows."""
        n = SINGLE_FEATURES
        return np.concatenate(
            [
                (rows[:, :n] - self.centre) / self.scale,
                (rows[:, n : 2 * n] - self.centre) / self.scale,
                rows[:, 2 * n :] / self.diff_scale,
            ],
            axis=1,
        )

    def to_dict(self) -> dict[str, list[float]]:
        return {
            "centre": self.centre.tolist(),
            "scale": self.scale.tolist(),
            "diff_scale": self.diff_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Any) -> "FeatureScaler":
        if not isinstance(data, dict):
            raise ValidationError("Feature scaler metadata must be a mapping.")
        try:
            return cls(np.asarray(data["centre"]), np.asarray(data["scale"]), np.asarray(data["diff_scale"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"Malformed feature scaler metadata: {exc}") from exc


def fit_feature_scaler(triplets: Sequence[Triplet], max_items: int = SCALER_ITEMS) -> FeatureScaler:
    """Statistics over both images of up to ``max_items`` evenly spaced triplets."""
    if not triplets:
        raise ValidationError("Cannot fit a feature scaler without triplets.")
    step = max(1, len(triplets) // max_items)
    singles, diffs = [], []
    for triplet in list(triplets)[::step][:max_items]:
        feats_a = image_features(triplet.test).reshape(SINGLE_FEATURES, -1)
        feats_b = image_features(triplet.reference).reshape(SINGLE_FEATURES, -1)
        singles.extend((feats_a, feats_b))
        diffs.append(feats_a - feats_b)
    single = np.concatenate(singles, axis=1)
    diff = np.concatenate(diffs, axis=1)
    scale = single.std(axis=1)
    diff_scale = np.sqrt(np.mean(diff * diff, axis=1))
    return FeatureScaler(
        centre=single.mean(axis=1),
        scale=np.where(scale > SCALE_FLOOR, scale, 1.0),
        diff_scale=np.where(diff_scale > SCALE_FLOOR, diff_scale, 1.0),
    )


# ---------------------------------------------------------------------------
# Model


class PredictorModel:
    """Per-pixel MLP 42 -> 64 -> 32 -> N with a sigmoid output, behind a fixed input scaler."""

    def __init__(self, net: Mlp, scaler: FeatureScaler | None = None) -> None:
        if net.sizes[0] != FEATURE_DIM or net.sizes[-1] != N_KINDS or net.output != "sigmoid":
            raise ValidationError(
                f"A predictor network must map {FEATURE_DIM} features to {N_KINDS} sigmoid outputs; "
                f"got sizes {net.sizes} with {net.output!r} output."
            )
        self.net = net
        self.scaler = scaler or FeatureScaler.identity()

    @classmethod
    def initialize(
        cls, rng: Rng, hidden: Sequence[int] = DEFAULT_HIDDEN, scaler: FeatureScaler | None = None
    ) -> "PredictorModel":
        return cls(Mlp.initialize([FEATURE_DIM, *hidden, N_KINDS], rng, output="sigmoid"), scaler)

    def predict_rows(self, rows: np.ndarray) -> np.ndarray:
        """(n, N) outputs for (n, 42) raw feature rows."""
        return self.net(self.scaler.apply(rows))

    def predict_features(self, features: np.ndarray) -> np.ndarray:
        """N x H x W output for a 42 x H x W feature raster."""
        _, height, width = features.shape
        out = self.predict_rows(_pixels(features))
        return out.T.reshape(N_KINDS, height, width)

    def predict(self, image_a: ImageBuffer, image_b: ImageBuffer) -> DistortionMap:
        return DistortionMap(self.predict_features(featurize_pair(image_a, image_b)))


def predict_map(model: MapPredictor, image_a: ImageBuffer, image_b: ImageBuffer) -> DistortionMap:
    """Y-hat = F(image_a, image_b); by convention image_a is the test image."""
    require_same_spatial(image_a, image_b)
    return model.predict(image_a, image_b)


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class PredictorTrainConfig:
    epochs: int = 10
    batch_size: int = 1024
    learning_rate: float = 0.05
    momentum: float = 0.9
    p_swap: float = 0.25
    beta: float = 0.05
    w_high: float = 10.0
    seed: int = 0
    mean_loss: bool = True
    lr_schedule: str = "constant"
    flip_probability: float = 0.0
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    standardize: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive.")
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be non-negative, got {self.learning_rate}.")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must lie in [0, 1), got {self.momentum}.")
        for name in ("p_swap", "flip_probability"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}.")
        if self.lr_schedule not in {"constant", "cosine"}:
            raise ValidationError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}.")


@dataclass
class PredictorTrainingResult:
    model: PredictorModel
    loss_trace: list[float] = field(default_factory=list)


def _pair_rows(
    triplet: Triplet, pixels: np.ndarray, flip: bool, config: PredictorTrainConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Sampled rows of F(A,B) inputs, F(B,A) inputs, target and weights."""
    feats_a = image_features(triplet.test)
    feats_b = image_features(triplet.reference)
    target = triplet.distortion_map.data
    weights = triplet.weight_map(config.beta, config.w_high)
    if flip:
        feats_a, feats_b = feats_a[:, :, ::-1], feats_b[:, :, ::-1]
        target, weights = target[:, :, ::-1], weights[:, :, ::-1]

    def rows(raster: np.ndarray) -> np.ndarray:
        return raster.reshape(raster.shape[0], -1)[:, pixels].T

    return (
        rows(combine_features(feats_a, feats_b)),
        rows(combine_features(feats_b, feats_a)),
        rows(target),
        rows(weights),
    )


def _start(triplets: Sequence[Triplet], config: PredictorTrainConfig) -> tuple[PredictorModel, Rng]:
    if not triplets:
        raise ValidationError("The training set is empty.")
    rng = Rng(config.seed)
    scaler = fit_feature_scaler(triplets) if config.standardize else None
    return PredictorModel.initialize(rng.spawn(), config.hidden, scaler), rng


def initial_predictor(
    triplets: Sequence[Triplet], config: PredictorTrainConfig = PredictorTrainConfig()
) -> PredictorModel:
    """The model ``train_predictor`` starts from, before any update."""
    model, _ = _start(triplets, config)
    return model


def train_predictor(triplets: Sequence[Triplet], config: PredictorTrainConfig = PredictorTrainConfig()) -> PredictorTrainingResult:
    """Momentum SGD on the anti-symmetric objective, one triplet per step.

    Every step starts from the forward orientation of the stored triplet and
    swaps it with probability ``p_swap``, so swaps recorded in a dataset never
    stack with the runtime ones. The pair is then optionally flipped
    horizontally, ``batch_size`` pixels are subsampled with replacement and
    the update uses both orderings.
    """
    model, rng = _start(triplets, config)
    optimizer = MomentumSgd(model.net.parameters(), config.learning_rate, config.momentum)
    sampler = rng.numpy_generator()
    trace: list[float] = []

    for epoch in range(config.epochs):
        lr = scheduled_rate(config.learning_rate, config.lr_schedule, epoch, config.epochs)
        order = sampler.permutation(len(triplets))
        total = 0.0
        for index in order:
            triplet = swap_augment(triplets[int(index)].unswapped(), rng, config.p_swap)
            flip = rng.bernoulli(config.flip_probability) if config.flip_probability > 0 else False
            pixel_count = triplet.reference.height * triplet.reference.width
            pixels = sampler.integers(0, pixel_count, size=config.batch_size)
            x_ab, x_ba, target, weights = _pair_rows(triplet, pixels, flip, config)

            out_ab, cache_ab = model.net.forward(model.scaler.apply(x_ab), keep_cache=True)
            out_ba, cache_ba = model.net.forward(model.scaler.apply(x_ba), keep_cache=True)
            loss = antisym_loss(out_ab, out_ba, target, weights, normalize=config.mean_loss)
            if not math.isfinite(loss.value):
                raise DivergenceError(f"Predictor loss became non-finite at epoch {epoch + 1}.")
            grads_ab, _ = model.net.backward(cache_ab, loss.gradients[0])
            grads_ba, _ = model.net.backward(cache_ba, loss.gradients[1])
            optimizer.step([ga + gb for ga, gb in zip(grads_ab, grads_ba)], lr)
            total += loss.value
        mean = total / len(triplets)
        if not math.isfinite(mean) or not model.net.all_finite():
            raise DivergenceError(f"Predictor training diverged at epoch {epoch + 1}.")
        trace.append(mean)
        logger.info("predictor epoch %d/%d loss=%.6f lr=%.5g", epoch + 1, config.epochs, mean, lr)
    return PredictorTrainingResult(model=model, loss_trace=trace)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class AntisymmetryReport:
    mean: float
    max: float
    per_channel: list[float]
    pairs: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean_residual": self.mean,
            "max_residual": self.max,
            "per_channel": {DistortionKind(j).name.lower(): v for j, v in enumerate(self.per_channel)},
            "pairs": self.pairs,
        }


def antisymmetry_residual(model: MapPredictor, image_a: ImageBuffer, image_b: ImageBuffer) -> np.ndarray:
    """|F(A,B) + F(B,A) - 1| per channel and pixel."""
    forward = predict_map(model, image_a, image_b).data
    reverse = predict_map(model, image_b, image_a).data
    return np.abs(forward + reverse - 1.0)


def eval_antisymmetry(model: MapPredictor, pairs: Sequence[tuple[ImageBuffer, ImageBuffer]]) -> AntisymmetryReport:
    if not pairs:
        raise ValidationError("No pairs to evaluate.")
    sums = np.zeros(N_KINDS)
    count = 0
    worst = 0.0
    for image_a, image_b in pairs:
        residual = antisymmetry_residual(model, image_a, image_b)
        sums += residual.reshape(residual.shape[0], -1).sum(axis=1)
        count += residual.shape[1] * residual.shape[2]
        worst = max(worst, float(residual.max()))
    per_channel = sums / count
    return AntisymmetryReport(
        mean=float(per_channel.mean()), max=worst, per_channel=[float(v) for v in per_channel], pairs=len(pairs)
    )


@dataclass(frozen=True)
class DisentanglementReport:
    confusion: np.ndarray
    accuracy: float
    regions: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "regions": self.regions,
            "kinds": [k.name.lower() for k in DistortionKind],
        }


def eval_disentanglement(
    model: MapPredictor, triplets: Sequence[Triplet], threshold: float = 0.2
) -> DisentanglementReport:
    """Region-level argmax of mean Y-hat against the true kind, for regions with alpha > threshold.

    Ties go to the lowest channel id.
    """
    confusion = np.zeros((N_KINDS, N_KINDS), dtype=np.int64)
    for triplet in triplets:
        forward = triplet.unswapped()
        prediction = predict_map(model, forward.test, forward.reference).data
        for assignment in forward.assignments:
            if assignment.alpha <= threshold:
                continue
            mask = forward.masks.masks[assignment.region]
            channel_means = prediction[:, mask].mean(axis=1)
            confusion[int(assignment.kind), int(np.argmax(channel_means))] += 1
    regions = int(confusion.sum())
    accuracy = float(np.trace(confusion) / regions) if regions else 0.0
    return DisentanglementReport(confusion=confusion, accuracy=accuracy, regions=regions)


@dataclass(frozen=True)
class MonotonicityResult:
    kind: DistortionKind
    correlation: float
    degenerate: bool
    alphas: list[float]
    values: list[float]


def centre_region_masks(height: int, width: int) -> MaskSet:
    """Central rectangle (half of each side) plus the background."""
    rect = {
        "type": "rect",
        "top": height // 4,
        "left": width // 4,
        "height": max(1, height // 2),
        "width": max(1, width // 2),
    }
    return partition_from_shapes([rect], height, width)


def eval_monotonicity(
    model: MapPredictor,
    base_image: ImageBuffer,
    kind: DistortionKind | int,
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    seed: int = 0,
    constants: OperatorConstants = DEFAULT_CONSTANTS,
) -> MonotonicityResult:
    """Spearman correlation between alpha and the mean in-region predicted channel."""
    kind = DistortionKind(kind)
    masks = centre_region_masks(base_image.height, base_image.width)
    region = masks.masks[0]
    values = []
    for alpha in alpha_grid:
        assignments = [RegionAssignment(region=0, kind=kind, alpha=float(alpha), seed=seed)]
        assignments += [RegionAssignment(region=k, kind=kind, alpha=0.0, seed=seed) for k in range(1, masks.count)]
        test, _ = synthesize(base_image, masks, assignments, constants)
        prediction = predict_map(model, test, base_image).data
        values.append(float(prediction[int(kind)][region].mean()))
    correlation, degenerate = srcc(list(alpha_grid), values)
    return MonotonicityResult(
        kind=kind,
        correlation=correlation,
        degenerate=degenerate,
        alphas=[float(a) for a in alpha_grid],
        values=values,
    )


# ---------------------------------------------------------------------------
# Checkpoints


def save_predictor(
    model: PredictorModel, directory: Path | str, force: bool = False, metadata: dict[str, Any] | None = None
) -> Path:
    meta = {
        "feature_schema_version": FEATURE_SCHEMA_VERSION,
        "features": list(FEATURE_NAMES),
        "input_scaling": model.scaler.to_dict(),
        **(metadata or {}),
    }
    return save_checkpoint(directory, CHECKPOINT_KIND, {"predictor": model.net}, meta, force)


def load_predictor(directory: Path | str) -> PredictorModel:
    networks, metadata = load_checkpoint(directory, CHECKPOINT_KIND)
    if metadata.get("feature_schema_version") != FEATURE_SCHEMA_VERSION:
        raise ValidationError(
            f"{directory} uses feature schema {metadata.get('feature_schema_version')}, "
            f"expected {FEATURE_SCHEMA_VERSION}."
        )
    if "predictor" not in networks:
        raise ValidationError(f"{directory} holds no predictor network.")
    scaling = metadata.get("input_scaling")
    scaler = FeatureScaler.from_dict(scaling) if scaling is not None else None
    return PredictorModel(networks["predictor"], scaler)
