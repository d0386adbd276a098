"""Relational quality scorer trained from tier order alone.

Each image is summarized together with its predicted distortion map into a
67-value vector, embedded (67 -> 32 -> 16) and scored by a linear head
(16 -> 8 -> 1). Scores are unbounded and only their order is meaningful.
Tier 0 is the reference set and is never scored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .distortion_bank import N_KINDS
from .errors import DivergenceError, ValidationError
from .imagecore import DistortionMap, ImageBuffer, Rng, gradient_magnitude, luma, require_same_spatial
from .mlp import Mlp, MomentumSgd, load_checkpoint, save_checkpoint, scheduled_rate
from .objectives import (
    LossOutput,
    ScoringBatch,
    consecutive_hinge,
    infonce,
    total_scoring_loss,
)
from .triplet_synth import TierSet

if TYPE_CHECKING:
    from .predictor import MapPredictor

logger = logging.getLogger(__name__)

HIST_BINS = 8
HIST_EDGES = np.linspace(0.0, 1.0, HIST_BINS + 1)
SCORE_FEATURE_DIM = 3 * 2 + N_KINDS * 2 + N_KINDS * HIST_BINS + 1
EMBED_SIZES = (SCORE_FEATURE_DIM, 32, 16)
HEAD_SIZES = (16, 8, 1)
CHECKPOINT_KIND = "scorer"


def srcc(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, bool]:
    """Spearman correlation with average ranks for ties.

    Returns (value, degenerate); a constant input gives (0.0, True).
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"srcc needs two equal-length sequences, got {x.shape} and {y.shape}.")
    if x.size < 2:
        raise ValidationError("srcc needs at least two observations.")
    rx, ry = rankdata(x), rankdata(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        return 0.0, True
    return float(np.corrcoef(rx, ry)[0, 1]), False


# ---------------------------------------------------------------------------
# Features and model


def featurize_scoring_input(img: ImageBuffer, distortion_map: DistortionMap) -> np.ndarray:
    """RGB mean/std, map mean/std, per-channel 8-bin map histograms, mean luma gradient."""
    require_same_spatial(img, distortion_map)
    if img.channels != 3:
        raise ValidationError(f"Scoring needs an RGB image, got {img.channels} channels.")
    if distortion_map.n_types != N_KINDS:
        raise ValidationError(f"Expected a {N_KINDS}-channel map, got {distortion_map.n_types}.")
    pixels = img.data.reshape(3, -1)
    channels = distortion_map.data.reshape(N_KINDS, -1)
    histograms = [np.histogram(channel, bins=HIST_EDGES)[0] / channel.size for channel in channels]
    grad = gradient_magnitude(luma(img.data)).mean()
    return np.concatenate(
        [
            pixels.mean(axis=1),
            pixels.std(axis=1),
            channels.mean(axis=1),
            channels.std(axis=1),
            np.concatenate(histograms),
            [grad],
        ]
    )


class ScorerModel:
    def __init__(self, embed_net: Mlp, head_net: Mlp) -> None:
        if embed_net.sizes[0] != SCORE_FEATURE_DIM or embed_net.sizes[-1] != head_net.sizes[0]:
            raise ValidationError(
                f"Embedding {embed_net.sizes} and head {head_net.sizes} do not chain from {SCORE_FEATURE_DIM} inputs."
            )
        if head_net.sizes[-1] != 1 or embed_net.output != "identity" or head_net.output != "identity":
            raise ValidationError("The scorer needs linear outputs and a single score.")
        self.embed_net = embed_net
        self.head_net = head_net

    @classmethod
    def initialize(cls, rng: Rng) -> "ScorerModel":
        return cls(
            Mlp.initialize(EMBED_SIZES, rng.spawn(), output="identity"),
            Mlp.initialize(HEAD_SIZES, rng.spawn(), output="identity"),
        )

    @classmethod
    def zeros(cls) -> "ScorerModel":
        return cls(Mlp.zeros(EMBED_SIZES, output="identity"), Mlp.zeros(HEAD_SIZES, output="identity"))

    def parameters(self) -> list[np.ndarray]:
        return self.embed_net.parameters() + self.head_net.parameters()

    def embed(self, feats: np.ndarray) -> np.ndarray:
        """D-dimensional embedding; a 1-D input gives a 1-D result."""
        feats = np.asarray(feats, dtype=np.float64)
        out = self.embed_net(np.atleast_2d(feats))
        return out[0] if feats.ndim == 1 else out

    def score(self, feats: np.ndarray) -> float | np.ndarray:
        feats = np.asarray(feats, dtype=np.float64)
        out = self.head_net(self.embed_net(np.atleast_2d(feats)))[:, 0]
        return float(out[0]) if feats.ndim == 1 else out


def scoring_features(
    tiers: TierSet, predictor: "MapPredictor", scenes: Sequence[int] | None = None
) -> dict[tuple[int, int], np.ndarray]:
    """Features of every scored (tier, scene), each against its own scene's tier-0 image."""
    scenes = range(tiers.scene_count) if scenes is None else scenes
    feats: dict[tuple[int, int], np.ndarray] = {}
    for scene in scenes:
        reference = tiers.image(0, scene)
        for tier_id in tiers.tier_ids[1:]:
            image = tiers.image(tier_id, scene)
            feats[(tier_id, scene)] = featurize_scoring_input(image, predictor.predict(image, reference))
    return feats


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class ScorerTrainConfig:
    epochs: int = 20
    batch_scenes: int = 4
    learning_rate: float = 0.01
    momentum: float = 0.9
    margin: float = 1.0
    temperature: float = 0.07
    lambda_rank: float = 1.0
    lambda_con: float = 0.5
    seed: int = 0
    lr_schedule: str = "constant"

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_scenes < 1:
            raise ValidationError("epochs and batch_scenes must be positive.")
        if self.learning_rate < 0 or self.margin < 0:
            raise ValidationError("learning_rate and margin must be non-negative.")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must lie in [0, 1), got {self.momentum}.")
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}.")
        if self.lambda_rank < 0 or self.lambda_con < 0:
            raise ValidationError("Loss weights must be non-negative.")
        if self.lr_schedule not in {"constant", "cosine"}:
            raise ValidationError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}.")


@dataclass
class ScorerTrainingResult:
    model: ScorerModel
    loss_trace: list[float] = field(default_factory=list)


def _scene_batches(order: Sequence[int], size: int, need_pairs: bool) -> list[list[int]]:
    batches = [list(order[i : i + size]) for i in range(0, len(order), size)]
    if need_pairs and len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2].extend(batches.pop())
    return batches


def scoring_step(
    model: ScorerModel,
    features: np.ndarray,
    tiers: np.ndarray,
    scenes: np.ndarray,
    config: ScorerTrainConfig,
) -> tuple[LossOutput, list[np.ndarray]]:
    """Combined loss of one batch and its gradients wrt every scorer parameter."""
    embeddings, embed_cache = model.embed_net.forward(features, keep_cache=True)
    scores, head_cache = model.head_net.forward(embeddings, keep_cache=True)
    hinge = consecutive_hinge(scores[:, 0], tiers, scenes, config.margin)
    if config.lambda_con > 0:
        contrast = infonce(ScoringBatch(embeddings, tiers), config.temperature)
    else:
        contrast = LossOutput(0.0, (np.zeros_like(embeddings),))
    total = total_scoring_loss(hinge, contrast, config.lambda_rank, config.lambda_con)
    head_grads, grad_embeddings = model.head_net.backward(head_cache, total.gradients[0][:, None])
    embed_grads, _ = model.embed_net.backward(embed_cache, grad_embeddings + total.gradients[1])
    return total, embed_grads + head_grads


def train_scorer(
    tiers: TierSet,
    predictor: "MapPredictor",
    config: ScorerTrainConfig = ScorerTrainConfig(),
) -> ScorerTrainingResult:
    """Hinge on same-scene consecutive tiers plus tier-wise InfoNCE; the predictor stays frozen."""
    scored = tiers.tier_ids[1:]
    if len(scored) < 2:
        raise ValidationError(f"Scorer training needs at least two tiers below tier 0, got {len(scored)}.")
    if config.lambda_con > 0 and tiers.scene_count < 2:
        raise ValidationError("InfoNCE needs at least two scenes per tier.")
    rng = Rng(config.seed)
    model = ScorerModel.initialize(rng.spawn())
    optimizer = MomentumSgd(model.parameters(), config.learning_rate, config.momentum)
    sampler = rng.numpy_generator()
    cached = scoring_features(tiers, predictor)
    trace: list[float] = []

    for epoch in range(config.epochs):
        lr = scheduled_rate(config.learning_rate, config.lr_schedule, epoch, config.epochs)
        order = [int(s) for s in sampler.permutation(tiers.scene_count)]
        batches = _scene_batches(order, config.batch_scenes, config.lambda_con > 0)
        total = 0.0
        for batch in batches:
            keys = [(t, s) for s in batch for t in scored]
            features = np.stack([cached[key] for key in keys])
            tier_labels = np.array([t for t, _ in keys])
            scene_labels = np.array([s for _, s in keys])
            loss, grads = scoring_step(model, features, tier_labels, scene_labels, config)
            if not math.isfinite(loss.value):
                raise DivergenceError(f"Scorer loss became non-finite at epoch {epoch + 1}.")
            optimizer.step(grads, lr)
            total += loss.value
        mean = total / len(batches)
        trace.append(mean)
        logger.info("scorer epoch %d/%d loss=%.6f lr=%.5g", epoch + 1, config.epochs, mean, lr)
    return ScorerTrainingResult(model=model, loss_trace=trace)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class RankingReport:
    pairwise_accuracy: float
    mean_srcc: float
    per_scene_srcc: dict[int, float]
    per_tier_means: dict[int, float]
    pairs: int
    degenerate_scenes: list[int] = field(default_factory=list)
    embedding_separation: float | None = None

    def to_dict(self) -> dict[str, Any]:
        report: dict[str, Any] = {
            "pairwise_accuracy": self.pairwise_accuracy,
            "mean_srcc": self.mean_srcc,
            "per_scene_srcc": {str(k): v for k, v in sorted(self.per_scene_srcc.items())},
            "per_tier_means": {str(k): v for k, v in sorted(self.per_tier_means.items(), reverse=True)},
            "pairs": self.pairs,
            "degenerate_scenes": self.degenerate_scenes,
        }
        if self.embedding_separation is not None:
            report["embedding_separation"] = self.embedding_separation
        return report


def ranking_statistics(scores: Mapping[tuple[int, int], float]) -> RankingReport:
    """Ordering statistics of {(tier, scene): score}.

    Pairwise accuracy counts same-scene pairs of different tiers whose scores
    are strictly ordered like the tiers; SRCC is taken per scene against the
    tier id and averaged.
    """
    by_scene: dict[int, list[tuple[int, float]]] = {}
    by_tier: dict[int, list[float]] = {}
    for (tier, scene), value in scores.items():
        by_scene.setdefault(scene, []).append((tier, float(value)))
        by_tier.setdefault(tier, []).append(float(value))
    correct = 0
    pairs = 0
    per_scene: dict[int, float] = {}
    degenerate: list[int] = []
    for scene, entries in sorted(by_scene.items()):
        entries.sort()
        for i, (tier_i, score_i) in enumerate(entries):
            for tier_j, score_j in entries[i + 1 :]:
                if tier_i == tier_j:
                    continue
                pairs += 1
                correct += int(score_j > score_i)
        if len(entries) < 2:
            continue
        value, is_degenerate = srcc([t for t, _ in entries], [s for _, s in entries])
        per_scene[scene] = value
        if is_degenerate:
            degenerate.append(scene)
    if not pairs:
        raise ValidationError("No same-scene pairs of different tiers to rank.")
    return RankingReport(
        pairwise_accuracy=correct / pairs,
        mean_srcc=float(np.mean(list(per_scene.values()))),
        per_scene_srcc=per_scene,
        per_tier_means={tier: float(np.mean(values)) for tier, values in by_tier.items()},
        pairs=pairs,
        degenerate_scenes=degenerate,
    )


def embedding_separation(embeddings: np.ndarray, tiers: Sequence[int]) -> float:
    """Mean within-tier cosine similarity minus mean cross-tier cosine similarity."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(tiers)
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise ValidationError("An embedding has near-zero norm.")
    unit = embeddings / norms
    sims = unit @ unit.T
    others = ~np.eye(len(labels), dtype=bool)
    same = (labels[:, None] == labels[None, :]) & others
    cross = labels[:, None] != labels[None, :]
    if not same.any() or not cross.any():
        raise ValidationError("Embedding separation needs repeated tiers and at least two tiers.")
    return float(sims[same].mean() - sims[cross].mean())


def eval_ranking(model: ScorerModel, predictor: "MapPredictor", tiers: TierSet) -> RankingReport:
    """Score every scored tier of held-out scenes and summarize the ordering."""
    feats = scoring_features(tiers, predictor)
    keys = sorted(feats)
    matrix = np.stack([feats[key] for key in keys])
    scores = model.score(matrix)
    report = ranking_statistics({key: float(s) for key, s in zip(keys, np.atleast_1d(scores))})
    separation = None
    if tiers.scene_count >= 2:
        try:
            separation = embedding_separation(model.embed(matrix), [t for t, _ in keys])
        except ValidationError as exc:
            logger.warning("Embedding separation skipped: %s", exc)
    return RankingReport(
        pairwise_accuracy=report.pairwise_accuracy,
        mean_srcc=report.mean_srcc,
        per_scene_srcc=report.per_scene_srcc,
        per_tier_means=report.per_tier_means,
        pairs=report.pairs,
        degenerate_scenes=report.degenerate_scenes,
        embedding_separation=separation,
    )


# ---------------------------------------------------------------------------
# Checkpoints


def save_scorer(
    model: ScorerModel, directory: Path | str, force: bool = False, metadata: dict[str, Any] | None = None
) -> Path:
    return save_checkpoint(
        directory, CHECKPOINT_KIND, {"embed": model.embed_net, "head": model.head_net}, metadata, force
    )


def load_scorer(directory: Path | str) -> ScorerModel:
    networks, _ = load_checkpoint(directory, CHECKPOINT_KIND)
    try:
        return ScorerModel(networks["embed"], networks["head"])
    except KeyError as exc:
        raise ValidationError(f"{directory} is missing the {exc.args[0]!r} network.") from exc
