"""Training objectives as hand-differentiated kernels, plus a gradient checker.

Every kernel returns a :class:`LossOutput` whose ``gradients`` tuple follows
the order of the differentiated arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable

import numpy as np

from .errors import DimensionMismatchError, ValidationError

COSINE_EPS = 1e-12


class DegenerateVectorError(ValidationError):
    """Raised when a cosine similarity is requested for a near-zero vector."""


@dataclass(frozen=True)
class LossOutput:
    value: float
    gradients: tuple[np.ndarray, ...]

    @property
    def gradient(self) -> np.ndarray:
        return self.gradients[0]


@dataclass(frozen=True)
class ScoringBatch:
    """Embeddings F (M x D) with tier labels, optionally scores and scene ids."""

    embeddings: np.ndarray
    tiers: np.ndarray
    scores: np.ndarray | None = None
    scenes: np.ndarray | None = None

    def __post_init__(self) -> None:
        embeddings = np.asarray(self.embeddings, dtype=np.float64)
        tiers = np.asarray(self.tiers, dtype=np.int64)
        if embeddings.ndim != 2 or tiers.shape != (embeddings.shape[0],):
            raise DimensionMismatchError(
                f"Embeddings {embeddings.shape} and tier labels {tiers.shape} disagree."
            )
        object.__setattr__(self, "embeddings", embeddings)
        object.__setattr__(self, "tiers", tiers)

    def validate_for_contrast(self) -> None:
        labels, counts = np.unique(self.tiers, return_counts=True)
        if len(labels) < 2:
            raise ValidationError(f"InfoNCE needs at least two tiers, got {labels.tolist()}.")
        for label, count in zip(labels, counts):
            if count < 2:
                raise ValidationError(f"Tier {int(label)} has a single item; InfoNCE has no positive for it.")


def _require_same_shape(**arrays: np.ndarray) -> None:
    shapes = {name: np.shape(a) for name, a in arrays.items()}
    if len(set(shapes.values())) > 1:
        raise DimensionMismatchError(f"Shape mismatch: {shapes}.")


def weighted_mse(
    pred: np.ndarray, target: np.ndarray, weights: np.ndarray, normalize: bool = False
) -> LossOutput:
    """sum W (pred - target)^2 with gradient 2 W (pred - target) wrt pred.

    ``normalize`` divides value and gradient by the element count.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    _require_same_shape(pred=pred, target=target, weights=weights)
    if np.any(weights < 0):
        raise ValidationError("Loss weights must be non-negative.")
    diff = pred - target
    value = float(np.sum(weights * diff * diff))
    grad = 2.0 * weights * diff
    if normalize and diff.size:
        value /= diff.size
        grad = grad / diff.size
    return LossOutput(value, (grad,))


def antisym_loss(
    f_ab: np.ndarray, f_ba: np.ndarray, y: np.ndarray, weights: np.ndarray, normalize: bool = False
) -> LossOutput:
    """||F_AB - Y||_W^2 + ||F_BA - (1 - Y)||_W^2; gradients wrt (F_AB, F_BA)."""
    y = np.asarray(y, dtype=np.float64)
    forward = weighted_mse(f_ab, y, weights, normalize)
    reverse = weighted_mse(f_ba, 1.0 - y, weights, normalize)
    return LossOutput(forward.value + reverse.value, (forward.gradient, reverse.gradient))


def hinge_rank(s_low: float, s_high: float, margin: float = 1.0) -> LossOutput:
    """max(0, margin - (s_high - s_low)); gradients wrt (s_low, s_high), 0 at the kink."""
    slack = margin - (float(s_high) - float(s_low))
    if slack > 0:
        return LossOutput(slack, (np.array(1.0), np.array(-1.0)))
    return LossOutput(0.0, (np.array(0.0), np.array(0.0)))


def consecutive_pairs(tiers: np.ndarray, scenes: np.ndarray) -> list[tuple[int, int]]:
    """(low, high) index pairs: same scene, adjacent tiers present in the batch."""
    tiers = np.asarray(tiers, dtype=np.int64)
    scenes = np.asarray(scenes, dtype=np.int64)
    pairs = []
    for scene in np.unique(scenes):
        members = np.flatnonzero(scenes == scene)
        ordered = members[np.argsort(tiers[members], kind="stable")]
        for low, high in zip(ordered, ordered[1:]):
            pairs.append((int(low), int(high)))
    return pairs


def consecutive_hinge(
    scores: np.ndarray, tiers: np.ndarray, scenes: np.ndarray, margin: float = 1.0
) -> LossOutput:
    """Mean hinge over same-scene consecutive-tier pairs; gradient wrt all scores."""
    scores = np.asarray(scores, dtype=np.float64)
    pairs = consecutive_pairs(tiers, scenes)
    grad = np.zeros_like(scores)
    if not pairs:
        return LossOutput(0.0, (grad,))
    total = 0.0
    for low, high in pairs:
        term = hinge_rank(scores[low], scores[high], margin)
        total += term.value
        grad[low] += term.gradients[0]
        grad[high] += term.gradients[1]
    return LossOutput(total / len(pairs), (grad / len(pairs),))


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= COSINE_EPS or nv <= COSINE_EPS:
        raise DegenerateVectorError("Cosine similarity is undefined for a near-zero vector.")
    return float(np.dot(u, v) / (nu * nv))


def _masked_softmax(logits: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-sum-exp and softmax restricted to ``mask``."""
    masked = np.where(mask, logits, -np.inf)
    peak = masked.max(axis=1, keepdims=True)
    exps = np.where(mask, np.exp(masked - peak), 0.0)
    sums = exps.sum(axis=1, keepdims=True)
    return (peak + np.log(sums))[:, 0], exps / sums


def infonce(batch: ScoringBatch, temperature: float = 0.07) -> LossOutput:
    """Tier-wise InfoNCE over cosine similarities; gradient wrt every embedding.

    Positives of an anchor are the other items of its tier, the denominator
    runs over every other item. The value is the mean over anchors.
    """
    if temperature <= 0:
        raise ValidationError(f"Temperature must be positive, got {temperature}.")
    batch.validate_for_contrast()
    feats = batch.embeddings
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    if np.any(norms <= COSINE_EPS):
        raise DegenerateVectorError("An embedding has near-zero norm; cosine similarity is undefined.")
    unit = feats / norms
    logits = unit @ unit.T / temperature
    count = feats.shape[0]
    others = ~np.eye(count, dtype=bool)
    positives = (batch.tiers[:, None] == batch.tiers[None, :]) & others

    lse_pos, p_pos = _masked_softmax(logits, positives)
    lse_all, p_all = _masked_softmax(logits, others)
    value = float(np.mean(lse_all - lse_pos))

    # d value / d sim_ij for the row-i occurrence of sim_ij.
    g_sim = (p_all - p_pos) / (count * temperature)
    g_unit = (g_sim + g_sim.T) @ unit
    g_feats = (g_unit - unit * np.sum(unit * g_unit, axis=1, keepdims=True)) / norms
    return LossOutput(value, (g_feats,))


def total_scoring_loss(
    hinge_terms: LossOutput,
    infonce_term: LossOutput,
    lambda_rank: float = 1.0,
    lambda_con: float = 0.5,
) -> LossOutput:
    """lambda_rank * hinge + lambda_con * InfoNCE.

    ``hinge_terms`` is the consecutive-pair aggregate (gradient wrt scores),
    ``infonce_term`` the contrastive term (gradient wrt embeddings); the
    result's gradients are (scores, embeddings), each scaled by its weight.
    """
    value = lambda_rank * hinge_terms.value + lambda_con * infonce_term.value
    gradients = tuple(lambda_rank * g for g in hinge_terms.gradients) + tuple(
        lambda_con * g for g in infonce_term.gradients
    )
    return LossOutput(value, gradients)


def finite_diff_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    eps: float = 1e-5,
    skip: Callable[[np.ndarray], bool] | None = None,
    piece: Callable[[np.ndarray], Hashable] | None = None,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``f`` returns (value, gradient). The relative error of one coordinate is
    |a - n| / max(|a|, |n|, 1e-8). ``skip`` may exclude points (e.g. near a kink).
    ``piece`` labels the smooth piece a point lies on; a coordinate whose two
    shifted points land on different pieces is left out.
    """
    x = np.array(x, dtype=np.float64)
    _, analytic = f(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise DimensionMismatchError(f"Gradient shape {analytic.shape} != point shape {x.shape}.")
    worst = 0.0
    flat = x.reshape(-1)
    grad_flat = analytic.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus, _ = f(x)
        upper = piece(x) if piece is not None else None
        flat[i] = original - eps
        minus, _ = f(x)
        lower = piece(x) if piece is not None else None
        flat[i] = original
        numeric = (plus - minus) / (2.0 * eps)
        if skip is not None and skip(x):
            continue
        if upper != lower:
            continue
        a = grad_flat[i]
        error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, error)
    return worst
