"""Finite-difference suites behind ``riqa verify-gradients``."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .distortion_bank import N_KINDS
from .errors import NumericalError, ValidationError
from .imagecore import Rng
from .mlp import ForwardCache
from .objectives import (
    LossOutput,
    ScoringBatch,
    antisym_loss,
    consecutive_hinge,
    consecutive_pairs,
    finite_diff_check,
    hinge_rank,
    infonce,
    weighted_mse,
)
from .predictor import FEATURE_DIM, PredictorModel
from .scorer import SCORE_FEATURE_DIM, ScorerModel, ScorerTrainConfig, scoring_step

logger = logging.getLogger(__name__)

KERNEL_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4
MODULES = ("objectives", "predictor", "scorer")


class GradientCheckError(NumericalError):
    """Raised when an analytic gradient disagrees with finite differences."""


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _parameter_check(
    params: list[np.ndarray],
    loss_and_grads: Callable[[], tuple[float, list[np.ndarray]]],
    exclude: frozenset[int] = frozenset(),
    pattern: Callable[[], bytes] | None = None,
    eps: float = 1e-5,
) -> float:
    """Check every parameter array in place, perturbing one array at a time.

    ``pattern`` fingerprints the current linear piece (hidden-unit signs,
    active hinge pairs); coordinates whose shifted points straddle a kink
    are left out.
    """
    worst = 0.0
    for index, param in enumerate(params):
        if index in exclude:
            continue
        original = param.copy()

        def f(x: np.ndarray, index: int = index, param: np.ndarray = param) -> tuple[float, np.ndarray]:
            param[...] = x
            value, grads = loss_and_grads()
            return value, grads[index]

        def piece(x: np.ndarray, param: np.ndarray = param) -> bytes:
            param[...] = x
            return pattern() if pattern is not None else b""

        worst = max(worst, finite_diff_check(f, original, eps=eps, piece=piece))
        param[...] = original
    return worst


def _signs(*caches: ForwardCache | None) -> list[np.ndarray]:
    """Signs of every hidden pre-activation (the output layer has no kink)."""
    return [(z > 0).ravel() for cache in caches if cache is not None for z in cache.pre_activations[:-1]]


def _fingerprint(parts: list[np.ndarray]) -> bytes:
    return np.packbits(np.concatenate(parts).astype(bool)).tobytes()


def check_objectives(seed: int = 0) -> list[CheckResult]:
    gen = Rng(seed).numpy_generator()
    shape = (N_KINDS, 4, 4)
    target = gen.uniform(0.0, 1.0, shape)
    weights = np.where(gen.uniform(size=shape) < 0.3, 10.0, 1.0)
    results = [
        CheckResult(
            "weighted_mse",
            finite_diff_check(
                lambda x: _pair(weighted_mse(x, target, weights)), gen.uniform(0.0, 1.0, shape)
            ),
            KERNEL_TOLERANCE,
        )
    ]

    f_ba = gen.uniform(0.0, 1.0, shape)
    f_ab = gen.uniform(0.0, 1.0, shape)
    results.append(
        CheckResult(
            "antisym_loss[F_AB]",
            finite_diff_check(lambda x: _pair(antisym_loss(x, f_ba, target, weights), 0), f_ab),
            KERNEL_TOLERANCE,
        )
    )
    results.append(
        CheckResult(
            "antisym_loss[F_BA]",
            finite_diff_check(lambda x: _pair(antisym_loss(f_ab, x, target, weights), 1), f_ba),
            KERNEL_TOLERANCE,
        )
    )

    def hinge(x: np.ndarray) -> tuple[float, np.ndarray]:
        out = hinge_rank(x[0], x[1], 1.0)
        return out.value, np.array([out.gradients[0], out.gradients[1]], dtype=np.float64)

    # 0.5 away from the kink on the active side.
    results.append(CheckResult("hinge_rank", finite_diff_check(hinge, np.array([0.3, 0.8])), KERNEL_TOLERANCE))

    # Two tiers per scene so every score sits in exactly one pair.
    hinge_tiers = np.repeat([-1, -2], 4)
    hinge_scenes = np.tile(np.arange(4), 2)
    scores = gen.normal(0.0, 0.2, size=8)
    results.append(
        CheckResult(
            "consecutive_hinge",
            finite_diff_check(
                lambda x: _pair(consecutive_hinge(x, hinge_tiers, hinge_scenes, 1.0)),
                scores,
                skip=lambda x: _near_kink(x, hinge_tiers, hinge_scenes, 1.0),
            ),
            KERNEL_TOLERANCE,
        )
    )

    tiers = np.repeat([-1, -2, -3], 3)
    embeddings = gen.normal(size=(9, 5))
    results.append(
        CheckResult(
            "infonce",
            finite_diff_check(lambda x: _pair(infonce(ScoringBatch(x, tiers), 0.07)), embeddings),
            KERNEL_TOLERANCE,
        )
    )
    return results


def _pair(out: LossOutput, index: int = 0) -> tuple[float, np.ndarray]:
    return out.value, out.gradients[index]


def _near_kink(scores: np.ndarray, tiers: np.ndarray, scenes: np.ndarray, margin: float, eps: float = 1e-4) -> bool:
    return any(abs(margin - (scores[high] - scores[low])) < eps for low, high in consecutive_pairs(tiers, scenes))


def check_predictor(seed: int = 0) -> list[CheckResult]:
    """Backprop of the anti-symmetric loss through a 42 -> 8 -> 4 -> 6 network."""
    rng = Rng(seed)
    model = PredictorModel.initialize(rng.spawn(), hidden=(8, 4))
    gen = rng.numpy_generator()
    x_ab = gen.normal(0.0, 1.0, size=(16, FEATURE_DIM))
    x_ba = gen.normal(0.0, 1.0, size=(16, FEATURE_DIM))
    target = gen.uniform(0.0, 1.0, size=(16, N_KINDS))
    weights = np.where(gen.uniform(size=(16, N_KINDS)) < 0.3, 10.0, 1.0)
    net = model.net

    def loss_and_grads() -> tuple[float, list[np.ndarray]]:
        out_ab, cache_ab = net.forward(x_ab, keep_cache=True)
        out_ba, cache_ba = net.forward(x_ba, keep_cache=True)
        loss = antisym_loss(out_ab, out_ba, target, weights)
        grads_ab, _ = net.backward(cache_ab, loss.gradients[0])
        grads_ba, _ = net.backward(cache_ba, loss.gradients[1])
        return loss.value, [a + b for a, b in zip(grads_ab, grads_ba)]

    def pattern() -> bytes:
        return _fingerprint(_signs(net.forward(x_ab, True)[1], net.forward(x_ba, True)[1]))

    return [
        CheckResult(
            "predictor_backprop", _parameter_check(net.parameters(), loss_and_grads, pattern=pattern), MODEL_TOLERANCE
        )
    ]


def check_scorer(seed: int = 0) -> list[CheckResult]:
    """Hinge and InfoNCE paths through embedding and head on a 3-tier x 2-scene batch."""
    rng = Rng(seed)
    model = ScorerModel.initialize(rng.spawn())
    gen = rng.numpy_generator()
    features = gen.uniform(0.0, 1.0, size=(6, SCORE_FEATURE_DIM))
    tiers = np.array([-1, -2, -3, -1, -2, -3])
    scenes = np.array([0, 0, 0, 1, 1, 1])
    pairs = consecutive_pairs(tiers, scenes)
    # The ranking loss ignores a shared score offset, so the head output bias never gets a gradient.
    offset_bias = frozenset({len(model.parameters()) - 1})

    def pattern(margin: float) -> bytes:
        embeddings, embed_cache = model.embed_net.forward(features, keep_cache=True)
        scores, head_cache = model.head_net.forward(embeddings, keep_cache=True)
        active = np.array([margin - (scores[high, 0] - scores[low, 0]) > 0 for low, high in pairs])
        return _fingerprint([*_signs(embed_cache, head_cache), active])

    results = []
    # Hinge alone is piecewise linear in each parameter: central differences
    # are exact on a piece at any step, and a wide one damps rounding noise.
    for name, config, eps in (
        ("scorer_hinge", ScorerTrainConfig(lambda_con=0.0), 1e-3),
        ("scorer_infonce", ScorerTrainConfig(lambda_rank=0.0), 1e-5),
        ("scorer_total", ScorerTrainConfig(), 1e-5),
    ):

        def loss_and_grads(config: ScorerTrainConfig = config) -> tuple[float, list[np.ndarray]]:
            loss, grads = scoring_step(model, features, tiers, scenes, config)
            return loss.value, grads

        def current_pattern(margin: float = config.margin) -> bytes:
            return pattern(margin)

        error = _parameter_check(model.parameters(), loss_and_grads, offset_bias, current_pattern, eps)
        results.append(CheckResult(name, error, MODEL_TOLERANCE))
    return results


def run_checks(module: str | None = None, seed: int = 0) -> list[CheckResult]:
    """Run one suite (or all) and log each kernel's worst relative error."""
    suites = {"objectives": check_objectives, "predictor": check_predictor, "scorer": check_scorer}
    if module is not None and module not in suites:
        raise ValidationError(f"Unknown gradient suite {module!r}; choose from {', '.join(MODULES)}.")
    names = [module] if module else list(MODULES)
    results: list[CheckResult] = []
    for name in names:
        for result in suites[name](seed):
            logger.info("%s max relative error %.3e (tolerance %.0e)", result.name, result.max_error, result.tolerance)
            results.append(result)
    return results


def require_passing(results: list[CheckResult]) -> None:
    failed = [r for r in results if not r.passed]
    if failed:
        names = ", ".join(f"{r.name} ({r.max_error:.3e})" for r in failed)
        raise GradientCheckError(f"Gradient check failed for {names}.")


__all__ = [
    "CheckResult",
    "GradientCheckError",
    "check_objectives",
    "check_predictor",
    "check_scorer",
    "require_passing",
    "run_checks",
]
