"""Desk-scale training experiments for the predictor and the scorer.

Both experiments train on seeded synthetic data, evaluate on a disjoint
held-out set and report each quality gate with a ``passed`` flag.
"""

from __future__ import annotations

import logging
from typing import Any

import numpy as np

from .config import Config
from .distortion_bank import DistortionKind
from .imagecore import Rng
from .predictor import (
    PredictorModel,
    eval_antisymmetry,
    eval_disentanglement,
    eval_monotonicity,
    initial_predictor,
    train_predictor,
)
from .scorer import ScorerModel, eval_ranking, train_scorer
from .triplet_synth import build_tier_schedule, generate_triplets, procedural_scene

logger = logging.getLogger(__name__)

HELD_OUT_TRIPLETS = 100
HELD_OUT_SCENES = 4
MONOTONICITY_BASES = 5
MAX_RESIDUAL = 0.15
MIN_DISENTANGLEMENT = 0.60
MIN_MONOTONICITY = 0.8
MIN_RANKING = 0.9


def predictor_experiment(cfg: Config) -> tuple[dict[str, Any], PredictorModel]:
    """Train on ``synth.count`` triplets and evaluate on triplets from the next master seed."""
    seed = cfg.synth.master_seed
    train_set = generate_triplets(cfg.synth.count, seed, cfg.engine, cfg.synth.size)
    held_out = generate_triplets(HELD_OUT_TRIPLETS, seed + 1, cfg.engine, cfg.synth.size)
    pairs = [(t.test, t.reference) for t in held_out]

    before = eval_antisymmetry(initial_predictor(train_set, cfg.predictor), pairs)
    result = train_predictor(train_set, cfg.predictor)
    model = result.model
    after = eval_antisymmetry(model, pairs)
    logger.info("antisymmetry residual %.4f -> %.4f", before.mean, after.mean)

    disentanglement = eval_disentanglement(model, held_out)
    bases = [t.reference for t in held_out[:MONOTONICITY_BASES]]
    per_kind = {
        kind.name.lower(): float(
            np.mean([eval_monotonicity(model, b, kind, constants=cfg.engine.constants).correlation for b in bases])
        )
        for kind in DistortionKind
    }
    monotonicity = float(np.mean(list(per_kind.values())))
    summary = {
        "antisymmetry": {
            "untrained": before.mean,
            "trained": after.mean,
            "passed": after.mean <= MAX_RESIDUAL and after.mean < before.mean,
        },
        "disentanglement": {
            "accuracy": disentanglement.accuracy,
            "passed": disentanglement.accuracy >= MIN_DISENTANGLEMENT,
        },
        "monotonicity": {"per_kind": per_kind, "mean": monotonicity, "passed": monotonicity >= MIN_MONOTONICITY},
        "loss_trace": result.loss_trace,
    }
    return summary, model


def scorer_experiment(cfg: Config, predictor: PredictorModel) -> dict[str, Any]:
    """Train on all but the last scenes of a procedural tier set."""
    settings = cfg.scorer
    seed = cfg.synth.master_seed
    scene_rng = Rng(seed)
    bases = [procedural_scene(settings.size, settings.size, scene_rng.next_u64()) for _ in range(settings.scenes)]
    tiers = build_tier_schedule(bases, settings.schedule, Rng(seed), constants=cfg.engine.constants)
    split = settings.scenes - HELD_OUT_SCENES
    train_tiers = tiers.select_scenes(range(split))
    held_out = tiers.select_scenes(range(split, settings.scenes))

    before = eval_ranking(ScorerModel.initialize(Rng(settings.train.seed).spawn()), predictor, held_out)
    result = train_scorer(train_tiers, predictor, settings.train)
    after = eval_ranking(result.model, predictor, held_out)
    separation_before = before.embedding_separation or 0.0
    separation_after = after.embedding_separation or 0.0
    return {
        "ranking": {
            "pairwise_accuracy": after.pairwise_accuracy,
            "mean_srcc": after.mean_srcc,
            "passed": after.pairwise_accuracy >= MIN_RANKING and after.mean_srcc >= MIN_RANKING,
        },
        "embedding_separation": {
            "untrained": separation_before,
            "trained": separation_after,
            "passed": separation_after > separation_before,
        },
        "loss_trace": result.loss_trace,
    }


def run_experiments(cfg: Config) -> dict[str, Any]:
    """Both experiments in order; ``passed`` is true when every gate holds."""
    predictor_summary, model = predictor_experiment(cfg)
    scorer_summary = scorer_experiment(cfg, model)
    gates = [
        predictor_summary["antisymmetry"]["passed"],
        predictor_summary["disentanglement"]["passed"],
        predictor_summary["monotonicity"]["passed"],
        scorer_summary["ranking"]["passed"],
        scorer_summary["embedding_separation"]["passed"],
    ]
    return {"predictor": predictor_summary, "scorer": scorer_summary, "passed": all(gates)}
