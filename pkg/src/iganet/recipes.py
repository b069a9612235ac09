"""Fixed experiment recipes on synthetic data, with their regression thresholds.

The scripts in ``scripts/`` and the acceptance tests both run these, so a
change to a recipe shows up in both places.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ablation
from .data import synth_generate
from .metrics import mpjpe
from .model import ModelConfig
from .skeleton import SkeletonGraph, build_h36m_17
from .training import TrainConfig, evaluate, train

# Regression constants.
OVERFIT_MAX_MPJPE_MM = 5.0
OVERFIT_MAX_STEPS = 2000
OVERFIT_MAX_SECONDS = 300.0
GENERALIZATION_MIN_FACTOR = 3.0

# Memorization: a per-step decay (one step per epoch at batch 64) takes lr from
# 5e-3 to about 2.5e-4 over the 2000-step budget. Flip augmentation is off
# because it doubles the set to memorize.
OVERFIT_TRAIN = TrainConfig(
    epochs=OVERFIT_MAX_STEPS, batch_size=64, lr0=5e-3, lr_decay=0.9985, flip_prob=0.0,
    eval_every=OVERFIT_MAX_STEPS, seed=0,
)
GENERALIZATION_TRAIN = TrainConfig(epochs=30, batch_size=64, lr0=3e-3, lr_decay=0.95, eval_every=30, seed=0)
ABLATION_MODEL = dict(channels=32, heads=4, num_blocks=2)
ABLATION_TRAIN = TrainConfig(epochs=15, batch_size=64, lr0=3e-3, lr_decay=0.95, eval_every=15, seed=0)


@dataclass
class RecipeResult:
    metric_mm: float
    seconds: float
    steps: int
    extra: dict = field(default_factory=dict)


def overfit(n: int = 64, seed: int = 0, graph: SkeletonGraph | None = None) -> RecipeResult:
    """Train the small config on ``n`` samples and report training-set MPJPE (no flip-merge)."""
    graph = graph or build_h36m_17()
    ds = synth_generate(n, seed, graph)
    t0 = time.perf_counter()
    res = train(ds, ModelConfig.small(), OVERFIT_TRAIN, graph, flip_test=False)
    secs = time.perf_counter() - t0
    final = evaluate(ds, res.last_params, ModelConfig.small(), graph, flip_test=False).mpjpe_mm
    return RecipeResult(final, secs, res.steps, {"history": res.history})


def generalization(n_train: int = 512, n_eval: int = 128, graph: SkeletonGraph | None = None) -> RecipeResult:
    """Held-out MPJPE after training on independent synthetic poses, against predicting zeros."""
    graph = graph or build_h36m_17()
    tr, te = synth_generate(n_train, 1, graph), synth_generate(n_eval, 2, graph)
    t0 = time.perf_counter()
    res = train(tr, ModelConfig.small(), GENERALIZATION_TRAIN, graph, flip_test=False)
    secs = time.perf_counter() - t0
    model_mm = evaluate(te, res.last_params, ModelConfig.small(), graph).mpjpe_mm
    zero_mm = mpjpe(np.zeros_like(te.targets()), te.targets())
    return RecipeResult(model_mm, secs, res.steps, {"zero_mm": zero_mm, "factor": zero_mm / model_mm})


def ablation_grid(n_train: int = 512, n_eval: int = 64, graph: SkeletonGraph | None = None):
    """The 7-row design grid at desk scale; returns (rows, table text)."""
    graph = graph or build_h36m_17()
    tr, te = synth_generate(n_train, 3, graph), synth_generate(n_eval, 4, graph)
    rows = ablation.run_grid(ablation.load_grid("design"), tr, te, ModelConfig(**ABLATION_MODEL),
                             ABLATION_TRAIN, graph)
    return rows, ablation.format_table(rows)
