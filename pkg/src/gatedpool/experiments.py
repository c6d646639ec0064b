"""Seed-replicated model comparisons on the synthetic benchmark.

The three reference variants share every setting except pooling and gating:

``gated_netvlad``  NetVLAD, Context Gating after pooling and after the MoE
``netvlad``        NetVLAD, no gating
``average_moe``    average pooling, no gating

All variants of one seed see the same data split, frame-sampling stream and
initialization streams for the blocks they share.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .config import Experiment
from .dataio import VideoDataset, generate_synthetic
from .ensemble import EnsembleSpec, greedy_select
from .model import GatingSettings, ModelConfig, build, predict_many
from .metrics import gap_at_20
from .training import TrainResult, train

VARIANTS: dict[str, tuple[str, GatingSettings]] = {
    "gated_netvlad": ("netvlad", GatingSettings("cg", "cg")),
    "netvlad": ("netvlad", GatingSettings("none", "none")),
    "average_moe": ("average", GatingSettings("none", "none")),
}


def variant_config(base: ModelConfig, variant: str, seed: int) -> ModelConfig:
    kind, gating = VARIANTS[variant]
    return dataclasses.replace(
        base, seed=seed, gating=dataclasses.replace(gating),
        pooling=dataclasses.replace(base.pooling, kind=kind))


@dataclass
class RunOutcome:
    variant: str
    seed: int
    gap: float
    predictions: np.ndarray
    seconds: float
    result: TrainResult


@dataclass
class Comparison:
    runs: dict[tuple[str, int], RunOutcome] = field(default_factory=dict)
    val_labels: list = field(default_factory=list)

    def gap(self, variant: str, seed: int) -> float:
        return self.runs[(variant, seed)].gap

    def seeds(self) -> list[int]:
        return sorted({s for _, s in self.runs})

    def mean_gap(self, variant: str) -> float:
        return float(np.mean([self.gap(variant, s) for s in self.seeds()]))

    def ensemble(self, seed: int, budget: int = 3) -> EnsembleSpec:
        """Greedy score-averaging ensemble over the variants trained with ``seed``."""
        cands = {v: r.predictions for (v, s), r in self.runs.items() if s == seed}
        return greedy_select(cands, self.val_labels, budget)

    def table(self) -> str:
        variants = list(dict.fromkeys(v for v, _ in self.runs))
        seeds = self.seeds()
        lines = [f"{'variant':<15}" + "".join(f"  seed {s:<3}" for s in seeds) + "     mean"]
        for v in variants:
            cells = "".join(f"  {self.gap(v, s):8.4f}" for s in seeds)
            lines.append(f"{v:<15}{cells}  {self.mean_gap(v):7.4f}")
        return "\n".join(lines)


def desk_split(exp: Experiment) -> tuple[VideoDataset, VideoDataset]:
    return generate_synthetic(exp.data).split(exp.train.val_fraction)


def compare(exp: Experiment, variants: Iterable[str] = tuple(VARIANTS),
            seeds: Iterable[int] = (0, 1, 2), data: tuple[VideoDataset, VideoDataset] | None = None,
            progress: Callable[[RunOutcome], None] | None = None) -> Comparison:
    """Train every ``variant`` for every seed on one dataset and record validation GAP."""
    train_set, val_set = data if data is not None else desk_split(exp)
    comp = Comparison(val_labels=[v.labels for v in val_set])
    for seed in seeds:
        for variant in variants:
            cfg = variant_config(exp.model, variant, seed)
            model = build(cfg)
            t0 = time.perf_counter()
            result = train(model, train_set, val_set,
                           dataclasses.replace(exp.train, seed=seed))
            preds = predict_many(model, val_set.videos, np.random.default_rng(seed + 1),
                                 exp.train.eval_passes)
            gap = gap_at_20(preds, comp.val_labels)
            outcome = RunOutcome(variant, seed, gap, preds, time.perf_counter() - t0, result)
            comp.runs[(variant, seed)] = outcome
            if progress is not None:
                progress(outcome)
    return comp
