"""Score-averaging ensembles with greedy forward selection on validation GAP."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .metrics import gap_at_20
from .model import VideoClassifier, predict_many


class VocabularyError(ValueError):
    """Ensemble members disagree on the label vocabulary."""


@dataclass
class EnsembleSpec:
    members: list[str]
    weights: list[float] = field(default_factory=list)
    selection_log: list[tuple[str, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        if not self.weights:
            self.weights = [1.0 / len(self.members)] * len(self.members)
        if len(self.weights) != len(self.members):
            raise ValueError("one weight per member is required")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("ensemble weights must sum to 1")

    def to_json(self) -> str:
        return json.dumps({"members": [{"path": m, "weight": w}
                                       for m, w in zip(self.members, self.weights)],
                           "selection_log": [{"member": m, "gap": g}
                                             for m, g in self.selection_log]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> EnsembleSpec:
        d = json.loads(text)
        return cls([m["path"] for m in d["members"]], [m["weight"] for m in d["members"]],
                   [(e["member"], e["gap"]) for e in d.get("selection_log", [])])

    def log_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["size", "member", "gap"])
        for i, (m, g) in enumerate(self.selection_log, 1):
            writer.writerow([i, m, repr(g)])
        return out.getvalue()

    def save(self, path, log_path=None) -> None:
        Path(path).write_text(self.to_json())
        if log_path is not None:
            Path(log_path).write_text(self.log_csv())


def average_scores(scores: Sequence[np.ndarray], weights: Sequence[float] | None = None
                   ) -> np.ndarray:
    """Weighted mean of per-member score arrays sharing one label axis."""
    scores = [np.asarray(s, dtype=np.float64) for s in scores]
    if not scores:
        raise ValueError("no member scores given")
    if any(s.shape != scores[0].shape for s in scores):
        raise VocabularyError("member score arrays differ in shape")
    weights = np.full(len(scores), 1.0 / len(scores)) if weights is None else np.asarray(weights)
    return np.einsum("m,m...->...", weights, np.stack(scores))


def ensemble_predict(members: Sequence[VideoClassifier], seq, weights=None, seed: int = 0,
                     passes: int = 1) -> np.ndarray:
    """Weighted mean of member probabilities for one video (or a list of videos)."""
    labels = {m.config.num_labels for m in members}
    if len(labels) != 1:
        raise VocabularyError(f"members predict different label counts {sorted(labels)}")
    videos = seq if isinstance(seq, (list, tuple)) else [seq]
    outs = [predict_many(m, videos, np.random.default_rng(seed), passes) for m in members]
    avg = average_scores(outs, weights)
    return avg if isinstance(seq, (list, tuple)) else avg[0]


def greedy_select(candidates: Mapping[str, np.ndarray], labels, budget: int) -> EnsembleSpec:
    """Forward selection without replacement, maximizing ensemble validation GAP.

    ``candidates`` maps a member name to its validation score matrix.  Starts
    from the best single candidate and stops at ``budget`` members or when no
    remaining candidate strictly improves GAP.
    """
    if not candidates:
        raise ValueError("no candidates")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    labels = list(labels)
    if not labels:
        raise ValueError("validation set is empty")
    shapes = {np.asarray(c).shape for c in candidates.values()}
    if len(shapes) != 1:
        raise VocabularyError(f"candidate score matrices differ in shape: {sorted(shapes)}")
    names = list(candidates)
    scores = {n: np.asarray(candidates[n], dtype=np.float64) for n in names}
    single = {n: gap_at_20(scores[n], labels) for n in names}
    first = max(names, key=lambda n: (single[n], -names.index(n)))
    chosen, log = [first], [(first, single[first])]
    total = scores[first].copy()
    while len(chosen) < budget:
        best_name, best_gap = None, log[-1][1]
        for n in names:
            if n in chosen:
                continue
            g = gap_at_20((total + scores[n]) / (len(chosen) + 1), labels)
            if g > best_gap:
                best_name, best_gap = n, g
        if best_name is None:
            break
        chosen.append(best_name)
        total += scores[best_name]
        log.append((best_name, best_gap))
    return EnsembleSpec(chosen, selection_log=log)
