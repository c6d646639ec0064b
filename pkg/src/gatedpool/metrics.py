"""Global average precision over each video's top-20 predictions.

Every video contributes its 20 highest-scoring labels as
``(confidence, relevant)`` pairs.  All pairs are pooled, ranked by confidence
(ties: lower video index, then lower label index), and

    GAP = sum_i rel(i) * precision@i / P

where ``P = sum_v min(|labels_v|, 20)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TOP_K = 20


def topk(scores, k: int) -> list[tuple[int, float]]:
    """The ``k`` highest scores, ties broken by lower label index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")[:k]
    return [(int(i), float(scores[i])) for i in order]


def _as_label_sets(labels) -> list[set[int]]:
    if isinstance(labels, np.ndarray) and labels.ndim == 2:
        return [set(np.flatnonzero(row).tolist()) for row in labels]
    return [set(int(l) for l in ls) for ls in labels]


@dataclass
class GapAccumulator:
    k: int = TOP_K
    confidences: list[np.ndarray] = field(default_factory=list)
    relevant: list[np.ndarray] = field(default_factory=list)
    videos: list[np.ndarray] = field(default_factory=list)
    label_ids: list[np.ndarray] = field(default_factory=list)
    num_positives: int = 0
    num_videos: int = 0

    def add(self, scores, labels) -> None:
        """Add one video's score vector and its ground-truth label set."""
        scores = np.asarray(scores, dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise ValueError("predictions must be finite")
        labels = set(int(l) for l in labels)
        order = np.argsort(-scores, kind="stable")[:self.k]
        self.confidences.append(scores[order])
        self.relevant.append(np.isin(order, list(labels)))
        self.videos.append(np.full(len(order), self.num_videos, dtype=np.int64))
        self.label_ids.append(order.astype(np.int64))
        self.num_positives += min(len(labels), self.k)
        self.num_videos += 1

    def merge(self, other: GapAccumulator) -> GapAccumulator:
        """Append ``other``'s videos after this one's, preserving video order."""
        offset = self.num_videos
        self.confidences += other.confidences
        self.relevant += other.relevant
        self.videos += [v + offset for v in other.videos]
        self.label_ids += other.label_ids
        self.num_positives += other.num_positives
        self.num_videos += other.num_videos
        return self

    def value(self) -> float:
        if self.num_videos == 0:
            raise ValueError("GAP of an empty dataset is undefined")
        if self.num_positives == 0:
            return 0.0
        conf = np.concatenate(self.confidences)
        rel = np.concatenate(self.relevant)
        vid = np.concatenate(self.videos)
        lab = np.concatenate(self.label_ids)
        order = np.lexsort((lab, vid, -conf))
        rel = rel[order]
        hits = np.cumsum(rel)
        ranks = np.arange(1, len(rel) + 1)
        return float(np.sum((hits / ranks)[rel]) / self.num_positives)


def gap_at_20(predictions, labels, k: int = TOP_K) -> float:
    """GAP@k for a ``(V, L)`` score matrix and per-video label sets (or a multi-hot matrix)."""
    predictions = np.asarray(predictions, dtype=np.float64)
    label_sets = _as_label_sets(labels)
    if predictions.ndim != 2 or len(predictions) != len(label_sets):
        raise ValueError("predictions must be (V, L) with one label set per video")
    if len(predictions) == 0:
        raise ValueError("GAP of an empty dataset is undefined")
    acc = GapAccumulator(k)
    for scores, ls in zip(predictions, label_sets):
        acc.add(scores, ls)
    return acc.value()
