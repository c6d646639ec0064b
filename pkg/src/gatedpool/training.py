"""Cross-entropy training with Adam, exponential decay and global-norm clipping."""

from __future__ import annotations

import datetime
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import VideoDataset
from .metrics import gap_at_20
from .model import PackedFrames, VideoClassifier, predict_many
from .tensor import Tensor, clip, log

PRED_EPS = 1e-6
LOG_COLUMNS = ("step", "samples", "lr", "train_loss", "val_gap")


class NumericError(RuntimeError):
    """Training produced a non-finite value."""


@dataclass
class TrainConfig:
    lr: float = 0.0002
    decay: float = 0.8
    decay_interval: int = 4_000_000
    staircase: bool = False
    batch_size: int = 100
    clip_norm: float = 1.0
    epochs: int = 1
    steps: int = 0  # overrides epochs when > 0
    eval_every: int = 0  # 0: once per epoch
    val_fraction: float = 0.1
    eval_passes: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("train.lr must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("train.decay must lie in (0, 1]")
        if self.decay_interval <= 0:
            raise ValueError("train.decay_interval must be positive")
        if self.batch_size < 2:
            raise ValueError("train.batch_size must be >= 2 (batch normalization)")
        if self.clip_norm <= 0:
            raise ValueError("train.clip_norm must be positive")
        if self.epochs < 1 and self.steps < 1:
            raise ValueError("train needs epochs >= 1 or steps >= 1")


def lr_at(samples_seen: int, config: TrainConfig) -> float:
    """``lr * decay ** (samples / interval)``, floored exponent when staircase."""
    if samples_seen < 0:
        raise ValueError("samples_seen must be >= 0")
    exponent = samples_seen / config.decay_interval
    if config.staircase:
        exponent = math.floor(exponent)
    return config.lr * config.decay ** exponent


def bce_loss(pred: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy over every label (and batch row).

    ``labels`` is a multi-hot array broadcastable to ``pred``.
    """
    if not np.all(np.isfinite(pred.data)):
        raise NumericError("non-finite prediction passed to the loss")
    y = np.asarray(labels, dtype=pred.dtype)
    p = clip(pred, PRED_EPS, 1.0 - PRED_EPS)
    terms = log(p) * y + log(1.0 - p) * (1.0 - y)
    return -terms.mean()


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> None:
    """In-place bias-corrected Adam update of every array in ``params``."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float
                   ) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * np.asarray(scale, dtype=g.dtype) for k, g in grads.items()}, norm


def evaluate(model: VideoClassifier, dataset: VideoDataset, seed: int = 0,
             passes: int = 1) -> float:
    was_training = model.training
    model.eval()
    try:
        preds = predict_many(model, dataset.videos, np.random.default_rng(seed), passes)
    finally:
        if was_training:
            model.train()
    return gap_at_20(preds, [v.labels for v in dataset])


def _first_non_finite(model: VideoClassifier, loss: float) -> str:
    for name, arr in model.activations.items():
        if not np.all(np.isfinite(arr)):
            return f"activation {name!r}"
    for name, t in model.parameters().items():
        if not np.all(np.isfinite(t.data)):
            return f"parameter {name!r}"
    return f"loss ({loss})"


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    best_gap: float = -1.0
    best_step: int = 0
    samples_seen: int = 0

    def log_csv(self, started: str | None = None) -> str:
        out = io.StringIO()
        out.write(_log_header(started))
        for row in self.log:
            out.write(_log_row(row))
        return out.getvalue()


def _log_header(started: str | None) -> str:
    # the timestamp is confined to this first line
    return f"# training log started {started or 'unknown'}\n" + ",".join(LOG_COLUMNS) + "\n"


def _log_row(row: dict) -> str:
    return ",".join(repr(row[c]) for c in LOG_COLUMNS) + "\n"


def train(model: VideoClassifier, train_set: VideoDataset, val_set: VideoDataset,
          config: TrainConfig, log_path=None, checkpoint_path=None) -> TrainResult:
    """Train ``model`` in place and leave it holding the best-validation-GAP weights.

    Validation runs every ``eval_every`` steps (default once per epoch) and at
    the end.  Given the same seed and data, the log is reproduced exactly.
    """
    config.validate()
    if len(train_set) < 2:
        raise ValueError("training set needs at least two videos")
    if len(val_set) == 0:
        raise ValueError("validation set is empty")
    train_ids = {v.video_id for v in train_set}
    if any(v.video_id in train_ids for v in val_set):
        raise ValueError("training and validation sets overlap")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")

    rng = np.random.default_rng(config.seed)
    packed = PackedFrames(train_set)
    y = train_set.label_matrix().astype(model.dtype)
    n_frames = model.config.pooling.sample_count
    B = min(config.batch_size, len(train_set))
    per_epoch = max(1, len(train_set) // B)
    total = config.steps if config.steps > 0 else config.epochs * per_epoch
    eval_every = config.eval_every or per_epoch

    params = model.parameters()
    state = AdamState()
    result = TrainResult()
    best_state = None
    running, count = 0.0, 0
    order = np.empty(0, dtype=np.int64)
    if log_path is not None:
        Path(log_path).write_text(_log_header(started))
    model.train()
    for step in range(1, total + 1):
        pos = ((step - 1) % per_epoch) * B
        if pos == 0:
            order = rng.permutation(len(train_set))
        idx = order[pos:pos + B]
        lr = lr_at(result.samples_seen, config)
        vis, aud = packed.sample(idx, n_frames, rng)
        model.zero_grad()
        pred = model(vis, aud)
        try:
            loss = bce_loss(pred, y[idx])
        except NumericError as exc:
            raise NumericError(f"step {step}: non-finite {_first_non_finite(model, np.nan)}") from exc
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"step {step}: non-finite {_first_non_finite(model, value)}")
        loss.backward()
        grads = {k: t.grad for k, t in params.items()}
        grads, _ = clip_gradients(grads, config.clip_norm)
        adam_step({k: t.data for k, t in params.items()}, grads, state, lr)
        result.samples_seen += len(idx)
        running += value
        count += 1

        if step % eval_every == 0 or step == total:
            gap = evaluate(model, val_set, seed=config.seed + 1, passes=config.eval_passes)
            result.log.append({"step": step, "samples": result.samples_seen, "lr": lr,
                               "train_loss": running / count, "val_gap": gap})
            running, count = 0.0, 0
            if gap > result.best_gap:
                result.best_gap, result.best_step = gap, step
                best_state = model.state_dict()
                if checkpoint_path is not None:
                    model.save(checkpoint_path)
            if log_path is not None:
                with open(log_path, "a") as fh:
                    fh.write(_log_row(result.log[-1]))

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result
