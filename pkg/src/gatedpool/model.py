"""Two-stream video classification network.

Late concat::

    pool(visual) ++ pool(audio) -> FC -> BN -> gate -> MoE -> output gate

Early concat pools the per-frame concatenation ``[visual ; audio]`` with a
single pooling layer and continues identically.  ``hidden = 0`` drops the
FC/BN stage so pooled features feed the classifier directly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .classifier import MixtureOfExperts
from .dataio import (CheckpointError, FeatureSequence, VideoDataset, config_digest,
                     read_checkpoint, write_checkpoint)
from .gating import AFTER_CLASSIFIER, AFTER_POOLING, make_gate
from .pooling import KINDS, NORMALIZATIONS, Pooling, PoolingConfig
from .tensor import BatchNorm, Tensor, concat, linear, no_grad

FUSIONS = ("late_concat", "early_concat")
PRECISIONS = ("float32", "float64")

# fixed per-component seed offsets so changing one block leaves the others' init intact
_STREAMS = {"pool.visual": 1, "pool.audio": 2, "pool.joint": 3, "fc": 4, "gate": 5,
            "moe": 6, "out_gate": 7}


class ConfigError(ValueError):
    """A configuration value is missing, unknown or inconsistent."""


@dataclass
class PoolingSettings:
    kind: str = "netvlad"
    clusters: int = 16
    audio_clusters: int = 0  # 0: same as clusters
    normalization: str = "intra_l2"
    sample_count: int = 16


@dataclass
class GatingSettings:
    after_pooling: str = "cg"
    after_classifier: str = "cg"


@dataclass
class ClassifierSettings:
    experts: int = 2
    null_expert: bool = True


@dataclass
class ModelConfig:
    visual_dim: int = 64
    audio_dim: int = 16
    num_labels: int = 200
    fusion: str = "late_concat"
    hidden: int = 64
    batch_norm: bool = True
    precision: str = "float32"
    seed: int = 0
    pooling: PoolingSettings = field(default_factory=PoolingSettings)
    gating: GatingSettings = field(default_factory=GatingSettings)
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)

    def validate(self) -> None:
        for key in ("visual_dim", "audio_dim", "num_labels"):
            if getattr(self, key) < 1:
                raise ConfigError(f"model.{key} must be positive")
        if self.hidden < 0:
            raise ConfigError("model.hidden must be >= 0")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"model.fusion must be one of {FUSIONS}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"model.precision must be one of {PRECISIONS}")
        p = self.pooling
        if p.kind not in KINDS:
            raise ConfigError(f"pooling.kind must be one of {KINDS}")
        if p.normalization not in NORMALIZATIONS:
            raise ConfigError(f"pooling.normalization must be one of {NORMALIZATIONS}")
        if p.clusters < 1 or p.audio_clusters < 0 or p.sample_count < 1:
            raise ConfigError("pooling.clusters and pooling.sample_count must be positive")
        if self.gating.after_pooling not in AFTER_POOLING:
            raise ConfigError(f"gating.after_pooling must be one of {AFTER_POOLING}")
        if self.gating.after_classifier not in AFTER_CLASSIFIER:
            raise ConfigError(f"gating.after_classifier must be one of {AFTER_CLASSIFIER}")
        if self.classifier.experts < 1:
            raise ConfigError("classifier.experts must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        sub = {"pooling": PoolingSettings, "gating": GatingSettings,
               "classifier": ClassifierSettings}
        for key, kind in sub.items():
            if key in d:
                d[key] = kind(**d[key])
        return cls(**d)


def sample_frames(seq: FeatureSequence, n: int, rng: np.random.Generator
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` frame indices uniformly with replacement, shared by both streams."""
    if seq.num_frames < 1:
        raise ValueError(f"video {seq.video_id!r} has no frames")
    idx = rng.integers(0, seq.num_frames, size=n)
    return seq.visual[idx], seq.audio[idx]


class PackedFrames:
    """All frames of a dataset in two contiguous arrays, for batched sampling."""

    def __init__(self, dataset: VideoDataset):
        lengths = np.array([v.num_frames for v in dataset], dtype=np.int64)
        self.lengths = lengths
        self.offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        if len(dataset):
            self.visual = np.concatenate([v.visual for v in dataset])
            self.audio = np.concatenate([v.audio for v in dataset])
        else:
            self.visual = np.zeros((0, dataset.visual_dim), np.float32)
            self.audio = np.zeros((0, dataset.audio_dim), np.float32)

    def __len__(self) -> int:
        return len(self.lengths)

    def sample(self, indices: np.ndarray, n: int, rng: np.random.Generator
               ) -> tuple[np.ndarray, np.ndarray]:
        T = self.lengths[indices][:, None]
        rows = self.offsets[indices][:, None] + rng.integers(0, T, size=(len(indices), n))
        return self.visual[rows], self.audio[rows]


class VideoClassifier:
    """The assembled network with a flat, uniquely named parameter registry."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        self.dtype = np.dtype(config.precision)
        self.training = True
        self.activations: dict[str, np.ndarray] = {}
        p = config.pooling
        dt = self.dtype

        def rng(stream):
            return np.random.default_rng([config.seed, _STREAMS[stream]])

        def pool_cfg(clusters, dim):
            return PoolingConfig(p.kind, clusters, dim, p.normalization, p.sample_count)

        if config.fusion == "late_concat":
            self.pools = [
                Pooling(pool_cfg(p.clusters, config.visual_dim), rng("pool.visual"), dt,
                        "pool.visual"),
                Pooling(pool_cfg(p.audio_clusters or p.clusters, config.audio_dim),
                        rng("pool.audio"), dt, "pool.audio"),
            ]
        else:
            self.pools = [Pooling(pool_cfg(p.clusters, config.visual_dim + config.audio_dim),
                                  rng("pool.joint"), dt, "pool.joint")]
        pooled = sum(pl.output_dim for pl in self.pools)
        self.pooled_dim = pooled

        self.fc: dict[str, Tensor] = {}
        self.bn = None
        feat = pooled
        if config.hidden:
            H = config.hidden
            W = rng("fc").normal(0.0, 1.0 / np.sqrt(pooled), (H, pooled)).astype(dt)
            self.fc = {"fc.W": Tensor(W, requires_grad=True, name="fc.W"),
                       "fc.b": Tensor(np.zeros(H, dt), requires_grad=True, name="fc.b")}
            if config.batch_norm:
                self.bn = BatchNorm(H, dtype=dt, name="bn")
            feat = H
        self.feature_dim = feat
        self.gate = make_gate(config.gating.after_pooling, feat, rng("gate"), dt, "gate")
        c = config.classifier
        self.moe = MixtureOfExperts(feat, config.num_labels, c.experts, c.null_expert,
                                    rng("moe"), dt, "moe")
        self.out_gate = make_gate(config.gating.after_classifier, config.num_labels,
                                  rng("out_gate"), dt, "out_gate", allowed=AFTER_CLASSIFIER)

    # -- registry -------------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for pl in self.pools:
            params.update(pl.params)
        params.update(self.fc)
        if self.bn is not None:
            params.update(self.bn.parameters())
        if self.gate is not None:
            params.update(self.gate.params)
        params.update(self.moe.params)
        if self.out_gate is not None:
            params.update(self.out_gate.params)
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        return self.bn.buffers() if self.bn is not None else {}

    def num_params(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: t.data.copy() for k, t in self.parameters().items()}
        state.update({k: v.copy() for k, v in self.buffers().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        expected = list(params) + list(self.buffers())
        missing = [k for k in expected if k not in state]
        if missing:
            raise CheckpointError(f"missing tensor(s): {', '.join(missing)}")
        extra = [k for k in state if k not in expected]
        if extra:
            raise CheckpointError(f"unexpected tensor(s): {', '.join(extra)}")
        for k, t in params.items():
            if state[k].shape != t.shape:
                raise CheckpointError(f"tensor {k!r}: shape {state[k].shape} != {t.shape}")
        for k, t in params.items():
            t.data = np.array(state[k], dtype=self.dtype)
        if self.bn is not None:
            for k in self.bn.buffers():
                if state[k].shape != self.bn.running_mean.shape:
                    raise CheckpointError(f"tensor {k!r}: shape mismatch")
            self.bn.running_mean = np.array(state["bn.running_mean"], dtype=self.dtype)
            self.bn.running_var = np.array(state["bn.running_var"], dtype=self.dtype)

    def train(self) -> VideoClassifier:
        self.training = True
        if self.bn is not None:
            self.bn.training = True
        return self

    def eval(self) -> VideoClassifier:
        self.training = False
        if self.bn is not None:
            self.bn.training = False
        return self

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.zero_grad()

    # -- forward --------------------------------------------------------------
    def _record(self, name: str, t: Tensor) -> Tensor:
        self.activations[name] = t.data
        return t

    def forward(self, visual, audio) -> Tensor:
        """Label probabilities for sampled frames ``(B, N, D_v)`` and ``(B, N, D_a)``.

        Unbatched ``(N, D)`` inputs give an ``(L,)`` output; in train mode batch
        normalization needs a batch of at least two.
        """
        self.activations = {}
        v = visual if isinstance(visual, Tensor) else Tensor(np.asarray(visual, self.dtype))
        a = audio if isinstance(audio, Tensor) else Tensor(np.asarray(audio, self.dtype))
        single = v.ndim == 2
        if single:
            v, a = v.reshape((1,) + v.shape), a.reshape((1,) + a.shape)
        if v.shape[:2] != a.shape[:2]:
            raise ValueError(f"visual frames {v.shape[:2]} and audio frames {a.shape[:2]} differ")
        if len(self.pools) == 2:
            pooled = concat([self._record(pl.name, pl(x)) for pl, x in zip(self.pools, (v, a))])
        else:
            pooled = self._record("pool.joint", self.pools[0](concat([v, a], axis=-1)))
        h = pooled
        if self.fc:
            h = self._record("fc", linear(h, self.fc["fc.W"], self.fc["fc.b"]))
            if self.bn is not None:
                h = self._record("bn", self.bn(h))
        if self.gate is not None:
            h = self._record("gate", self.gate(h))
        out = self._record("moe", self.moe(h))
        if self.out_gate is not None:
            out = self._record("out_gate", self.out_gate(out))
        return out.reshape(out.shape[1:]) if single else out

    __call__ = forward

    # -- checkpoints ----------------------------------------------------------
    def config_hash(self) -> str:
        return config_digest(json.dumps(self.config.to_dict(), sort_keys=True,
                                        separators=(",", ":"))).hex()

    def save(self, path) -> None:
        write_checkpoint(path, self.config.to_dict(), self.state_dict())

    def load(self, path) -> None:
        cfg, tensors = read_checkpoint(path)
        stored = config_digest(json.dumps(cfg, sort_keys=True, separators=(",", ":"))).hex()
        if stored != self.config_hash():
            raise CheckpointError("checkpoint was written by a model with a different config")
        self.load_state_dict(tensors)

    @classmethod
    def from_checkpoint(cls, path) -> VideoClassifier:
        cfg, tensors = read_checkpoint(path)
        model = cls(ModelConfig.from_dict(cfg))
        model.load_state_dict(tensors)
        return model.eval()


def build(config: ModelConfig) -> VideoClassifier:
    return VideoClassifier(config)


def _seeded_generators(rng, passes: int) -> list[np.random.Generator]:
    if isinstance(rng, (list, tuple)):
        return [np.random.default_rng(s) for s in rng]
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return [gen] * passes


def predict(model: VideoClassifier, seq: FeatureSequence, rng=None, passes: int = 1
            ) -> np.ndarray:
    """Average ``passes`` sampled-frame evaluations of one video.

    ``rng`` may be a generator, a seed, or a list of seeds (one per pass).
    """
    return predict_many(model, [seq], rng, passes)[0]


def predict_many(model: VideoClassifier, videos, rng=None, passes: int = 1,
                 batch_size: int = 500) -> np.ndarray:
    if model.training:
        raise ValueError("predict requires the model in eval mode")
    videos = list(videos)
    gens = _seeded_generators(rng, passes)
    n = model.config.pooling.sample_count
    out = np.zeros((len(videos), model.config.num_labels))
    with no_grad():
        for gen in gens:
            for start in range(0, len(videos), batch_size):
                chunk = videos[start:start + batch_size]
                samples = [sample_frames(v, n, gen) for v in chunk]
                vis = np.stack([s[0] for s in samples])
                aud = np.stack([s[1] for s in samples])
                out[start:start + len(chunk)] += model.forward(vis, aud).data
    return out / len(gens)
