"""Feature-sequence files, checkpoints and the synthetic video generator.

VSEQ layout (all integers little-endian ``uint32``, floats ``float32``)::

    b"VSEQ" | version: uint8 = 1 | L | D_v | D_a | count
    per record:
        id_len | id (utf-8) | T | n_labels | labels[n_labels]
        visual[T * D_v] (row-major) | audio[T * D_a] (row-major)

Checkpoint layout::

    b"GPCK" | version: uint8 = 1 | cfg_len: uint32 | cfg (utf-8 JSON)
    sha256(cfg): 32 bytes | n_tensors: uint32
    per tensor:
        name_len: uint32 | name (utf-8) | dtype: uint8 (1 = float32, 2 = float64)
        ndim: uint8 | dims: uint32[ndim] | raw little-endian data
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping

import numpy as np

VSEQ_MAGIC = b"VSEQ"
VSEQ_VERSION = 1
CKPT_MAGIC = b"GPCK"
CKPT_VERSION = 1

_F32 = np.dtype("<f4")
_F64 = np.dtype("<f8")
_U32 = np.dtype("<u4")
_DTYPE_CODES = {1: _F32, 2: _F64}


class FormatError(OSError):
    """A data or checkpoint file could not be decoded."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class CheckpointError(FormatError):
    """A checkpoint does not match the model it is loaded into."""


@dataclass
class FeatureSequence:
    video_id: str
    visual: np.ndarray
    audio: np.ndarray
    labels: tuple[int, ...] = ()

    def __post_init__(self):
        self.visual = np.asarray(self.visual, dtype=np.float32)
        self.audio = np.asarray(self.audio, dtype=np.float32)
        if self.visual.ndim != 2 or self.audio.ndim != 2:
            raise ValueError("visual and audio must be (T, D) matrices")
        if self.visual.shape[0] < 1:
            raise ValueError(f"video {self.video_id!r} has no frames")
        if self.visual.shape[0] != self.audio.shape[0]:
            raise ValueError(f"video {self.video_id!r}: {self.visual.shape[0]} visual frames "
                             f"vs {self.audio.shape[0]} audio frames")
        self.labels = tuple(sorted(set(int(l) for l in self.labels)))

    @property
    def num_frames(self) -> int:
        return self.visual.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (self.video_id == other.video_id and self.labels == other.labels
                and np.array_equal(self.visual, other.visual)
                and np.array_equal(self.audio, other.audio))


@dataclass
class VideoDataset:
    num_labels: int
    visual_dim: int
    audio_dim: int
    videos: list[FeatureSequence] = field(default_factory=list)

    def __post_init__(self):
        for v in self.videos:
            self._check(v)

    def _check(self, v: FeatureSequence) -> None:
        if v.visual.shape[1] != self.visual_dim or v.audio.shape[1] != self.audio_dim:
            raise ValueError(f"video {v.video_id!r} has dims {v.visual.shape[1]}/"
                             f"{v.audio.shape[1]}, expected {self.visual_dim}/{self.audio_dim}")
        if v.labels and (v.labels[0] < 0 or v.labels[-1] >= self.num_labels):
            raise ValueError(f"video {v.video_id!r} has labels outside [0, {self.num_labels})")

    def __len__(self) -> int:
        return len(self.videos)

    def __iter__(self) -> Iterator[FeatureSequence]:
        return iter(self.videos)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return VideoDataset(self.num_labels, self.visual_dim, self.audio_dim, self.videos[i])
        return self.videos[i]

    def label_matrix(self) -> np.ndarray:
        y = np.zeros((len(self.videos), self.num_labels), dtype=bool)
        for i, v in enumerate(self.videos):
            y[i, list(v.labels)] = True
        return y

    def split(self, val_fraction: float) -> tuple[VideoDataset, VideoDataset]:
        """Hold out the trailing ``val_fraction`` of videos; the split is disjoint."""
        if not 0.0 < val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        n_val = max(1, int(round(len(self) * val_fraction)))
        cut = len(self) - n_val
        if cut < 1:
            raise ValueError("dataset too small to split")
        return self[:cut], self[cut:]


# ---------------------------------------------------------------------------
# VSEQ


def _read_exact(fh: IO[bytes], n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"truncated file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def _read_u32(fh: IO[bytes], what: str, count: int = 1):
    raw = _read_exact(fh, 4 * count, what)
    values = struct.unpack(f"<{count}I", raw)
    return values[0] if count == 1 else values


def _write_record(fh: IO[bytes], v: FeatureSequence) -> None:
    vid = v.video_id.encode("utf-8")
    fh.write(struct.pack("<I", len(vid)))
    fh.write(vid)
    fh.write(struct.pack("<II", v.num_frames, len(v.labels)))
    fh.write(np.asarray(v.labels, dtype=_U32).tobytes())
    fh.write(np.ascontiguousarray(v.visual, dtype=_F32).tobytes())
    fh.write(np.ascontiguousarray(v.audio, dtype=_F32).tobytes())


def write_vseq(path, dataset: VideoDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(VSEQ_MAGIC + bytes([VSEQ_VERSION]))
        fh.write(struct.pack("<4I", dataset.num_labels, dataset.visual_dim,
                             dataset.audio_dim, len(dataset)))
        for v in dataset:
            _write_record(fh, v)


@dataclass
class VseqHeader:
    num_labels: int
    visual_dim: int
    audio_dim: int
    count: int


def _read_header(fh: IO[bytes]) -> VseqHeader:
    magic = fh.read(4)
    if magic != VSEQ_MAGIC:
        raise BadMagicError(f"not a VSEQ file (magic {magic!r})")
    version = _read_exact(fh, 1, "version")[0]
    if version != VSEQ_VERSION:
        raise VersionError(f"unsupported VSEQ version {version}, expected {VSEQ_VERSION}")
    return VseqHeader(*_read_u32(fh, "header", 4))


def iter_vseq(path) -> Iterator[FeatureSequence]:
    """Stream records one at a time; memory use is bounded by the largest record."""
    with open(path, "rb") as fh:
        header = _read_header(fh)
        for i in range(header.count):
            what = f"record {i}"
            vid = _read_exact(fh, _read_u32(fh, what), what).decode("utf-8")
            T, n_labels = _read_u32(fh, what, 2)
            labels = np.frombuffer(_read_exact(fh, 4 * n_labels, what), dtype=_U32)
            vis = np.frombuffer(_read_exact(fh, 4 * T * header.visual_dim, what), dtype=_F32)
            aud = np.frombuffer(_read_exact(fh, 4 * T * header.audio_dim, what), dtype=_F32)
            yield FeatureSequence(vid, vis.reshape(T, header.visual_dim).astype(np.float32),
                                  aud.reshape(T, header.audio_dim).astype(np.float32),
                                  tuple(int(l) for l in labels))
        if fh.read(1):
            raise FormatError("trailing bytes after the last declared record")


def read_vseq_header(path) -> VseqHeader:
    with open(path, "rb") as fh:
        return _read_header(fh)


def read_vseq(path) -> VideoDataset:
    header = read_vseq_header(path)
    return VideoDataset(header.num_labels, header.visual_dim, header.audio_dim,
                        list(iter_vseq(path)))


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthSpec:
    """Parameters of the synthetic multi-label video generator.

    Each label owns one visual and one audio centroid.  A video draws its
    labels by Zipf-weighted sampling without replacement; every frame shows
    one uniformly chosen active label (visual and audio frames of the same
    second show the same label) plus Gaussian noise, except distractor
    frames, which are pure noise.

    ``suppression_pairs`` context/target pairs are drawn among the most
    frequent labels: when a video shows the context label, the target's
    frames still appear but the target is left out of the annotation.
    """

    num_videos: int = 20000
    num_labels: int = 200
    visual_dim: int = 64
    audio_dim: int = 16
    zipf_exponent: float = 1.0
    min_labels: int = 1
    max_labels: int = 6
    extra_labels_mean: float = 2.0
    centroid_scale: float = 1.0
    frame_noise: float = 1.0
    distractor_ratio: float = 0.3
    distractor_noise: float = 1.0
    min_frames: int = 10
    max_frames: int = 40
    suppression_pairs: int = 0
    seed: int = 0

    def label_weights(self) -> np.ndarray:
        w = 1.0 / np.arange(1, self.num_labels + 1) ** self.zipf_exponent
        return w / w.sum()


def generate_synthetic(spec: SynthSpec) -> VideoDataset:
    if spec.num_labels < 2:
        raise ValueError("the generator needs at least two labels")
    if not 1 <= spec.min_labels <= spec.max_labels <= spec.num_labels:
        raise ValueError("need 1 <= min_labels <= max_labels <= num_labels")
    if not 1 <= spec.min_frames <= spec.max_frames:
        raise ValueError("need 1 <= min_frames <= max_frames")
    rng = np.random.default_rng(spec.seed)
    L, Dv, Da = spec.num_labels, spec.visual_dim, spec.audio_dim
    vis_centroids = spec.centroid_scale * rng.standard_normal((L, Dv))
    aud_centroids = spec.centroid_scale * rng.standard_normal((L, Da))
    weights = spec.label_weights()
    P = spec.suppression_pairs
    if 2 * P > L:
        raise ValueError("suppression_pairs needs 2 * pairs <= num_labels")
    # separate stream: turning suppression on changes annotations only, never frames
    paired = np.random.default_rng([spec.seed, 1]).permutation(2 * P)
    suppressed_by = {int(t): int(c) for c, t in zip(paired[:P], paired[P:])}
    width = len(str(max(spec.num_videos - 1, 0)))
    videos = []
    for i in range(spec.num_videos):
        k = spec.min_labels
        if spec.extra_labels_mean > 0:
            k = min(k + int(rng.poisson(spec.extra_labels_mean)), spec.max_labels)
        labels = rng.choice(L, size=k, replace=False, p=weights)
        T = int(rng.integers(spec.min_frames, spec.max_frames + 1))
        shown = labels[rng.integers(0, k, size=T)]
        distract = rng.random(T) < spec.distractor_ratio
        vis = vis_centroids[shown] + spec.frame_noise * rng.standard_normal((T, Dv))
        aud = aud_centroids[shown] + spec.frame_noise * rng.standard_normal((T, Da))
        if distract.any():
            n = int(distract.sum())
            vis[distract] = spec.distractor_noise * rng.standard_normal((n, Dv))
            aud[distract] = spec.distractor_noise * rng.standard_normal((n, Da))
        shown_set = set(labels.tolist())
        annotated = [l for l in shown_set if suppressed_by.get(l) not in shown_set]
        videos.append(FeatureSequence(f"synth-{i:0{width}d}", vis, aud, tuple(annotated)))
    return VideoDataset(L, Dv, Da, videos)


# ---------------------------------------------------------------------------
# checkpoints


def config_digest(config_json: str) -> bytes:
    return hashlib.sha256(config_json.encode("utf-8")).digest()


def write_checkpoint(path, config: Mapping, tensors: Mapping[str, np.ndarray]) -> None:
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":"))
    raw = cfg.encode("utf-8")
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC + bytes([CKPT_VERSION]))
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(config_digest(cfg))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = 2 if arr.dtype == np.float64 else 1
        dt = _DTYPE_CODES[code]
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise BadMagicError(f"not a checkpoint file (magic {magic!r})")
        version = _read_exact(fh, 1, "version")[0]
        if version != CKPT_VERSION:
            raise VersionError(f"unsupported checkpoint version {version}")
        cfg = _read_exact(fh, _read_u32(fh, "config"), "config").decode("utf-8")
        digest = _read_exact(fh, 32, "config digest")
        if digest != config_digest(cfg):
            raise CheckpointError("config snapshot does not match its digest")
        tensors = {}
        for _ in range(_read_u32(fh, "tensor count")):
            name = _read_exact(fh, _read_u32(fh, "tensor name"), "tensor name").decode("utf-8")
            code, ndim = _read_exact(fh, 2, name)
            if code not in _DTYPE_CODES:
                raise FormatError(f"tensor {name!r}: unknown dtype code {code}")
            dt = _DTYPE_CODES[code]
            shape = _read_u32(fh, name, ndim) if ndim else ()
            shape = (shape,) if isinstance(shape, int) else tuple(shape)
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, dt.itemsize * count, name), dtype=dt)
            tensors[name] = data.reshape(shape).astype(dt.newbyteorder("="))
        if fh.read(1):
            raise FormatError("trailing bytes after the last tensor")
    return json.loads(cfg), tensors


def dataset_digest(dataset: VideoDataset | Iterable[FeatureSequence]) -> str:
    h = hashlib.sha256()
    for v in dataset:
        h.update(v.video_id.encode("utf-8"))
        h.update(np.asarray(v.labels, dtype=_U32).tobytes())
        h.update(np.ascontiguousarray(v.visual, dtype=_F32).tobytes())
        h.update(np.ascontiguousarray(v.audio, dtype=_F32).tobytes())
    return h.hexdigest()
