"""VSEQ files, checkpoint containers and the synthetic generator."""

import hashlib
import itertools
import struct

import numpy as np
import pytest

from gatedpool.dataio import (BadMagicError, CheckpointError, FeatureSequence, FormatError,
                              SynthSpec, TruncatedError, VersionError, VideoDataset,
                              dataset_digest, generate_synthetic, iter_vseq, read_checkpoint,
                              read_vseq, read_vseq_header, write_checkpoint, write_vseq)


def random_dataset(rng, n, L=7, Dv=5, Da=3):
    videos = []
    for i in range(n):
        T = int(rng.integers(1, 9))
        labels = rng.choice(L, size=int(rng.integers(0, 4)), replace=False)
        videos.append(FeatureSequence(f"vid-{i}-é", rng.normal(size=(T, Dv)),
                                      rng.normal(size=(T, Da)), labels))
    return VideoDataset(L, Dv, Da, videos)


class TestFeatureSequence:
    def test_normalizes_labels_and_dtype(self):
        seq = FeatureSequence("a", np.ones((2, 3)), np.ones((2, 1)), [4, 1, 4])
        assert seq.labels == (1, 4)
        assert seq.visual.dtype == np.float32

    def test_rejects_mismatched_or_empty_streams(self):
        with pytest.raises(ValueError):
            FeatureSequence("a", np.ones((2, 3)), np.ones((3, 1)))
        with pytest.raises(ValueError):
            FeatureSequence("a", np.ones((0, 3)), np.ones((0, 1)))

    def test_dataset_checks_labels_and_dims(self):
        seq = FeatureSequence("a", np.ones((2, 3)), np.ones((2, 1)), [5])
        with pytest.raises(ValueError):
            VideoDataset(5, 3, 1, [seq])
        with pytest.raises(ValueError):
            VideoDataset(6, 4, 1, [seq])

    def test_split_is_disjoint_and_ordered(self):
        ds = random_dataset(np.random.default_rng(0), 10)
        tr, va = ds.split(0.3)
        assert [v.video_id for v in tr] + [v.video_id for v in va] == [v.video_id for v in ds]
        assert len(va) == 3


class TestVseq:
    def test_empty_dataset_is_header_only(self, tmp_path):
        path = tmp_path / "e.vseq"
        write_vseq(path, VideoDataset(3, 2, 1))
        assert path.stat().st_size == 4 + 1 + 4 * 4
        back = read_vseq(path)
        assert len(back) == 0 and (back.num_labels, back.visual_dim, back.audio_dim) == (3, 2, 1)

    def test_single_frame_round_trip_is_bit_exact(self, tmp_path):
        seq = FeatureSequence("x", np.array([[np.float32(1 / 3), -0.0]]),
                              np.array([[np.float32(np.pi)]]), [0])
        path = tmp_path / "one.vseq"
        write_vseq(path, VideoDataset(1, 2, 1, [seq]))
        (back,) = read_vseq(path).videos
        assert back.visual.tobytes() == seq.visual.tobytes()
        assert back.audio.tobytes() == seq.audio.tobytes()

    def test_hundred_videos_round_trip_hash(self, tmp_path):
        ds = random_dataset(np.random.default_rng(1), 100)
        path = tmp_path / "r.vseq"
        write_vseq(path, ds)
        assert dataset_digest(read_vseq(path)) == dataset_digest(ds)
        write_vseq(tmp_path / "again.vseq", read_vseq(path))
        assert (hashlib.sha256((tmp_path / "again.vseq").read_bytes()).digest()
                == hashlib.sha256(path.read_bytes()).digest())

    def test_layout(self, tmp_path):
        seq = FeatureSequence("ab", np.array([[1.0, 2.0]]), np.array([[3.0]]), [2, 0])
        path = tmp_path / "l.vseq"
        write_vseq(path, VideoDataset(4, 2, 1, [seq]))
        raw = path.read_bytes()
        expected = (b"VSEQ" + bytes([1]) + struct.pack("<4I", 4, 2, 1, 1)
                    + struct.pack("<I", 2) + b"ab" + struct.pack("<4I", 1, 2, 0, 2)
                    + struct.pack("<3f", 1.0, 2.0, 3.0))
        assert raw == expected

    def test_streaming_reader_yields_records(self, tmp_path):
        ds = random_dataset(np.random.default_rng(2), 5)
        path = tmp_path / "s.vseq"
        write_vseq(path, ds)
        it = iter_vseq(path)
        assert next(it) == ds[0]
        assert list(it) == ds.videos[1:]
        assert read_vseq_header(path).count == 5

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.vseq"
        path.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(BadMagicError):
            read_vseq(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v.vseq"
        write_vseq(path, VideoDataset(1, 1, 1))
        raw = bytearray(path.read_bytes())
        raw[4] = 2
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionError):
            read_vseq(path)

    @pytest.mark.parametrize("cut", [3, 10, 30, -1])
    def test_truncation_detected(self, tmp_path, cut):
        path = tmp_path / "t.vseq"
        write_vseq(path, random_dataset(np.random.default_rng(3), 2))
        raw = path.read_bytes()
        path.write_bytes(raw[:cut])
        with pytest.raises((TruncatedError, BadMagicError)):
            read_vseq(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "x.vseq"
        write_vseq(path, random_dataset(np.random.default_rng(4), 2))
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError):
            read_vseq(path)

    def test_errors_are_distinct(self):
        assert len({BadMagicError, VersionError, TruncatedError}) == 3
        assert issubclass(TruncatedError, FormatError)


class TestCheckpointContainer:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        tensors = {"a": rng.normal(size=(3, 4)).astype(np.float32),
                   "b.c": rng.normal(size=7), "s": np.array(2.5, dtype=np.float32)}
        write_checkpoint(tmp_path / "c.ckpt", {"k": [1, 2]}, tensors)
        cfg, back = read_checkpoint(tmp_path / "c.ckpt")
        assert cfg == {"k": [1, 2]}
        assert list(back) == list(tensors)
        for k in tensors:
            assert back[k].dtype == tensors[k].dtype
            assert back[k].tobytes() == tensors[k].tobytes()

    def test_tampered_config_detected(self, tmp_path):
        path = tmp_path / "c.ckpt"
        write_checkpoint(path, {"hidden": 8}, {"w": np.zeros(2, np.float32)})
        raw = path.read_bytes().replace(b'"hidden":8', b'"hidden":9')
        path.write_bytes(raw)
        with pytest.raises(CheckpointError):
            read_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "c.ckpt"
        write_vseq(path, VideoDataset(1, 1, 1))
        with pytest.raises(BadMagicError):
            read_checkpoint(path)


def successive_inclusion(weights, k):
    """Exact inclusion probabilities of weighted sampling without replacement."""
    p = np.zeros(len(weights))
    for seq in itertools.permutations(range(len(weights)), k):
        prob, left = 1.0, 1.0
        for i in seq:
            prob *= weights[i] / left
            left -= weights[i]
        p[list(seq)] += prob
    return p


class TestSynthetic:
    def test_noise_free_single_label_frames_equal_centroid(self):
        spec = SynthSpec(num_videos=5, num_labels=3, visual_dim=4, audio_dim=2, min_labels=1,
                         max_labels=1, extra_labels_mean=0, frame_noise=0.0,
                         distractor_ratio=0.0, seed=3)
        ds = generate_synthetic(spec)
        by_label = {}
        for v in ds:
            assert len(v.labels) == 1
            assert np.all(v.visual == v.visual[0]) and np.all(v.audio == v.audio[0])
            prev = by_label.setdefault(v.labels[0], v.visual[0])
            np.testing.assert_array_equal(prev, v.visual[0])

    def test_same_seed_identical_bytes(self, tmp_path):
        spec = SynthSpec(num_videos=30, num_labels=10, seed=11)
        write_vseq(tmp_path / "a.vseq", generate_synthetic(spec))
        write_vseq(tmp_path / "b.vseq", generate_synthetic(spec))
        assert (tmp_path / "a.vseq").read_bytes() == (tmp_path / "b.vseq").read_bytes()
        other = generate_synthetic(SynthSpec(num_videos=30, num_labels=10, seed=12))
        assert dataset_digest(other) != dataset_digest(read_vseq(tmp_path / "a.vseq"))

    def test_single_label_frequencies_follow_zipf(self):
        spec = SynthSpec(num_videos=10_000, num_labels=20, visual_dim=2, audio_dim=1,
                         min_labels=1, max_labels=1, extra_labels_mean=0, min_frames=1,
                         max_frames=1, seed=0)
        counts = generate_synthetic(spec).label_matrix().sum(axis=0)
        p = 1.0 / np.arange(1, 21)
        p /= p.sum()
        sd = np.sqrt(10_000 * p * (1 - p))
        assert np.all(np.abs(counts - 10_000 * p) <= 3 * sd)

    def test_multi_label_inclusion_matches_exact_oracle(self):
        spec = SynthSpec(num_videos=10_000, num_labels=6, visual_dim=2, audio_dim=1,
                         zipf_exponent=1.2, min_labels=2, max_labels=2, extra_labels_mean=0,
                         min_frames=1, max_frames=1, seed=1)
        counts = generate_synthetic(spec).label_matrix().sum(axis=0)
        p = successive_inclusion(spec.label_weights(), 2)
        np.testing.assert_allclose(p.sum(), 2.0)
        sd = np.sqrt(10_000 * p * (1 - p))
        assert np.all(np.abs(counts - 10_000 * p) <= 3 * sd)

    def test_shapes_and_bounds(self):
        spec = SynthSpec(num_videos=200, num_labels=12, visual_dim=6, audio_dim=3,
                         min_frames=4, max_frames=9, max_labels=4, seed=2)
        ds = generate_synthetic(spec)
        for v in ds:
            assert 4 <= v.num_frames <= 9
            assert 1 <= len(v.labels) <= 4
            assert v.visual.shape[1] == 6 and v.audio.shape[1] == 3

    def test_suppression_hides_target_when_context_present(self):
        base = dict(num_videos=400, num_labels=10, visual_dim=3, audio_dim=1, max_labels=5,
                    extra_labels_mean=3.0, seed=4, min_frames=12, max_frames=12,
                    frame_noise=0.0, distractor_ratio=0.0)
        plain = generate_synthetic(SynthSpec(**base))
        hidden = generate_synthetic(SynthSpec(**base, suppression_pairs=2))
        dropped = 0
        for a, b in zip(plain, hidden):
            assert set(b.labels) <= set(a.labels)
            np.testing.assert_array_equal(a.visual.shape, b.visual.shape)
            dropped += len(a.labels) - len(b.labels)
        assert dropped > 0

    def test_rejects_degenerate_specs(self):
        with pytest.raises(ValueError):
            generate_synthetic(SynthSpec(num_labels=1))
        with pytest.raises(ValueError):
            generate_synthetic(SynthSpec(num_labels=4, suppression_pairs=3))
