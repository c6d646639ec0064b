"""Optimizer, schedule, loss and the training loop."""

import math

import numpy as np
import pytest

from gatedpool.dataio import SynthSpec, generate_synthetic
from gatedpool.model import GatingSettings, ModelConfig, PoolingSettings, build
from gatedpool.tensor import Tensor
from gatedpool.training import (AdamState, NumericError, TrainConfig, adam_step, bce_loss,
                                clip_gradients, evaluate, global_norm, lr_at, train)


def scalar_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on one scalar, step by step."""
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


class TestSchedule:
    def test_paper_recipe(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 0.0002
        assert lr_at(4_000_000, cfg) == pytest.approx(0.00016, rel=1e-12)
        assert lr_at(8_000_000, cfg) == pytest.approx(0.0002 * 0.64, rel=1e-12)

    def test_continuous_vs_staircase(self):
        cont = TrainConfig(lr=1.0, decay=0.5, decay_interval=10)
        stair = TrainConfig(lr=1.0, decay=0.5, decay_interval=10, staircase=True)
        assert lr_at(5, cont) == pytest.approx(0.5 ** 0.5)
        assert lr_at(9, stair) == 1.0 and lr_at(10, stair) == 0.5

    def test_monotone_non_increasing(self):
        cfg = TrainConfig(decay_interval=1000)
        lrs = [lr_at(s, cfg) for s in range(0, 20_000, 37)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_no_decay(self):
        cfg = TrainConfig(decay=1.0)
        assert lr_at(10 ** 9, cfg) == cfg.lr


class TestAdam:
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        grads = rng.normal(size=(25, 3))
        params = {"p": np.array([0.5, -1.0, 2.0])}
        state = AdamState()
        for g in grads:
            adam_step(params, {"p": g}, state, lr=0.01)
        for j in range(3):
            assert params["p"][j] == pytest.approx(
                scalar_adam([0.5, -1.0, 2.0][j], grads[:, j], 0.01), abs=1e-14)

    def test_first_step_moves_by_lr(self):
        params = {"p": np.array([1.0, 1.0])}
        adam_step(params, {"p": np.array([3.0, -0.2])}, AdamState(), lr=0.1)
        np.testing.assert_allclose(params["p"], [0.9, 1.1], atol=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"p": np.zeros(2)}, {"p": np.zeros(3)}, AdamState(), 0.1)


class TestClipping:
    def test_direction_preserved(self):
        rng = np.random.default_rng(1)
        grads = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=5)}
        clipped, norm = clip_gradients(grads, 0.5)
        assert norm == pytest.approx(global_norm(grads))
        flat = np.concatenate([g.ravel() for g in grads.values()])
        flat_c = np.concatenate([g.ravel() for g in clipped.values()])
        cos = flat @ flat_c / (np.linalg.norm(flat) * np.linalg.norm(flat_c))
        assert abs(cos - 1.0) <= 1e-12
        assert global_norm(clipped) == pytest.approx(0.5, rel=1e-12)

    def test_small_gradients_untouched(self):
        grads = {"a": np.array([0.1, 0.2])}
        clipped, _ = clip_gradients(grads, 1.0)
        assert clipped["a"] is grads["a"]

    def test_invalid_norm(self):
        with pytest.raises(ValueError):
            clip_gradients({"a": np.ones(1)}, 0.0)


class TestLoss:
    def test_matches_formula(self):
        p = np.array([[0.9, 0.2], [0.4, 0.7]])
        y = np.array([[1, 0], [0, 1]])
        expected = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert float(bce_loss(Tensor(p), y).data) == pytest.approx(expected, rel=1e-14)

    def test_clamped_at_extremes(self):
        loss = float(bce_loss(Tensor(np.array([0.0, 1.0])), np.array([1, 0])).data)
        assert loss == pytest.approx(-math.log(1e-6), rel=1e-9)

    def test_non_finite_prediction(self):
        with pytest.raises(NumericError):
            bce_loss(Tensor(np.array([np.nan])), np.array([1]))


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(lr=0), dict(decay=0), dict(decay=1.5),
                                    dict(batch_size=1), dict(clip_norm=-1),
                                    dict(epochs=0, steps=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw).validate()


def small_data(n=60, seed=0, L=5):
    spec = SynthSpec(num_videos=n, num_labels=L, visual_dim=6, audio_dim=2, max_labels=3,
                     extra_labels_mean=0.8, min_frames=4, max_frames=8, seed=seed)
    return generate_synthetic(spec)


def small_model(ds, seed=0, **kw):
    cfg = ModelConfig(visual_dim=ds.visual_dim, audio_dim=ds.audio_dim,
                      num_labels=ds.num_labels, hidden=16,
                      pooling=PoolingSettings("netvlad", 4, sample_count=8), seed=seed, **kw)
    return build(cfg)


class TestTrainLoop:
    def test_overfits_fifty_videos(self):
        ds = small_data(60, seed=1)
        tr, va = ds[:50], ds[50:]
        model = small_model(ds, gating=GatingSettings("none", "none"))
        cfg = TrainConfig(lr=0.01, batch_size=50, steps=2000, eval_every=2000,
                          decay_interval=10 ** 9)
        result = train(model, tr, va, cfg)
        # training loss of the last logging window
        assert result.log[-1]["train_loss"] < 0.05

    def test_logs_are_reproducible(self, tmp_path):
        ds = small_data()
        tr, va = ds.split(0.2)
        cfg = TrainConfig(lr=0.005, batch_size=16, steps=12, eval_every=4)
        for name in ("a", "b"):
            train(small_model(ds), tr, va, cfg, log_path=tmp_path / f"{name}.csv")
        a = (tmp_path / "a.csv").read_text().splitlines()
        b = (tmp_path / "b.csv").read_text().splitlines()
        assert a[0].startswith("# training log started")
        assert a[1] == "step,samples,lr,train_loss,val_gap"
        assert a[1:] == b[1:] and len(a) == 2 + 3

    def test_best_checkpoint_restored(self, tmp_path):
        ds = small_data()
        tr, va = ds.split(0.2)
        model = small_model(ds)
        res = train(model, tr, va, TrainConfig(lr=0.01, batch_size=16, steps=9, eval_every=3),
                    checkpoint_path=tmp_path / "best.ckpt")
        assert not model.training
        assert res.best_gap == max(r["val_gap"] for r in res.log)
        saved = type(model).from_checkpoint(tmp_path / "best.ckpt")
        for k, v in model.state_dict().items():
            np.testing.assert_array_equal(saved.state_dict()[k], v)
        assert res.samples_seen == 9 * 16

    def test_rejects_overlap_and_empty_sets(self):
        ds = small_data(20)
        model = small_model(ds)
        cfg = TrainConfig(steps=1)
        with pytest.raises(ValueError, match="overlap"):
            train(model, ds, ds[:3], cfg)
        with pytest.raises(ValueError):
            train(model, ds, ds[:0], cfg)

    def test_non_finite_reports_a_location(self):
        ds = small_data(20)
        tr, va = ds.split(0.2)
        model = small_model(ds)
        model.parameters()["fc.W"].data[:] = np.nan
        with pytest.raises(NumericError, match="step 1"):
            train(model, tr, va, TrainConfig(steps=1, batch_size=8))

    def test_learned_model_beats_untrained(self):
        ds = generate_synthetic(SynthSpec(num_videos=500, num_labels=10, visual_dim=8,
                                          audio_dim=2, seed=3))
        tr, va = ds.split(0.2)
        untrained = evaluate(small_model(ds), va, seed=1)
        res = train(small_model(ds), tr, va, TrainConfig(lr=0.005, batch_size=50, epochs=10))
        assert res.best_gap > untrained + 0.1
