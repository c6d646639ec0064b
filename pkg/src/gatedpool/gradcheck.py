"""Finite-difference checks for every differentiable layer and a whole model."""

from __future__ import annotations

import dataclasses

import numpy as np

from . import classifier, gating, pooling
from .model import ModelConfig, VideoClassifier
from .tensor import BatchNorm, GradCheckReport, Tensor, default_dtype, grad_check, linear

LAYER_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4


def _param(rng, *shape, loc=0.0, scale=1.0, name="p"):
    return Tensor(rng.normal(loc, scale, shape), requires_grad=True, name=name)


def layer_checks(seed: int = 0, tolerance: float = LAYER_TOLERANCE
                 ) -> dict[str, GradCheckReport]:
    """Check each primitive layer on small random 64-bit instances."""
    rng = np.random.default_rng(seed)
    N, D, K, n = 5, 4, 3, 4
    x = rng.normal(size=(N, D))
    w, b = _param(rng, K, D, name="w"), _param(rng, K, name="b")
    c = _param(rng, K, D, name="c")
    r = _param(rng, K, D, loc=1.0, scale=0.1, name="r")
    W, bias = _param(rng, n, n, name="W"), _param(rng, n, name="b")
    W2, b2 = _param(rng, n, n, name="W2"), _param(rng, n, name="b2")
    bn = BatchNorm(n, dtype=np.float64)
    bn.scale.data = rng.normal(1.0, 0.2, n)
    bn.shift.data = rng.normal(0.0, 0.2, n)
    L, E = 3, 2
    ew, eb = _param(rng, L, E, n, name="expert_w"), _param(rng, L, E, name="expert_b")
    gw, gb = _param(rng, L, E + 1, n, name="gate_w"), _param(rng, L, E + 1, name="gate_b")
    Wl, bl = _param(rng, 3, D, name="W"), _param(rng, 3, name="b")
    vec = rng.normal(size=n)
    # keep ReLU pre-activations away from the kink so central differences are valid
    bias_res = Tensor(np.full(n, 2.0), requires_grad=True, name="b")
    W_res = Tensor(0.1 * rng.normal(size=(n, n)), requires_grad=True, name="W")

    def vlad_norm(x):
        return pooling.normalize_pooled(pooling.pool_netvlad(x, w, b, c))

    cases = {
        "linear": (lambda x: linear(x, Wl, bl), {"x": x}, {"W": Wl, "b": bl}),
        "batch_norm": (lambda x: bn(x), {"x": rng.normal(size=(6, n))},
                       {"scale": bn.scale, "shift": bn.shift}),
        "context_gating": (lambda x: gating.context_gate(x, W, bias), {"x": vec},
                           {"W": W, "b": bias}),
        "glu": (lambda x: gating.glu(x, W, bias, W2, b2), {"x": vec},
                {"W1": W, "b1": bias, "W2": W2, "b2": b2}),
        "residual": (lambda x: gating.residual_block(x, W_res, bias_res),
                     {"x": np.abs(vec)}, {"W": W_res, "b": bias_res}),
        "soft_assign": (lambda x: pooling.soft_assign(x, w, b), {"x": x}, {"w": w, "b": b}),
        "bow": (lambda x: pooling.pool_bow(x, w, b), {"x": x}, {"w": w, "b": b}),
        "netvlad": (lambda x: pooling.pool_netvlad(x, w, b, c), {"x": x},
                    {"w": w, "b": b, "c": c}),
        "netvlad+norm": (vlad_norm, {"x": x}, {"w": w, "b": b, "c": c}),
        "netrvlad": (lambda x: pooling.pool_netrvlad(x, w, b), {"x": x}, {"w": w, "b": b}),
        "netfv": (lambda x: pooling.pool_netfv(x, w, b, c, r), {"x": x},
                  {"w": w, "b": b, "c": c, "r": r}),
        "max": (pooling.pool_max, {"x": x}, {}),
        "average": (pooling.pool_average, {"x": x}, {}),
        "moe": (lambda x: classifier.moe_forward(x, ew, eb, gw, gb), {"x": vec},
                {"expert_w": ew, "expert_b": eb, "gate_w": gw, "gate_b": gb}),
    }
    reports = {}
    for layer, (fn, inputs, params) in cases.items():
        rep = grad_check(fn, inputs, params, tolerance=tolerance, seed=seed)
        rep.errors = {f"{layer}.{k}": v for k, v in rep.errors.items()}
        reports[layer] = rep
    return reports


def tiny_model_config(base: ModelConfig | None = None) -> ModelConfig:
    """A small 64-bit variant of ``base`` (D=6, K=2, H=8, L=3) for whole-model checks."""
    base = base or ModelConfig()
    return dataclasses.replace(
        base, visual_dim=4, audio_dim=2, num_labels=3, hidden=8 if base.hidden else 0,
        precision="float64",
        pooling=dataclasses.replace(base.pooling, clusters=2, audio_clusters=0, sample_count=5))


def model_check(config: ModelConfig | None = None, seed: int = 0, batch: int = 4,
                tolerance: float = MODEL_TOLERANCE, max_entries: int | None = 24
                ) -> GradCheckReport:
    config = tiny_model_config(config)
    model = VideoClassifier(config).train()
    rng = np.random.default_rng(seed)
    N = config.pooling.sample_count
    vis = rng.normal(size=(batch, N, config.visual_dim))
    aud = rng.normal(size=(batch, N, config.audio_dim))
    with default_dtype(np.float64):
        rep = grad_check(lambda visual, audio: model(visual, audio),
                         {"visual": vis, "audio": aud}, model.parameters(),
                         tolerance=tolerance, seed=seed, max_entries=max_entries)
    rep.errors = {f"model.{k}": v for k, v in rep.errors.items()}
    return rep


def run_all(config: ModelConfig | None = None, seed: int = 0) -> dict[str, GradCheckReport]:
    reports = layer_checks(seed)
    reports["model"] = model_check(config, seed)
    return reports


def format_table(reports: dict[str, GradCheckReport]) -> str:
    lines = [f"{'layer':<16} {'max_rel_error':>13}  {'tol':>7}  status"]
    for layer, rep in reports.items():
        status = "ok" if rep.passed else "FAIL"
        lines.append(f"{layer:<16} {rep.max_error:13.3e}  {rep.tolerance:7.0e}  {status}")
    return "\n".join(lines)
