"""Orderless aggregation of a frame-descriptor sequence.

The clustering-based poolings share one soft-assignment stage: descriptor
``x_i`` is assigned to cluster ``k`` with weight
``softmax_k(w_k . x_i + b_k)``.  On top of it

* soft BoW sums the assignments per cluster,
* NetVLAD sums assignment-weighted residuals ``x_i - c_k``,
* NetRVLAD sums assignment-weighted raw descriptors,
* NetFV sums first- and second-order normalized residuals with a learned
  diagonal scale ``sigma_k = r_k**2 + eps``.

Every function accepts ``x`` of shape ``(N, D)`` or ``(B, N, D)``.  The
VLAD-family functions return per-cluster blocks of shape ``(..., M, D)``
(``M = K``, or ``2K`` for NetFV with first-order rows before second-order
rows) so that :func:`normalize_pooled` can intra-normalize them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (Tensor, as_tensor, concat, l2_normalize, linear, max_reduce, softmax,
                     swapaxes)

KINDS = ("average", "max", "bow", "netvlad", "netrvlad", "netfv")
NORMALIZATIONS = ("none", "intra_l2")
SIGMA_EPS = 1e-4


@dataclass
class PoolingConfig:
    kind: str = "netvlad"
    clusters: int = 16
    dim: int = 64
    normalization: str = "intra_l2"
    sample_count: int = 16

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown pooling kind {self.kind!r}; expected one of {KINDS}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        for key in ("clusters", "dim", "sample_count"):
            if getattr(self, key) < 1:
                raise ValueError(f"pooling {key} must be positive")

    @property
    def output_dim(self) -> int:
        K, D = self.clusters, self.dim
        return {"average": D, "max": D, "bow": K, "netvlad": K * D,
                "netrvlad": K * D, "netfv": 2 * K * D}[self.kind]


def soft_assign(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Softmax assignment of each descriptor over the ``K`` clusters."""
    return softmax(linear(as_tensor(x), w, b), axis=-1)


def pool_bow(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return soft_assign(x, w, b).sum(axis=-2)


def _weighted_sums(x: Tensor, a: Tensor) -> tuple[Tensor, Tensor]:
    # a^T x over the frame axis, plus total assignment mass per cluster
    return swapaxes(a, -1, -2) @ x, a.sum(axis=-2)


def pool_netvlad(x: Tensor, w: Tensor, b: Tensor, c: Tensor) -> Tensor:
    x = as_tensor(x)
    a = soft_assign(x, w, b)
    ax, mass = _weighted_sums(x, a)
    return ax - mass.reshape(mass.shape + (1,)) * c


def pool_netrvlad(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    x = as_tensor(x)
    ax, _ = _weighted_sums(x, soft_assign(x, w, b))
    return ax


def sigma_from_raw(r: Tensor) -> Tensor:
    return r * r + SIGMA_EPS


def pool_netfv(x: Tensor, w: Tensor, b: Tensor, c: Tensor, r: Tensor) -> Tensor:
    """First- and second-order statistics stacked as ``(..., 2K, D)``."""
    x = as_tensor(x)
    a = soft_assign(x, w, b)
    ax, mass = _weighted_sums(x, a)
    axx = swapaxes(a, -1, -2) @ (x * x)
    m = mass.reshape(mass.shape + (1,))
    sigma = sigma_from_raw(r)
    fv1 = (ax - m * c) / sigma
    # sum_i a_ik (x_i - c_k)^2 expanded so only K x D intermediates are formed
    centred_sq = axx - 2.0 * c * ax + m * (c * c)
    fv2 = centred_sq / (sigma * sigma) - m
    return concat([fv1, fv2], axis=-2)


def pool_average(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.shape[-2] == 0:
        raise ValueError("cannot pool an empty frame sequence")
    return x.mean(axis=-2)


def pool_max(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.shape[-2] == 0:
        raise ValueError("cannot pool an empty frame sequence")
    return max_reduce(x, axis=-2)


def normalize_pooled(v: Tensor, scheme: str = "intra_l2", blocked: bool = True) -> Tensor:
    """Flatten pooled output, optionally intra- and globally L2-normalizing.

    ``blocked`` marks inputs of shape ``(..., M, D)`` whose rows are
    normalized individually before the flattened vector is.  Unblocked
    inputs (soft BoW) only receive the global step.
    """
    if scheme not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {scheme!r}")
    if blocked:
        if scheme == "intra_l2":
            v = l2_normalize(v, axis=-1)
        v = v.reshape(v.shape[:-2] + (v.shape[-2] * v.shape[-1],))
    if scheme == "intra_l2":
        v = l2_normalize(v, axis=-1)
    return v


class Pooling:
    """A pooling layer with its learnable parameters.

    ``w`` (K x D) and ``b`` (K) drive the soft assignment; anchors ``c`` and
    raw scale factors ``r`` are separate tensors and never tied to them.
    """

    def __init__(self, config: PoolingConfig, rng: np.random.Generator, dtype=np.float64,
                 name: str = "pool"):
        self.config = config
        self.name = name
        K, D = config.clusters, config.dim
        self.params: dict[str, Tensor] = {}
        std = 1.0 / np.sqrt(D)
        if config.kind in ("bow", "netvlad", "netrvlad", "netfv"):
            self._add("w", rng.normal(0.0, std, (K, D)), dtype)
            self._add("b", np.zeros(K), dtype)
        if config.kind in ("netvlad", "netfv"):
            self._add("c", rng.normal(0.0, std, (K, D)), dtype)
        if config.kind == "netfv":
            self._add("r", rng.normal(1.0, 0.1, (K, D)), dtype)

    def _add(self, key: str, value: np.ndarray, dtype) -> None:
        full = f"{self.name}.{key}"
        self.params[full] = Tensor(np.asarray(value, dtype=dtype), requires_grad=True, name=full)

    def p(self, key: str) -> Tensor:
        return self.params[f"{self.name}.{key}"]

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def __call__(self, x: Tensor) -> Tensor:
        kind, norm = self.config.kind, self.config.normalization
        if kind == "average":
            return pool_average(x)
        if kind == "max":
            return pool_max(x)
        if kind == "bow":
            return normalize_pooled(pool_bow(x, self.p("w"), self.p("b")), norm, blocked=False)
        if kind == "netvlad":
            v = pool_netvlad(x, self.p("w"), self.p("b"), self.p("c"))
        elif kind == "netrvlad":
            v = pool_netrvlad(x, self.p("w"), self.p("b"))
        else:
            v = pool_netfv(x, self.p("w"), self.p("b"), self.p("c"), self.p("r"))
        return normalize_pooled(v, norm)
