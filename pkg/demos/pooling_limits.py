"""Learnable pooling layers and their classical hard-assignment limits.

With a codebook expressed as assignment logits ``2 c.x - |c|^2`` and scaled by
a large temperature, soft assignment becomes nearest-centre assignment: NetVLAD
turns into classical VLAD and soft BoW into an integer histogram.  NetRVLAD is
NetVLAD with the anchors fixed at zero.

Run: python3 demos/pooling_limits.py
"""

import numpy as np

from gatedpool.pooling import Pooling, PoolingConfig, pool_bow, pool_netrvlad, pool_netvlad
from gatedpool.tensor import Tensor

rng = np.random.default_rng(0)
x = rng.normal(size=(12, 3))
centers = rng.normal(size=(4, 3)) * 2
w, b = 2 * centers, -(centers ** 2).sum(axis=1)
nearest = np.argmin(((x[:, None] - centers[None]) ** 2).sum(-1), axis=1)

for tau in (1.0, 10.0, 1000.0):
    hist = pool_bow(Tensor(x), Tensor(tau * w), Tensor(tau * b)).data
    print(f"tau={tau:>6}: soft histogram {np.round(hist, 3)}")
print(f"hard histogram      {np.bincount(nearest, minlength=4)}")

vlad = np.zeros_like(centers)
for i, k in enumerate(nearest):
    vlad[k] += x[i] - centers[k]
soft = pool_netvlad(Tensor(x), Tensor(1e3 * w), Tensor(1e3 * b), Tensor(centers)).data
print("NetVLAD(tau=1e3) vs VLAD, max diff:", np.abs(soft - vlad).max())

rvlad = pool_netrvlad(Tensor(x), Tensor(w), Tensor(b)).data
zero_anchor = pool_netvlad(Tensor(x), Tensor(w), Tensor(b), Tensor(np.zeros_like(centers))).data
print("NetRVLAD vs zero-anchor NetVLAD, max diff:", np.abs(rvlad - zero_anchor).max())

# Layers are orderless: shuffling the frames leaves every pooled vector unchanged.
for kind in ("average", "max", "bow", "netvlad", "netrvlad", "netfv"):
    layer = Pooling(PoolingConfig(kind, clusters=4, dim=3), rng)
    out = layer(Tensor(x)).data
    perm = layer(Tensor(x[rng.permutation(len(x))])).data
    print(f"{kind:>8}: output size {out.size:3d}, permutation diff {np.abs(out - perm).max():.1e}")
