"""Per-label mixture-of-experts classifier.

For label ``l`` each of ``E`` logistic experts votes ``sigmoid(w_le . x + b_le)``
and a softmax gate over ``E`` (+1 optional null expert) logits weighs the
votes.  The null expert always votes 0, so probability mass routed to it
lowers the label score.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, linear, sigmoid, softmax


def moe_forward(x: Tensor, expert_w: Tensor, expert_b: Tensor, gate_w: Tensor,
                gate_b: Tensor) -> Tensor:
    """Label probabilities for ``x`` of shape ``(n,)`` or ``(B, n)``.

    ``expert_w`` is ``(L, E, n)``; ``gate_w`` is ``(L, G, n)`` with ``G = E``
    (no null expert) or ``G = E + 1`` (the last gate belongs to the null expert).
    """
    x = as_tensor(x)
    L, E, n = expert_w.shape
    G = gate_w.shape[1]
    lead = x.shape[:-1]
    experts = sigmoid(linear(x, expert_w.reshape(L * E, n), expert_b.reshape(L * E)))
    gates = softmax(linear(x, gate_w.reshape(L * G, n), gate_b.reshape(L * G))
                    .reshape(lead + (L, G)), axis=-1)
    if G > E:
        gates = gates[..., :E]
    return (gates * experts.reshape(lead + (L, E))).sum(axis=-1)


class MixtureOfExperts:
    def __init__(self, n: int, num_labels: int, experts: int = 2, null_expert: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float64, name: str = "moe"):
        if experts < 1:
            raise ValueError("at least one expert is required")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n, self.num_labels, self.experts = n, num_labels, experts
        self.null_expert = null_expert
        self.name = name
        G = experts + 1 if null_expert else experts
        std = 1.0 / np.sqrt(n)
        shapes = {
            "expert_w": rng.normal(0.0, std, (num_labels, experts, n)),
            "expert_b": np.zeros((num_labels, experts)),
            "gate_w": rng.normal(0.0, std, (num_labels, G, n)),
            "gate_b": np.zeros((num_labels, G)),
        }
        self.params = {f"{name}.{k}": Tensor(np.asarray(v, dtype), requires_grad=True,
                                            name=f"{name}.{k}")
                       for k, v in shapes.items()}

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def __call__(self, x: Tensor) -> Tensor:
        p, nm = self.params, self.name
        return moe_forward(x, p[f"{nm}.expert_w"], p[f"{nm}.expert_b"],
                           p[f"{nm}.gate_w"], p[f"{nm}.gate_b"])
