"""Context Gating and its comparators.

Context Gating re-weights each input dimension by a learned gate computed
from the whole input, ``y = sigmoid(W x + b) * x``.  Because the gate lies in
(0, 1), inputs in [0, 1] (label probabilities) stay in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, linear, relu, sigmoid

AFTER_POOLING = ("none", "cg", "glu")
AFTER_CLASSIFIER = ("none", "cg")


def context_gate(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    x = as_tensor(x)
    return sigmoid(linear(x, W, b)) * x


def glu(x: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    x = as_tensor(x)
    return sigmoid(linear(x, W1, b1)) * linear(x, W2, b2)


def residual_block(x: Tensor, W: Tensor, b: Tensor, f=relu) -> Tensor:
    x = as_tensor(x)
    return f(linear(x, W, b)) + x


def _square_params(n: int, rng: np.random.Generator, dtype, prefix: str) -> dict[str, Tensor]:
    W = rng.normal(0.0, 1.0 / np.sqrt(n), (n, n)).astype(dtype)
    return {
        f"{prefix}.W": Tensor(W, requires_grad=True, name=f"{prefix}.W"),
        f"{prefix}.b": Tensor(np.zeros(n, dtype), requires_grad=True, name=f"{prefix}.b"),
    }


class ContextGating:
    def __init__(self, n: int, rng: np.random.Generator, dtype=np.float64, name: str = "cg"):
        self.n = n
        self.name = name
        self.params = _square_params(n, rng, dtype, name)

    @property
    def W(self) -> Tensor:
        return self.params[f"{self.name}.W"]

    @property
    def b(self) -> Tensor:
        return self.params[f"{self.name}.b"]

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def __call__(self, x: Tensor) -> Tensor:
        return context_gate(x, self.W, self.b)


class GatedLinearUnit:
    def __init__(self, n: int, rng: np.random.Generator, dtype=np.float64, name: str = "glu"):
        self.n = n
        self.name = name
        self.params = {**_square_params(n, rng, dtype, f"{name}.gate"),
                       **_square_params(n, rng, dtype, f"{name}.value")}

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def __call__(self, x: Tensor) -> Tensor:
        p, nm = self.params, self.name
        return glu(x, p[f"{nm}.gate.W"], p[f"{nm}.gate.b"], p[f"{nm}.value.W"], p[f"{nm}.value.b"])


def make_gate(kind: str, n: int, rng: np.random.Generator, dtype, name: str,
              allowed: tuple[str, ...] = AFTER_POOLING):
    """Build the gating unit for one slot; ``None`` for ``kind == "none"``."""
    if kind not in allowed:
        raise ValueError(f"gating kind {kind!r} not allowed here; expected one of {allowed}")
    if kind == "cg":
        return ContextGating(n, rng, dtype, name)
    if kind == "glu":
        return GatedLinearUnit(n, rng, dtype, name)
    return None


@dataclass
class GradientIdentityReport:
    autodiff: np.ndarray
    closed_form: np.ndarray
    max_abs_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tolerance


def cg_backward_identity_check(x: np.ndarray, W: np.ndarray, b: np.ndarray,
                               upstream: np.ndarray, tolerance: float = 1e-10
                               ) -> GradientIdentityReport:
    """Compare the autodiff input gradient of Context Gating with its closed form.

    With ``g = sigmoid(W x + b)`` the input gradient is
    ``g * u + W.T @ (g * (1 - g) * x * u)``: the upstream signal passes
    through scaled by the gate, plus the contribution through the gate itself.
    """
    x = np.asarray(x, dtype=np.float64)
    xt = Tensor(x, requires_grad=True)
    y = context_gate(xt, Tensor(np.asarray(W, np.float64)), Tensor(np.asarray(b, np.float64)))
    y.backward(upstream)
    g = 1.0 / (1.0 + np.exp(-(W @ x + b)))
    closed = g * upstream + W.T @ (g * (1.0 - g) * x * upstream)
    err = float(np.max(np.abs(xt.grad - closed))) if closed.size else 0.0
    return GradientIdentityReport(xt.grad, closed, err, tolerance)
