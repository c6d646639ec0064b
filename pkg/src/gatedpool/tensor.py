"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable primitive used by the pooling, gating and classifier
layers lives here.  A :class:`Tensor` wraps a numpy array; operations on
tensors that require gradients record their parents and a backward closure.
Calling :meth:`Tensor.backward` walks the recorded graph in reverse
construction order, which is a valid reverse topological order because a
node can only be built after its inputs.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "ShapeError",
    "UsageError",
    "Graph",
    "GradCheckReport",
    "BatchNorm",
    "as_tensor",
    "default_dtype",
    "no_grad",
    "get_default_dtype",
    "set_default_dtype",
    "matmul",
    "linear",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "softmax",
    "clip",
    "concat",
    "l2_normalize",
    "max_reduce",
    "batch_norm",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class UsageError(RuntimeError):
    """The graph API was driven in an invalid order."""


_DEFAULT_DTYPE = np.dtype(np.float64)
_GRAD_ENABLED = True
_counter = itertools.count()


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new leaf tensors."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording the graph (inference)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A node in the computation graph.

    ``data`` holds the forward value.  ``grad`` is filled in by
    :meth:`backward`; for leaves it accumulates across calls until
    :meth:`zero_grad`, for intermediate nodes it is overwritten.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f" or not isinstance(data, np.ndarray):
            # Python scalars/lists and integer arrays take the default precision
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_counter)

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: Sequence[Tensor],
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        out._seq = next(_counter)
        out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # -- reverse mode ---------------------------------------------------------
    def backward(self, upstream=None) -> None:
        if not self.requires_grad:
            raise UsageError("backward() on a tensor that does not require gradients")
        if upstream is None:
            if self.data.size != 1:
                raise UsageError("upstream gradient required for non-scalar output")
            upstream = np.ones_like(self.data)
        upstream = np.asarray(upstream, dtype=self.data.dtype)
        if upstream.shape != self.shape:
            raise ShapeError("backward", upstream.shape, self.shape)

        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in nodes:
                continue
            nodes[id(node)] = node
            stack.extend(p for p in node._parents if p.requires_grad)

        pending: dict[int, np.ndarray] = {id(self): upstream}
        for node in sorted(nodes.values(), key=lambda t: t._seq, reverse=True):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operator sugar ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int) -> Tensor:
        return swapaxes(self, a, b)

    @property
    def T(self) -> Tensor:
        return swapaxes(self, -1, -2)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data + b.data, "add", (a, b),
                           lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data - b.data, "sub", (a, b),
                           lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, "mul", (a, b),
                           lambda g: (_unbroadcast(g * bd, ad.shape),
                                      _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return Tensor._from_op(out, "div", (a, b),
                           lambda g: (_unbroadcast(g / bd, ad.shape),
                                      _unbroadcast(-g * out / bd, bd.shape)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, "exp", (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op(np.log(xd), "log", (x,), lambda g: (g / xd,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return Tensor._from_op(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False),
                           "relu", (x,), lambda g: (g * mask,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor._from_op(np.clip(x.data, lo, hi), "clip", (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy semantics for 1-D operands and batch dims."""
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul", a.shape, b.shape)
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise ShapeError("matmul", a.shape, b.shape)
    A = a.data if a.ndim > 1 else a.data[None, :]
    B = b.data if b.ndim > 1 else b.data[:, None]
    try:
        P = A @ B
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    out = P
    if a.ndim == 1:
        out = out[..., 0, :]
    if b.ndim == 1:
        out = out[..., 0]

    def backward(g):
        G = g
        if b.ndim == 1:
            G = G[..., None]
        if a.ndim == 1:
            G = G[..., None, :]
        gA = _unbroadcast(G @ np.swapaxes(B, -1, -2), A.shape).reshape(a.shape)
        gB = _unbroadcast(np.swapaxes(A, -1, -2) @ G, B.shape).reshape(b.shape)
        return gA, gB

    return Tensor._from_op(out, "matmul", (a, b), backward)


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W.T + b`` for ``W`` of shape ``(out, in)``; ``x`` may carry batch dims."""
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError("linear", x.shape, W.shape)
    y = matmul(x, swapaxes(W, 0, 1))
    if b is not None:
        if b.shape != (W.shape[0],):
            raise ShapeError("linear", W.shape, b.shape)
        y = add(y, b)
    return y


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, tuple(shape)) from None
    return Tensor._from_op(out, "reshape", (x,), lambda g: (g.reshape(src),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return Tensor._from_op(np.swapaxes(x.data, a, b), "swapaxes", (x,),
                           lambda g: (np.swapaxes(g, a, b),))


def getitem(x: Tensor, index) -> Tensor:
    src, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(src, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(x.data[index], "getitem", (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", ref, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor._from_op(out, "concat", tensors,
                           lambda g: tuple(np.split(g, bounds, axis=ax)))


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._from_op(np.asarray(out), "sum", (x,), backward)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(reduce_sum(x, axis, keepdims), 1.0 / n)


def max_reduce(x: Tensor, axis: int) -> Tensor:
    """Maximum along ``axis``; the gradient flows to the first maximiser."""
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)
    src, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(src, dtype=dtype)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return Tensor._from_op(np.squeeze(out, axis=axis), "max", (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, "softmax", (x,), backward)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Scale slices along ``axis`` to unit L2 norm; all-zero slices stay zero."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    nonzero = norm > 0
    safe = np.where(nonzero, norm, 1.0).astype(x.dtype, copy=False)
    out = x.data / safe

    def backward(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(nonzero, (g - out * proj) / safe, g),)

    return Tensor._from_op(out, "l2_normalize", (x,), backward)


# ---------------------------------------------------------------------------
# batch normalization


def batch_norm(x: Tensor, scale: Tensor, shift: Tensor, mean: np.ndarray | None = None,
               var: np.ndarray | None = None, eps: float = 1e-6) -> Tensor:
    """Normalize ``x`` of shape ``(B, n)`` per column, then scale and shift.

    With ``mean``/``var`` given the statistics are treated as constants
    (inference); otherwise batch statistics are used and differentiated through.
    """
    if x.ndim != 2 or scale.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ShapeError("batch_norm", x.shape, scale.shape)
    xd, gam = x.data, scale.data
    if mean is None:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in train mode needs a batch of at least 2")
        mu = xd.mean(axis=0)
        var_b = xd.var(axis=0)
        inv = 1.0 / np.sqrt(var_b + eps)
        xhat = (xd - mu) * inv
        n = xd.shape[0]

        def backward(g):
            dxhat = g * gam
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        inv = (1.0 / np.sqrt(np.asarray(var) + eps)).astype(xd.dtype, copy=False)
        xhat = (xd - np.asarray(mean, dtype=xd.dtype)) * inv

        def backward(g):
            return g * gam * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    out = (xhat * gam + shift.data).astype(xd.dtype, copy=False)
    return Tensor._from_op(out, "batch_norm", (x, scale, shift), backward)


class BatchNorm:
    """Learnable scale/shift plus running statistics for one feature layer."""

    def __init__(self, n: int, momentum: float = 0.99, eps: float = 1e-6, dtype=None,
                 name: str = "bn"):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        dtype = np.dtype(dtype or _DEFAULT_DTYPE)
        self.scale = Tensor(np.ones(n, dtype), requires_grad=True, name=f"{name}.scale")
        self.shift = Tensor(np.zeros(n, dtype), requires_grad=True, name=f"{name}.shift")
        self.running_mean = np.zeros(n, dtype)
        self.running_var = np.ones(n, dtype)
        self.momentum = momentum
        self.eps = eps
        self.training = True
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training:
            return batch_norm(x, self.scale, self.shift, self.running_mean,
                              self.running_var, self.eps)
        out = batch_norm(x, self.scale, self.shift, eps=self.eps)
        m = self.momentum
        dt = self.running_mean.dtype
        self.running_mean = (m * self.running_mean + (1 - m) * x.data.mean(axis=0)).astype(dt)
        self.running_var = (m * self.running_var + (1 - m) * x.data.var(axis=0)).astype(dt)
        return out

    def parameters(self) -> dict[str, Tensor]:
        return {self.scale.name: self.scale, self.shift.name: self.shift}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}


# ---------------------------------------------------------------------------
# graph wrapper and gradient checking


class Graph:
    """A callable bound to named inputs and parameters.

    ``forward`` wraps the named inputs as gradient-tracking leaves and runs
    ``fn(**inputs)``; ``backward`` propagates an upstream gradient and returns
    the gradient of every named input and parameter.
    """

    def __init__(self, fn: Callable[..., Tensor], params: Mapping[str, Tensor] | None = None):
        self.fn = fn
        self.params = dict(params or {})
        self._inputs: dict[str, Tensor] | None = None
        self._output: Tensor | None = None

    def forward(self, **inputs) -> Tensor:
        self._inputs = {
            k: Tensor(v.data if isinstance(v, Tensor) else v, requires_grad=True, name=k)
            for k, v in inputs.items()
        }
        self._output = self.fn(**self._inputs)
        return self._output

    def backward(self, upstream=None) -> dict[str, np.ndarray]:
        if self._output is None:
            raise UsageError("backward() called before forward()")
        for t in itertools.chain(self._inputs.values(), self.params.values()):
            t.zero_grad()
        self._output.backward(upstream)
        grads = {}
        for k, t in itertools.chain(self._inputs.items(), self.params.items()):
            grads[k] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return grads


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-5

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def table(self) -> str:
        width = max((len(k) for k in self.errors), default=4)
        lines = [f"{'tensor':<{width}}  max_rel_error  status"]
        for k, e in self.errors.items():
            lines.append(f"{k:<{width}}  {e:13.3e}  {'ok' if e < self.tolerance else 'FAIL'}")
        return "\n".join(lines)


def grad_check(fn: Callable[..., Tensor], inputs: Mapping[str, np.ndarray],
               params: Mapping[str, Tensor] | None = None, tolerance: float = 1e-5,
               h: float = 1e-5, max_entries: int | None = 64, seed: int = 0) -> GradCheckReport:
    """Compare reverse-mode gradients against central differences.

    The scalar probed is ``sum(u * fn(...))`` for a fixed random ``u``.  The
    relative error per entry is ``|a - n| / max(1, |a|, |n|)``; the report
    keeps the worst entry per named tensor.  Tensors larger than
    ``max_entries`` are probed on a random subset of entries.
    """
    rng = np.random.default_rng(seed)
    params = dict(params or {})
    arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    for p in params.values():
        if p.dtype != np.float64:
            raise UsageError("grad_check requires 64-bit parameters")

    graph = Graph(fn, params)
    out = graph.forward(**arrays)
    u = rng.standard_normal(out.shape)
    analytic = graph.backward(u)

    def probe() -> float:
        return float(np.sum(u * fn(**{k: Tensor(v) for k, v in arrays.items()}).data))

    report = GradCheckReport(tolerance=tolerance)
    targets = [(k, arrays[k]) for k in arrays] + [(k, p.data) for k, p in params.items()]
    for name, arr in targets:
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = probe()
            flat[i] = orig - h
            fm = probe()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = float(a_flat[i])
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
        report.errors[name] = worst
    return report
