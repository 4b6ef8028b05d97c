"""Reverse-mode automatic differentiation over dense float64 arrays.

Small dynamic-graph engine sized for desk-scale sequence models: each
operation records its inputs and a backward closure, and ``backward``
walks the tape in reverse topological order.  Matrix products go through
``np.einsum`` with a fixed reduction order so results are bit-reproducible
and independent of how rows are batched.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "add",
    "hadamard",
    "matmul",
    "tanh",
    "sigmoid",
    "relu",
    "softmax_rows",
    "concat",
    "mean",
    "tsum",
    "mse",
    "backward",
    "gradients",
    "Adam",
]


def _as_f64(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def _require_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: produced non-finite values")


class Tensor:
    """Node in the computation graph holding a float64 array.

    Leaf tensors with ``requires_grad=True`` are trainable parameters;
    everything built from them records the operation for the backward
    pass.  Treat ``data`` as read-only once the tensor is in a graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward_fn=None, _op="leaf"):
        arr = _as_f64(data)
        if _op == "leaf":
            _require_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward_fn
        self.op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return hadamard(self, other)

    def __rmul__(self, other):
        return hadamard(other, self)

    def __sub__(self, other):
        return add(self, hadamard(other, -1.0))

    def __neg__(self):
        return hadamard(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)

    def backward(self):
        backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Wrap array-like data as a leaf tensor, rejecting NaN/Inf."""
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    _require_finite(data, op)
    return Tensor(data, _parents=tuple(parents), _backward_fn=backward_fn, _op=op)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were introduced or broadcast."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out, (a, b), backward_fn, "add")


def hadamard(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        with np.errstate(over="ignore"):
            out = a.data * b.data
    except ValueError:
        raise ValueError(f"hadamard: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), backward_fn, "hadamard")


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ: {a.shape} vs {b.shape}")
    # einsum keeps a fixed reduction order: bit-identical per row regardless
    # of how many rows are in the batch.
    out = np.einsum("ij,jk->ik", a.data, b.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(np.einsum("ik,jk->ij", g, b.data))
        if b.requires_grad:
            b._accumulate(np.einsum("ij,ik->jk", a.data, g))

    return _make(out, (a, b), backward_fn, "matmul")


def _unary(a, fn, dfn, op: str) -> Tensor:
    a = _wrap(a)
    out = fn(a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * dfn(a.data, out))

    return _make(out, (a,), backward_fn, op)


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y, "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    return _unary(a, _sigmoid, lambda x, y: y * (1.0 - y), "sigmoid")


def relu(a) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64), "relu")


def softmax_rows(a) -> Tensor:
    """Row-wise softmax with max-subtraction; accepts a vector or matrix."""
    a = _wrap(a)
    if a.data.ndim not in (1, 2):
        raise ValueError(f"softmax_rows: expects 1-D or 2-D input, got shape {a.shape}")
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        if a.requires_grad:
            dot = (g * out).sum(axis=-1, keepdims=True)
            a._accumulate(out * (g - dot))

    return _make(out, (a,), backward_fn, "softmax_rows")


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [_wrap(t) for t in tensors]
    if not parts:
        raise ValueError("concat: needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = [p.shape for p in parts]
        raise ValueError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return _make(out, parts, backward_fn, "concat")


def tslice(a, key) -> Tensor:
    """Basic (non-fancy) indexing into a tensor, e.g. ``x[:, t, :]``."""
    a = _wrap(a)
    out = a.data[key]

    def backward_fn(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] += g
            a._accumulate(full)

    return _make(out, (a,), backward_fn, "slice")


def _reduce(a, np_fn, scale_fn, axis, keepdims, op):
    a = _wrap(a)
    out = np_fn(a.data, axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if not a.requires_grad:
            return
        if axis is None:
            expanded = np.broadcast_to(g, a.shape)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            expanded = np.broadcast_to(gg, a.shape)
        a._accumulate(expanded * scale_fn(a.data, axis))

    return _make(np.asarray(out), (a,), backward_fn, op)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    def scale(x, ax):
        n = x.size if ax is None else x.shape[ax]
        return 1.0 / n

    return _reduce(a, np.mean, scale, axis, keepdims, "mean")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce(a, np.sum, lambda x, ax: 1.0, axis, keepdims, "sum")


def mse(pred, target) -> Tensor:
    """Mean squared error, reduced over every element."""
    pred, target = _wrap(pred), _wrap(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    out = np.asarray(np.mean(diff * diff))

    def backward_fn(g):
        scale = 2.0 / diff.size
        if pred.requires_grad:
            pred._accumulate(g * scale * diff)
        if target.requires_grad:
            target._accumulate(-g * scale * diff)

    return _make(out, (pred, target), backward_fn, "mse")


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor that requires it.

    ``loss`` must be a scalar node.  Gradients from multiple paths to the
    same leaf accumulate by summation.  One backward pass per graph.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_topo_order(loss)):
        if node._backward_fn is not None and node.grad is not None and node.requires_grad:
            node._backward_fn(node.grad)


def gradients(loss: Tensor, params) -> list[np.ndarray]:
    """Run backward and return the gradient for each requested leaf.

    Raises if a requested parameter never entered the graph (detached).
    """
    backward(loss)
    out = []
    for i, p in enumerate(params):
        if not p.requires_grad:
            raise ValueError(f"gradients: parameter {i} is not trainable")
        if p.grad is None:
            raise ValueError(f"gradients: parameter {i} is detached from the loss graph")
        out.append(p.grad)
    return out


class Adam:
    """Bias-corrected adaptive-moment optimizer over named numpy arrays."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"Adam: lr must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Return updated parameters; moment state advances in place."""
        self.t += 1
        out = {}
        for name, value in params.items():
            g = grads[name]
            if g.shape != value.shape:
                raise ValueError(f"Adam: gradient shape {g.shape} does not match parameter {name} {value.shape}")
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(value)
                v = np.zeros_like(value)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name] = m
            self._v[name] = v
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            out[name] = value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out
