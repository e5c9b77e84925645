"""Reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps an ndarray and, when gradients are requested, records the
operation that produced it. ``backward`` replays the tape in reverse
topological order. Only the operations the sequence models need are
implemented: arithmetic with broadcasting, matmul, reductions, (log-)softmax,
layer norm, embedding lookup, gather, masking and dropout. There is no graph
optimizer and no GPU path.

Numerical guards: ``log`` floors its argument at ``LOG_EPS`` and ``exp``
clamps its argument, so forward passes on finite inputs never produce
NaN or Inf.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

LOG_EPS = 1e-12
_EXP_MAX = 80.0

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation / decoding)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """An ndarray plus optional gradient bookkeeping.

    Values are float32 or float64; the dtype of the inputs is preserved by
    every op. ``data`` is treated as immutable once the tensor has been used
    in a recorded computation (the trainer mutates parameter data only
    between steps, after gradients have been consumed).
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # Operator sugar; the actual math lives in module-level functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Create a result tensor, recording the op only if a parent needs grads."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(t.dtype, copy=True)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), bwd)


def div(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(data, (a, b), bwd)


def log(a: Tensor) -> Tensor:
    """Natural log with the argument floored at LOG_EPS."""
    floored = np.maximum(a.data, LOG_EPS)
    data = np.log(floored)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g / floored)

    return _node(data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    data = np.exp(np.minimum(a.data, _EXP_MAX))

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * data)

    return _node(data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    data = np.where(keep, a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * keep)

    return _node(data, (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _node(data, (a,), bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, np.transpose(g, inverse))

    return _node(data, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _restore_axes(g: np.ndarray, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _restore_axes(g, a.shape, axis, keepdims))

    return _node(data, (a,), bwd)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.size // data.size

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _restore_axes(g, a.shape, axis, keepdims) / count)

    return _node(data, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise InvalidInputError("matmul operands must have at least 2 dimensions")
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _node(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# fused neural-net ops
# ---------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            _accumulate(a, data * (g - dot))

    return _node(data, (a,), bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return _node(data, (a,), bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mean = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mean) * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).sum(axis=tuple(range(g.ndim - 1))))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=tuple(range(g.ndim - 1))))
        if a.requires_grad:
            gx = g * gain.data
            n = a.shape[-1]
            term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(a, term * inv)

    return _node(data, (a, gain, bias), bwd)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = weight[ids[...], :]."""
    ids = np.asarray(ids)
    data = weight.data[ids]

    def bwd(g):
        if weight.requires_grad:
            gw = np.zeros_like(weight.data)
            np.add.at(gw, ids, g)
            _accumulate(weight, gw)

    return _node(data, (weight,), bwd)


def take_along_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry per row of the last axis: out[...] = a[..., idx[...]]."""
    idx = np.asarray(idx)
    data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.put_along_axis(ga, idx[..., None], g[..., None], axis=-1)
            _accumulate(a, ga)

    return _node(data, (a,), bwd)


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is True with ``value`` (no grad there)."""
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, np.asarray(value, dtype=a.dtype), a.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.where(mask, 0.0, g), a.shape))

    return _node(data, (a,), bwd)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    keep = keep.astype(a.dtype)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * keep)

    return _node(a.data * keep, (a,), bwd)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Run reverse-mode differentiation from a scalar loss.

    Populates ``.grad`` on every tensor in the recorded graph that requires
    gradients and returns the gradients of all *named* leaves as a map.
    """
    if loss.size != 1:
        raise InvalidInputError(
            f"backward requires a scalar loss, got shape {loss.shape}"
        )
    if not loss.requires_grad:
        return {}
    loss.grad = np.ones_like(loss.data)
    grads: dict[str, np.ndarray] = {}
    for node in reversed(_topo_order(loss)):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)
            if node is not loss:
                node.grad = None  # free intermediate buffers
        elif node.name is not None and node.grad is not None:
            grads[node.name] = node.grad
    return grads


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
