"""
Minimal define-by-run tensor library with reverse-mode automatic differentiation.

Every differentiable op builds a new :class:`Tensor` holding references to its
inputs and a closure mapping the output gradient to input gradients. Calling
:func:`backward` on a scalar walks that graph in reverse topological order.

Only what the vision transformer needs is implemented; broadcasting follows
numpy rules and gradients are summed back to the operand shape.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError

DEFAULT_DTYPE = np.float32

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """An n-dimensional float array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=DEFAULT_DTYPE):
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        tracked = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = tracked
        if tracked:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    def __len__(self):
        return self.data.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take_slice(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)

    def permute(self, *axes):
        return permute(self, axes)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = x.dtype if isinstance(x, np.ndarray) and x.dtype.kind == "f" else DEFAULT_DTYPE
    return Tensor(x, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _coerce_pair(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    return a, b


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------

def build_tape(root: Tensor) -> list:
    """Return the tracked graph under ``root`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(root, False)]
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor t."""
    if loss.data.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward() on a tensor that does not require grad")
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(build_tape(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(out, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from None

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(out, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(out, (a, b), grad_fn, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = x.data.dtype.type(factor)
    return Tensor._result(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._result(out, (a, b), grad_fn, "matmul")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return Tensor._result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose needs at least 2 dims, got {x.shape}")
    out = np.swapaxes(x.data, -1, -2)
    return Tensor._result(out, (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return Tensor._result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "permute")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, tensors, grad_fn, "concat")


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def take_slice(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing; gradient scatters back with accumulation."""
    out = np.array(x.data[index], dtype=x.dtype, copy=True)

    def grad_fn(g):
        full = np.zeros_like(x.data)
        if _is_basic_index(index):
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._result(out, (x,), grad_fn, "slice")


def embedding(weight: Tensor, indices) -> Tensor:
    """Row lookup ``weight[indices]``; repeated indices accumulate gradient."""
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size and (indices.min() < 0 or indices.max() >= weight.shape[0]):
        raise IndexError(f"embedding index out of range [0, {weight.shape[0]})")
    return take_slice(weight, indices)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy name
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)
    return Tensor._result(out, (x,), lambda g: (_expand_reduced(g, x.shape, axis, keepdims).copy(),), "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims), dtype=x.dtype)
    count = x.data.size // max(out.size, 1)

    def grad_fn(g):
        return (_expand_reduced(g, x.shape, axis, keepdims) / x.dtype.type(count),)

    return Tensor._result(out, (x,), grad_fn, "mean")


def var(x: Tensor, axis=-1, keepdims=False) -> Tensor:
    """Population variance along ``axis``."""
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    out = np.asarray((centered * centered).mean(axis=axis, keepdims=keepdims), dtype=x.dtype)
    n = x.shape[axis]

    def grad_fn(g):
        g = g if keepdims else np.expand_dims(g, axis)
        return (g * centered * x.dtype.type(2.0 / n),)

    return Tensor._result(out, (x,), grad_fn, "var")


# ---------------------------------------------------------------------------
# neural-network primitives
# ---------------------------------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (x,), grad_fn, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: feature size {d} vs gamma {gamma.shape} / beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + x.dtype.type(eps))
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def grad_fn(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = inv_std * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(out, (x, gamma, beta), grad_fn, "layer_norm")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    half = x.dtype.type(0.5)
    xd = x.data
    t = np.tanh(c * (xd + k * xd ** 3))
    out = half * xd * (1 + t)

    def grad_fn(g):
        dt = (1 - t * t) * c * (1 + 3 * k * xd * xd)
        return (g * (half * (1 + t) + half * xd * dt),)

    return Tensor._result(out, (x,), grad_fn, "gelu")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (B, C) logits, got {logits.shape}")
    batch, classes = logits.shape
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if labels.shape[0] != batch:
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for batch of {batch}")
    bad = labels[(labels < 0) | (labels >= classes)]
    if bad.size:
        raise IndexError(f"label {int(bad[0])} out of range [0, {classes})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(batch)
    nll = lse[:, 0] - shifted[rows, labels]
    out = np.asarray(nll.mean(), dtype=logits.dtype)

    def grad_fn(g):
        p = np.exp(shifted - lse)
        p[rows, labels] -= 1
        return (p * (g / batch),)

    return Tensor._result(out, (logits,), grad_fn, "cross_entropy")


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout. Identity (the same object) in eval mode or when p == 0."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    if rng is None:
        raise ContractError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    return Tensor._result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def patch_conv(images: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Convolution with kernel size == stride (non-overlapping patches).

    images (B, C, H, W), weight (D, C, P, P), bias (D,) -> (B, D, H/P, W/P).
    """
    B, C, H, W = images.shape
    D, Cw, P, P2 = weight.shape
    if C != Cw or P != P2 or H % P or W % P:
        raise ShapeError(f"patch_conv: images {images.shape} incompatible with kernel {weight.shape}")
    gh, gw = H // P, W // P
    view = images.data.reshape(B, C, gh, P, gw, P)
    out = np.einsum("bciujv,dcuv->bdij", view, weight.data, optimize=True) + bias.data[None, :, None, None]
    out = out.astype(images.dtype if images.dtype == weight.dtype else np.result_type(images.dtype, weight.dtype))

    def grad_fn(g):
        gi = gw_ = None
        if images.requires_grad:
            gi = np.einsum("bdij,dcuv->bciujv", g, weight.data, optimize=True).reshape(B, C, H, W)
        if weight.requires_grad:
            gw_ = np.einsum("bdij,bciujv->dcuv", g, view, optimize=True)
        return gi, gw_, g.sum(axis=(0, 2, 3))

    return Tensor._result(out, (images, weight, bias), grad_fn, "patch_conv")

