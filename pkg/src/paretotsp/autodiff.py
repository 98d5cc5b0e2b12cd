"""Minimal reverse-mode differentiation over dense numpy arrays.

Arrays are immutable once created; every operation records its inputs and a
backward closure on the implicit tape (the creation-ordered graph of Array
nodes), so `backward` on a scalar loss fills `.grad` on every reachable
parameter. There is no implicit broadcasting: each op states the exact shapes
it accepts and raises DimensionError otherwise. Forward outputs are checked
for NaN/Inf on creation.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import (
    BatchTooSmallError,
    BoundsError,
    ContractError,
    DimensionError,
    NoFeasibleActionError,
    NonFiniteError,
)

_ids = itertools.count()


class Array:
    """A dense real array plus its place on the tape.

    `data` is never written after construction. `grad` accumulates across
    backward calls until `zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_id")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op: str = "leaf"):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values entering op '{_op}'")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Array(op={self._op}, shape={self.data.shape})"

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None


def param(data, dtype=np.float64) -> Array:
    """Leaf array marked as trainable."""
    return Array(np.asarray(data, dtype=dtype), requires_grad=True)


def constant(data, dtype=None) -> Array:
    """Leaf array outside the gradient path."""
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype)
    return Array(arr, requires_grad=False)


def backward(loss: Array) -> None:
    """Accumulate dLoss/dX into .grad for every requires_grad Array reachable
    from `loss`. Repeated calls accumulate; callers reset with zero_grad."""
    if loss.shape != ():
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    # Nodes are created in topological order, so descending id order is a
    # valid reverse-topological sweep of the reachable subgraph.
    reachable = []
    seen = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        reachable.append(node)
        stack.extend(node._parents)
    reachable.sort(key=lambda n: n._id, reverse=True)

    staged = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in reachable:
        g = staged.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.accumulate_grad(g)
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in staged:
                staged[key] = staged[key] + pg
            else:
                staged[key] = pg


def _require_2d(x: Array, op: str) -> None:
    if x.data.ndim != 2:
        raise DimensionError(f"{op} expects a 2-D array, got shape {x.shape}")


# ---------------------------------------------------------------------------
# core ops


def matmul(a: Array, b: Array) -> Array:
    """2-D matrix product; dL/da = g @ b.T, dL/db = a.T @ g."""
    _require_2d(a, "matmul")
    _require_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return Array(out_data, _parents=(a, b), _backward=back, _op="matmul")


def bmm(a: Array, b: Array) -> Array:
    """Batched matrix product over matching leading batch dims: (B,p,q)@(B,q,r)."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise DimensionError(f"bmm expects 3-D arrays, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm shapes disagree: {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def back(g):
        return g @ np.swapaxes(b.data, 1, 2), np.swapaxes(a.data, 1, 2) @ g

    return Array(out_data, _parents=(a, b), _backward=back, _op="bmm")


def add(a: Array, b: Array) -> Array:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes disagree: {a.shape} vs {b.shape}")

    def back(g):
        return g, g

    return Array(a.data + b.data, _parents=(a, b), _backward=back, _op="add")


def add_bias(x: Array, b: Array) -> Array:
    """Add a length-c bias vector to every row of an (r, c) array."""
    _require_2d(x, "add_bias")
    if b.data.ndim != 1 or b.shape[0] != x.shape[1]:
        raise DimensionError(f"add_bias bias shape {b.shape} does not match columns of {x.shape}")

    def back(g):
        return g, g.sum(axis=0)

    return Array(x.data + b.data, _parents=(x, b), _backward=back, _op="add_bias")


def mul(a: Array, b: Array) -> Array:
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes disagree: {a.shape} vs {b.shape}")

    def back(g):
        return g * b.data, g * a.data

    return Array(a.data * b.data, _parents=(a, b), _backward=back, _op="mul")


def scale(x: Array, c: float) -> Array:
    c = float(c)

    def back(g):
        return (g * c,)

    return Array(x.data * c, _parents=(x,), _backward=back, _op="scale")


def relu(x: Array) -> Array:
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return Array(np.where(mask, x.data, 0.0), _parents=(x,), _backward=back, _op="relu")


def tanh(x: Array) -> Array:
    t = np.tanh(x.data)

    def back(g):
        return (g * (1.0 - t * t),)

    return Array(t, _parents=(x,), _backward=back, _op="tanh")


def log(x: Array) -> Array:
    if np.any(x.data <= 0):
        raise ContractError("log requires strictly positive inputs")

    def back(g):
        return (g / x.data,)

    return Array(np.log(x.data), _parents=(x,), _backward=back, _op="log")


def concat(parts: list[Array], axis: int = -1) -> Array:
    if not parts:
        raise ContractError("concat needs at least one array")
    ndim = parts[0].data.ndim
    ax = axis % ndim
    for p in parts[1:]:
        if p.data.ndim != ndim:
            raise DimensionError("concat rank mismatch")
        if p.shape[:ax] + p.shape[ax + 1:] != parts[0].shape[:ax] + parts[0].shape[ax + 1:]:
            raise DimensionError(f"concat shapes disagree off-axis: {p.shape} vs {parts[0].shape}")
    sizes = [p.shape[ax] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=ax))

    return Array(np.concatenate([p.data for p in parts], axis=ax),
                 _parents=tuple(parts), _backward=back, _op="concat")


def mean_over_axis(x: Array, axis: int) -> Array:
    if x.data.ndim == 0:
        raise DimensionError("mean_over_axis needs at least one axis")
    ax = axis % x.data.ndim
    k = x.shape[ax]

    def back(g):
        return (np.repeat(np.expand_dims(g / k, ax), k, axis=ax),)

    return Array(x.data.mean(axis=ax), _parents=(x,), _backward=back, _op="mean_over_axis")


def reshape(x: Array, shape) -> Array:
    out_data = x.data.reshape(shape)
    orig = x.data.shape

    def back(g):
        return (g.reshape(orig),)

    return Array(out_data, _parents=(x,), _backward=back, _op="reshape")


def transpose_last2(x: Array) -> Array:
    if x.data.ndim < 2:
        raise DimensionError("transpose_last2 needs ndim >= 2")

    def back(g):
        return (np.swapaxes(g, -1, -2),)

    return Array(np.swapaxes(x.data, -1, -2), _parents=(x,), _backward=back, _op="transpose_last2")


def gather_rows(x: Array, idx) -> Array:
    """Select rows of a 2-D array by index; gradients route back to the
    selected rows only (duplicates accumulate)."""
    _require_2d(x, "gather_rows")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError("gather_rows expects a 1-D index list")
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise BoundsError(f"gather_rows index out of range for {n} rows")

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return Array(x.data[idx], _parents=(x,), _backward=back, _op="gather_rows")


def masked_softmax(logits: Array, mask) -> Array:
    """Softmax over the last axis; entries where mask is True get probability
    exactly 0. Stable via max-subtraction over the unmasked entries."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match logits {logits.shape}")
    feasible = ~mask
    if not feasible.any(axis=-1).all():
        raise NoFeasibleActionError("masked_softmax: a row has every entry masked")
    shifted = np.where(feasible, logits.data, -np.inf)
    mx = shifted.max(axis=-1, keepdims=True)
    ex = np.where(feasible, np.exp(shifted - mx), 0.0)
    probs = ex / ex.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * probs).sum(axis=-1, keepdims=True)
        return (probs * (g - dot),)

    return Array(probs, _parents=(logits,), _backward=back, _op="masked_softmax")


def softmax(logits: Array) -> Array:
    return masked_softmax(logits, np.zeros(logits.shape, dtype=bool))


class BatchNormState:
    """Learnable scale/shift plus running statistics for one normalization layer."""

    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5, momentum: float = 0.1):
        self.scale = param(np.ones(dim), dtype=dtype)
        self.shift = param(np.zeros(dim), dtype=dtype)
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def params(self):
        return [self.scale, self.shift]


def batch_norm(x: Array, state: BatchNormState, mode: str) -> Array:
    """Per-feature normalization of an (B, d) array.

    Train mode normalizes with batch statistics (biased variance) and updates
    the running estimates by EMA; infer mode normalizes with the running
    statistics.
    """
    _require_2d(x, "batch_norm")
    if x.shape[1] != state.scale.shape[0]:
        raise DimensionError(f"batch_norm feature dim {x.shape[1]} != state dim {state.scale.shape[0]}")
    if mode not in ("train", "infer"):
        raise ContractError(f"batch_norm mode must be 'train' or 'infer', got {mode!r}")
    rows = x.shape[0]
    eps = state.eps

    if mode == "train":
        if rows < 2:
            raise BatchTooSmallError("batch_norm train mode needs at least 2 rows")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean) * inv_std
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var * (rows / (rows - 1))

        def back(g):
            gscale = (g * xhat).sum(axis=0)
            gshift = g.sum(axis=0)
            gxhat = g * state.scale.data
            gx = inv_std * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
            return gx, gscale, gshift

    else:
        inv_std = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x.data - state.running_mean) * inv_std

        def back(g):
            gscale = (g * xhat).sum(axis=0)
            gshift = g.sum(axis=0)
            gx = g * state.scale.data * inv_std
            return gx, gscale, gshift

    out = xhat * state.scale.data + state.shift.data
    return Array(out, _parents=(x, state.scale, state.shift), _backward=back, _op="batch_norm")


def global_grad_norm(params: list[Array]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return math.sqrt(total)
