"""Dense float tensors with reverse-mode automatic differentiation.

The tape is implicit: every differentiable op links its result to its
inputs together with a backward closure, and assigns the result a
monotonically increasing sequence number. Creation order is execution
order, which is a valid topological order, so ``backward`` replays the
reachable subgraph in exact reverse-creation order.

Training runs in float32. Ops preserve the dtype of their inputs and let
numpy promote float32/float64 mixes, which is what lets the finite
difference oracle probe a float32 graph with float64 inputs.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from ..errors import ContractError, DimensionError, UnsupportedOpError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_seq_counter = itertools.count()

ArrayLike = Union["Tensor", np.ndarray, float, int, list, tuple]


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation.

    ``grad`` is populated by :func:`backward` for every tensor on the path
    from a leaf with ``requires_grad`` to the loss; it always matches
    ``data`` in shape. Tensors are never mutated by ops, so sharing the
    underlying array (e.g. through ``stop_gradient``) is safe.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_seq")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: tuple = (),
        _backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._seq = next(_seq_counter)

    # -- introspection ----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Alias of stop_gradient: same array, cut from the tape."""
        return Tensor(self.data, requires_grad=False)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self) -> None:
        backward(self)


def as_tensor(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    """Wrap ``x`` as a constant tensor, matching ``like``'s dtype for scalars."""
    if isinstance(x, Tensor):
        return x
    if like is not None and np.isscalar(x):
        return Tensor(np.asarray(x, dtype=like.data.dtype))
    return Tensor(x)


def _coerce_pair(a: ArrayLike, b: ArrayLike) -> tuple:
    """Wrap both operands, matching a raw scalar's dtype to the tensor side."""
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Record an op on the tape iff some input participates in grad."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- backward driver -------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor the scalar ``loss`` depends on.

    Gradients accumulate into existing ``grad`` buffers (call
    ``zero_grad`` between steps). Tensors not reachable from the loss are
    left untouched (absent grad counts as zero).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Iteratively collect the reachable subgraph; creation order is a
    # topological order, so sorting by _seq and reversing is exact
    # reverse execution order.
    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq)

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(nodes):
        g = pending.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g
        if t._backward is None:
            if t._parents:
                raise UnsupportedOpError(
                    f"tensor {t!r} has inputs but no registered backward rule"
                )
            continue
        parent_grads = t._backward(g)
        for parent, pg in zip(t._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = pending.get(id(parent))
            pending[id(parent)] = pg if acc is None else acc + pg


# -- arithmetic -------------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), bw)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def pow_const(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = a.data**p

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * (0.5 / out),))


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul requires matrices, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}"
        )
    try:
        out = a.data @ b.data
    except ValueError as e:  # non-broadcastable batch dims
        raise DimensionError(f"matmul batch dims disagree: {a.shape} @ {b.shape}") from e

    def bw(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        # collapse broadcast batch dims back onto the operands
        if ga.shape != a.shape:
            ga = _unbroadcast_batched(ga, a.shape)
        if gb.shape != b.shape:
            gb = _unbroadcast_batched(gb, b.shape)
        return ga, gb

    return _make(out, (a, b), bw)


def _unbroadcast_batched(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Like _unbroadcast but never touches the trailing two (matrix) axes."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, s in enumerate(shape[:-2]) if s == 1 and grad.shape[i] != 1
    )
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- shape manipulation ------------------------------------------------------


def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax0: int, ax1: int) -> Tensor:
    a = as_tensor(a)
    out = a.data.swapaxes(ax0, ax1)
    return _make(out, (a,), lambda g: (g.swapaxes(ax0, ax1),))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat requires at least one tensor")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(ts), bw)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.data[index]

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        return (ga,)

    return _make(out, (a,), bw)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select per-example rows: x[B, S, ...] gathered to [B, k, ...].

    ``idx`` is an integer array of shape [B, k]; row j of example b in the
    output is x[b, idx[b, j]]. Gradient scatters back additively, so only
    gathered rows receive gradient.
    """
    x = as_tensor(x)
    idx = np.asarray(idx)
    if idx.ndim != 2 or x.ndim < 2 or idx.shape[0] != x.shape[0]:
        raise ContractError(f"gather_rows: index shape {idx.shape} does not match {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise ContractError(
            f"gather_rows: index out of range for axis of size {x.shape[1]}"
        )
    batch = np.arange(x.shape[0])[:, None]
    out = x.data[batch, idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (batch, idx), g)
        return (gx,)

    return _make(out, (x,), bw)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Look up rows of a [N, d] table; gradient scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(
            f"embedding: index out of range for table of {table.shape[0]} rows"
        )
    out = table.data[idx]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(out, (table,), bw)


# -- reductions ---------------------------------------------------------------


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    axes = _axis_tuple(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    axes = _axis_tuple(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape) / count,)

    return _make(out, (a,), bw)


# -- gradient flow control -----------------------------------------------------


def stop_gradient(a: Tensor) -> Tensor:
    """Identity forward (shares the array bitwise), zero backward."""
    a = as_tensor(a)
    return Tensor(a.data, requires_grad=False)


def straight_through(soft: Tensor, hard: ArrayLike) -> Tensor:
    """Forward takes ``hard``'s values exactly; backward flows to ``soft``.

    Composing soft + stop_gradient(hard - soft) would reintroduce float
    rounding in the forward value; a dedicated rule keeps it bit-exact.
    """
    soft = as_tensor(soft)
    hard_arr = hard.data if isinstance(hard, Tensor) else np.asarray(hard, dtype=soft.data.dtype)
    if hard_arr.shape != soft.shape:
        raise DimensionError(
            f"straight_through shapes disagree: {hard_arr.shape} vs {soft.shape}"
        )
    return _make(hard_arr.copy(), (soft,), lambda g: (g,))
