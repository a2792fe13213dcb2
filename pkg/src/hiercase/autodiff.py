"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: each Tensor wraps an ndarray, remembers the tensors it was
computed from, and carries a closure that routes the output gradient back
to them. Calling backward() on a scalar runs the closures in reverse
topological order. Only the operations the sequence models need exist
here; anything passed into an op that is not a Tensor is treated as a
constant and receives no gradient.

The elementwise helpers (sigmoid, tanh, matmul via @, + , * , -) accept
plain ndarrays too and then skip the tape, so model step functions can be
written once and reused for gradient-free inference.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Backward = Callable[[np.ndarray], None]


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    # Make ndarray + Tensor defer to our dunders instead of numpy coercion.
    __array_ufunc__ = None

    def __init__(
        self,
        data: np.ndarray,
        parents: tuple["Tensor", ...] = (),
        backward: Backward | None = None,
    ):
        self.data = data
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # Operator sugar; constants may appear on either side.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _accum(node: Tensor, g: np.ndarray) -> None:
    # First write copies: backward closures may hand the same buffer to
    # several parents, and param grads outlive the pass.
    if node.grad is None:
        node.grad = np.array(g)
    else:
        node.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape the operand had before broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate .grad on every tensor the scalar `loss` depends on."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def add(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a + b
    da, db = _data(a), _data(b)
    out_data = da + db

    def back(g: np.ndarray) -> None:
        if isinstance(a, Tensor):
            _accum(a, _unbroadcast(g, da.shape))
        if isinstance(b, Tensor):
            _accum(b, _unbroadcast(g, db.shape))

    parents = tuple(t for t in (a, b) if isinstance(t, Tensor))
    return Tensor(out_data, parents, back)


def mul(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a * b
    da, db = _data(a), _data(b)
    out_data = da * db

    def back(g: np.ndarray) -> None:
        if isinstance(a, Tensor):
            _accum(a, _unbroadcast(g * db, da.shape))
        if isinstance(b, Tensor):
            _accum(b, _unbroadcast(g * da, db.shape))

    parents = tuple(t for t in (a, b) if isinstance(t, Tensor))
    return Tensor(out_data, parents, back)


def neg(a):
    if not isinstance(a, Tensor):
        return -np.asarray(a)

    def back(g: np.ndarray) -> None:
        _accum(a, -g)

    return Tensor(-a.data, (a,), back)


def matmul(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a @ b
    da, db = _data(a), _data(b)
    out_data = da @ db

    def back(g: np.ndarray) -> None:
        if isinstance(a, Tensor):
            _accum(a, g @ db.T)
        if isinstance(b, Tensor):
            _accum(b, da.T @ g)

    parents = tuple(t for t in (a, b) if isinstance(t, Tensor))
    return Tensor(out_data, parents, back)


def sigmoid(x):
    if not isinstance(x, Tensor):
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-x))
    with np.errstate(over="ignore"):
        out_data = 1.0 / (1.0 + np.exp(-x.data))

    def back(g: np.ndarray) -> None:
        _accum(x, g * out_data * (1.0 - out_data))

    return Tensor(out_data, (x,), back)


def tanh(x):
    if not isinstance(x, Tensor):
        return np.tanh(x)
    out_data = np.tanh(x.data)

    def back(g: np.ndarray) -> None:
        _accum(x, g * (1.0 - out_data * out_data))

    return Tensor(out_data, (x,), back)


def narrow(x, axis: int, start: int, length: int):
    """Contiguous slice along one axis."""
    index = [slice(None)] * _data(x).ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    if not isinstance(x, Tensor):
        return np.asarray(x)[index]
    out_data = x.data[index]

    def back(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[index] = g
        _accum(x, full)

    return Tensor(out_data, (x,), back)


def concat(parts: Sequence, axis: int = 1):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate(parts, axis=axis)
    datas = [_data(p) for p in parts]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]

    def back(g: np.ndarray) -> None:
        offset = 0
        for part, size in zip(parts, sizes):
            if isinstance(part, Tensor):
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                _accum(part, g[tuple(index)])
            offset += size

    parents = tuple(p for p in parts if isinstance(p, Tensor))
    return Tensor(out_data, parents, back)


def gather_rows(table, idx: np.ndarray):
    """Rows of a 2-d table selected by an int vector; duplicates allowed."""
    idx = np.asarray(idx)
    if not isinstance(table, Tensor):
        return np.asarray(table)[idx]
    out_data = table.data[idx]

    def back(g: np.ndarray) -> None:
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        _accum(table, gt)

    return Tensor(out_data, (table,), back)


def bag_sum(table, flat_ids: np.ndarray, offsets: np.ndarray):
    """Sum contiguous groups of table rows: out[k] = sum over
    table[flat_ids[offsets[k] : offsets[k+1]]]. Groups must be non-empty.

    This is the multiset feature embedding: occurrences add up.
    """
    flat_ids = np.asarray(flat_ids)
    offsets = np.asarray(offsets)
    if np.any(offsets[1:] <= offsets[:-1]):
        raise ValueError("bag_sum groups must be non-empty")
    data = _data(table)
    rows = data[flat_ids]
    out_data = np.add.reduceat(rows, offsets[:-1], axis=0)
    if not isinstance(table, Tensor):
        return out_data
    counts = np.diff(offsets)

    def back(g: np.ndarray) -> None:
        gt = np.zeros_like(table.data)
        np.add.at(gt, flat_ids, np.repeat(g, counts, axis=0))
        _accum(table, gt)

    return Tensor(out_data, (table,), back)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain numpy log-softmax for inference paths."""
    m = logits.max(axis=axis, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_xent(logits: Tensor, targets: np.ndarray, weights: np.ndarray):
    """Weighted cross entropy summed over rows, as a scalar tensor.

    targets holds a class index per row; weights scales each row's
    contribution (zero drops padded or masked rows entirely).
    """
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=logits.data.dtype)
    data = logits.data
    m = data.max(axis=1, keepdims=True)
    z = data - m
    expz = np.exp(z)
    sumexp = expz.sum(axis=1, keepdims=True)
    logprobs = z - np.log(sumexp)
    rows = np.arange(data.shape[0])
    nll = -logprobs[rows, targets]
    out_data = np.asarray((nll * weights).sum(), dtype=data.dtype)

    def back(g: np.ndarray) -> None:
        soft = expz / sumexp
        soft[rows, targets] -= 1.0
        _accum(logits, soft * (weights * g)[:, None])

    return Tensor(out_data, (logits,), back)
