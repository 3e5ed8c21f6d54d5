"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when it takes part in a tracked
computation, remembers its parents and a closure that pushes its gradient
back to them. Only the operations the segmentation network needs are
provided; see :mod:`floodfuse.functional` for the layer-level ops.
"""
from __future__ import annotations

import itertools

import numpy as np

DEFAULT_DTYPE = np.float32

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "node_id", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.node_id = next(_ids)
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self.dtype)))

    def __rsub__(self, other):
        return add(_lift(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- backprop ------------------------------------------------------
    def backward(self):
        """Populate ``.grad`` on every tracked tensor this scalar depends on."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() called on a tensor that is not part of a tracked graph")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and parent.node_id not in seen:
                stack.append((parent, False))
    return order


def _lift(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def accumulate(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def make_result(data, parents, backward):
    """Wrap ``data`` as the output of an op over ``parents``."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _lift(a), _lift(b, a.dtype if isinstance(a, Tensor) else None)

    def backward(g):
        accumulate(a, unbroadcast(g, a.shape))
        accumulate(b, unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = _lift(a), _lift(b, a.dtype if isinstance(a, Tensor) else None)

    def backward(g):
        if a.requires_grad:
            accumulate(a, unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            accumulate(b, unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward)


def neg(a):
    return make_result(-a.data, (a,), lambda g: accumulate(a, -g))


def sum_all(a):
    def backward(g):
        accumulate(a, np.broadcast_to(g, a.shape).copy())

    return make_result(a.data.sum(), (a,), backward)


def mean_all(a):
    n = a.data.size

    def backward(g):
        accumulate(a, np.full(a.shape, g / n, dtype=a.dtype))

    return make_result(a.data.mean(), (a,), backward)


def reshape(a, shape):
    return make_result(a.data.reshape(shape), (a,), lambda g: accumulate(a, g.reshape(a.shape)))


def concat(tensors, axis=1):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                accumulate(t, g[tuple(idx)].copy())

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)
