"""Tape-based reverse-mode differentiation over numpy arrays.

Every differentiable value is a :class:`Tensor`. Tensors created from a
:class:`Trace` (parameters bound with :meth:`Trace.bind` or leaves made with
:meth:`Trace.leaf`) are tracked; any op touching a tracked tensor appends a
node to that trace. Ops on untracked tensors only compute values, which is how
inference runs without bookkeeping.

Nodes are appended in creation order, so walking the tape backwards is a
valid reverse topological order and :func:`backward` visits each node once.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ShapeError

Adjoint = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("value", "trace", "index", "name", "grad")

    def __init__(self, value, trace: "Trace | None" = None, index: int = -1, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.trace = trace
        self.index = index
        self.name = name
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def tracked(self) -> bool:
        return self.trace is not None

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = "tracked" if self.tracked else "const"
        return f"Tensor(shape={self.shape}, {tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Trace:
    """Ordered record of primitive operations and their adjoints."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Adjoint | None]] = []
        self.params: dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Tensor:
        t = Tensor(value, self, len(self.nodes), name)
        self.nodes.append((t, (), None))
        return t

    def bind(self, store) -> dict[str, Tensor]:
        """Track every parameter of ``store``; returns name -> Tensor."""
        bound = {}
        for name, value in store.params.items():
            if name in self.params:
                raise ValueError(f"parameter {name!r} bound twice on one trace")
            t = self.leaf(value, name)
            self.params[name] = t
            bound[name] = t
        return bound

    def record(self, value, parents: tuple[Tensor, ...], adjoint: Adjoint) -> Tensor:
        t = Tensor(value, self, len(self.nodes))
        self.nodes.append((t, parents, adjoint))
        return t


def constants(store) -> dict[str, Tensor]:
    """Untracked view of a parameter store (inference mode)."""
    return {name: Tensor(v) for name, v in store.params.items()}


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def stop_grad(x: Tensor) -> Tensor:
    return Tensor(as_tensor(x).value)


def _result(value, parents: Iterable[Tensor], adjoint: Adjoint) -> Tensor:
    parents = tuple(parents)
    trace = None
    for p in parents:
        if p.trace is not None:
            if trace is not None and p.trace is not trace:
                raise ValueError("tensors from different traces cannot be combined")
            trace = p.trace
    if trace is None:
        return Tensor(value)
    return trace.record(value, parents, adjoint)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(trace: Trace, loss: Tensor) -> dict[str, np.ndarray]:
    """Reverse sweep from scalar ``loss``.

    Returns gradients for every parameter bound on the trace, keyed by name
    (disconnected parameters get zeros). Leaf tensors also get ``.grad`` set.
    """
    if loss.trace is not trace:
        raise ValueError("loss does not belong to this trace")
    if loss.value.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    grads: list[np.ndarray | None] = [None] * (loss.index + 1)
    grads[loss.index] = np.ones_like(loss.value)
    nodes = trace.nodes
    for idx in range(loss.index, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        out, parents, adjoint = nodes[idx]
        if adjoint is None:
            out.grad = g
            continue
        for p, pg in zip(parents, adjoint(g)):
            if pg is None or p.trace is None:
                continue
            j = p.index
            grads[j] = pg if grads[j] is None else grads[j] + pg
    result = {}
    for name, t in trace.params.items():
        g = grads[t.index] if t.index <= loss.index else None
        result[name] = np.zeros_like(t.value) if g is None else np.asarray(g).reshape(t.shape)
    return result


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.value + b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g, sa) if a.tracked else None,
            _unbroadcast(g, sb) if b.tracked else None,
        ),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.value - b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g, sa) if a.tracked else None,
            _unbroadcast(-g, sb) if b.tracked else None,
        ),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _result(
        av * bv,
        (a, b),
        lambda g: (
            _unbroadcast(g * bv, av.shape) if a.tracked else None,
            _unbroadcast(g * av, bv.shape) if b.tracked else None,
        ),
    )


def matmul(x, w) -> Tensor:
    """``x @ w`` for ``x`` of shape (..., d) and 2-D ``w`` of shape (d, k)."""
    x, w = as_tensor(x), as_tensor(w)
    xv, wv = x.value, w.value
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {xv.shape} @ {wv.shape}")

    d, k = wv.shape
    # flatten leading dims: one 2-D BLAS call beats numpy's stacked matmul
    x2 = xv.reshape(-1, d)

    def adjoint(g):
        g2 = g.reshape(-1, k)
        gx = (g2 @ wv.T).reshape(xv.shape) if x.tracked else None
        gw = x2.T @ g2 if w.tracked else None
        return gx, gw

    return _result((x2 @ wv).reshape(xv.shape[:-1] + (k,)), (x, w), adjoint)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return _result(x.value * mask, (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.value)
    return _result(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return _result(np.log(xv), (x,), lambda g: (g / xv,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return _result(xv * xv, (x,), lambda g: (2.0 * g * xv,))


def ceil_st(x) -> Tensor:
    """Ceiling in the forward pass, identity in the backward pass."""
    x = as_tensor(x)
    return _result(np.ceil(x.value), (x,), lambda g: (g,))


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(x.value.sum(axis=axis, keepdims=keepdims), (x,), adjoint)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _result(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def adjoint(g):
        gx = np.zeros(shape)
        gx[idx] = g
        return (gx,)

    return _result(x.value[idx], (x,), adjoint)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([x.value for x in xs], axis=axis),
        xs,
        lambda g: np.split(g, cuts, axis=axis),
    )


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))
