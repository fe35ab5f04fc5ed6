"""A small reverse-mode automatic differentiation engine over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and records the operation that produced
it. :func:`backward` walks that record in reverse topological order and returns
exact gradients of a scalar loss with respect to chosen leaf tensors.

The module-level operations (:func:`log`, :func:`softplus`, :func:`sum`, ...)
accept either tensors or plain arrays. With no tensor among their arguments
they return a plain array and record nothing, which gives a graph-free path
for evaluation.
"""

import numpy as np
from scipy.special import expit


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    # keep numpy from swallowing mixed ndarray/Tensor arithmetic
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def is_tensor(x):
    return isinstance(x, Tensor)


def value_of(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def shape_of(x):
    return np.shape(x.data if isinstance(x, Tensor) else x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, backward):
    """Build an op result; ``parents`` are the operands, ``backward(g)`` returns their grads."""
    tracked = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
    if not tracked:
        return data if not any(isinstance(p, Tensor) for p in parents) else Tensor(data)
    return Tensor(data, True, tuple(parents), backward)


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    if not (is_tensor(a) or is_tensor(b)):
        return out
    return _make(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    if not (is_tensor(a) or is_tensor(b)):
        return out
    return _make(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if not (is_tensor(a) or is_tensor(b)):
        return out
    return _make(
        out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    if not (is_tensor(a) or is_tensor(b)):
        return out
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def matmul(a, b):
    """``a @ b`` where ``b`` is a 2-D matrix and ``a`` has any number of leading axes."""
    av, bv = value_of(a), value_of(b)
    if bv.ndim != 2:
        raise ValueError("right operand of matmul must be 2-D")
    out = av @ bv
    if not (is_tensor(a) or is_tensor(b)):
        return out

    def backward(g):
        ga = g @ bv.T
        gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(out, (a, b), backward)


def _unary(x, fwd, dfwd):
    xv = value_of(x)
    out = fwd(xv)
    if not is_tensor(x):
        return out
    return _make(out, (x,), lambda g: (g * dfwd(xv, out),))


def log(x):
    return _unary(x, np.log, lambda xv, out: 1.0 / xv)


def exp(x):
    return _unary(x, np.exp, lambda xv, out: out)


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda xv, out: (xv > 0).astype(np.float64))


def tanh(x):
    return _unary(x, np.tanh, lambda xv, out: 1.0 - out * out)


def softplus(x):
    return _unary(x, lambda v: np.logaddexp(0.0, v), lambda xv, out: expit(xv))


def identity(x):
    return x


ACTIVATIONS = {"relu": relu, "tanh": tanh, "softplus": softplus, "identity": identity}


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    xv = value_of(x)
    out = xv.sum(axis=axis, keepdims=keepdims)
    if not is_tensor(x):
        return out

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return _make(out, (x,), backward)


def mean(x, axis=None):
    n = value_of(x).size if axis is None else value_of(x).shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def concat(parts, axis=-1):
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    if not any(is_tensor(p) for p in parts):
        return out
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(parts), backward)


def getitem(x, idx):
    xv = value_of(x)
    out = xv[idx]
    if not is_tensor(x):
        return out

    def backward(g):
        full = np.zeros_like(xv)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (x,), backward)


def reshape(x, shape):
    xv = value_of(x)
    out = xv.reshape(shape)
    if not is_tensor(x):
        return out
    return _make(out, (x,), lambda g: (g.reshape(xv.shape),))


def broadcast_to(x, shape):
    xv = value_of(x)
    out = np.broadcast_to(xv, shape)
    if not is_tensor(x):
        return out
    return _make(out, (x,), lambda g: (_unbroadcast(g, xv.shape),))


def _topological(root):
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
        for p in node._parents:
            if isinstance(p, Tensor) and p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, params):
    """Gradients of scalar ``loss`` with respect to each tensor in ``params``.

    Parameters that do not require gradients (frozen) or do not influence the
    loss get an all-zero gradient.
    """
    if not isinstance(loss, Tensor):
        return [np.zeros(value_of(p).shape) for p in params]
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        for node in reversed(_topological(loss)):
            g = grads.pop(id(node), None) if node._backward is not None else grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not (isinstance(parent, Tensor) and parent.requires_grad):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.array(pg, dtype=np.float64)
    out = []
    for p in params:
        g = grads.get(id(p)) if p.requires_grad else None
        out.append(np.zeros(p.shape) if g is None else g.reshape(p.shape))
    return out
