"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records its parents and a closure that routes the incoming
gradient; ``backward`` walks the recorded graph in reverse topological order.
Gradients accumulate into ``Tensor.grad`` slots of the leaves that were
created with ``requires_grad=True`` (parameters and, when needed, input
features). All data is promoted to float64.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def item(self) -> float:
        return float(self.data)

    def backward(self, seed=None):
        """Accumulate gradients of this tensor w.r.t. every grad-enabled leaf.

        ``seed`` defaults to ones; a scalar loss therefore needs no argument.
        Raises if no forward computation was recorded through this tensor.
        """
        if not self._parents:
            raise ValidationError("backward called on a tensor with no recorded forward")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data) if seed is None
                 else np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.requires_grad:
                node.grad += grad
            if node._backward is None:
                continue
            for parent, contribution in node._backward(grad):
                if parent.requires_grad or parent._parents:
                    existing = grads.get(id(parent))
                    if existing is None:
                        grads[id(parent)] = contribution.copy()
                    else:
                        existing += contribution

    # Operator sugar; every op lives as a module function below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return ((a, _unbroadcast(grad, a.data.shape)),
                (b, _unbroadcast(grad, b.data.shape)))

    return Tensor(a.data + b.data, _parents=(a, b), _backward=backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return ((a, _unbroadcast(grad, a.data.shape)),
                (b, _unbroadcast(-grad, b.data.shape)))

    return Tensor(a.data - b.data, _parents=(a, b), _backward=backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return ((a, _unbroadcast(grad * b.data, a.data.shape)),
                (b, _unbroadcast(grad * a.data, b.data.shape)))

    return Tensor(a.data * b.data, _parents=(a, b), _backward=backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        return ((a, _unbroadcast(grad / b.data, a.data.shape)),
                (b, _unbroadcast(-grad * a.data / (b.data * b.data), b.data.shape)))

    return Tensor(a.data / b.data, _parents=(a, b), _backward=backward)


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValidationError("matmul requires operands with ndim >= 2")

    def backward(grad):
        da = _unbroadcast(np.matmul(grad, _swap_last(b.data)), a.data.shape)
        db = _unbroadcast(np.matmul(_swap_last(a.data), grad), b.data.shape)
        return ((a, da), (b, db))

    return Tensor(np.matmul(a.data, b.data), _parents=(a, b), _backward=backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(grad):
        if axis is None:
            expanded = np.broadcast_to(grad, a.data.shape)
        elif keepdims:
            expanded = np.broadcast_to(grad, a.data.shape)
        else:
            expanded = np.broadcast_to(np.expand_dims(grad, axis), a.data.shape)
        return ((a, np.ascontiguousarray(expanded)),)

    return Tensor(out, _parents=(a,), _backward=backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        count = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), as_tensor(1.0 / count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(grad):
        return ((a, grad.reshape(a.data.shape)),)

    return Tensor(a.data.reshape(shape), _parents=(a,), _backward=backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)

    def backward(grad):
        return ((a, grad.transpose(inverse)),)

    return Tensor(a.data.transpose(axes), _parents=(a,), _backward=backward)


def concat(tensors, axis) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad):
        pieces = np.split(grad, splits, axis=axis)
        return tuple((t, np.ascontiguousarray(p)) for t, p in zip(tensors, pieces))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  _parents=tuple(tensors), _backward=backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(grad):
        return ((a, grad * out_data),)

    return Tensor(out_data, _parents=(a,), _backward=backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(grad):
        return ((a, grad / a.data),)

    return Tensor(np.log(a.data), _parents=(a,), _backward=backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(grad):
        return ((a, grad * 0.5 / out_data),)

    return Tensor(out_data, _parents=(a,), _backward=backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(grad):
        return ((a, grad * (1.0 - out_data * out_data)),)

    return Tensor(out_data, _parents=(a,), _backward=backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Tanh-form GELU; smooth everywhere, which keeps finite differences honest."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backward(grad):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return ((a, grad * local),)

    return Tensor(out_data, _parents=(a,), _backward=backward)


def softmax(a) -> Tensor:
    """Softmax over the last axis, stabilized by a detached max shift."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(grad):
        inner = (grad * out_data).sum(axis=-1, keepdims=True)
        return ((a, out_data * (grad - inner)),)

    return Tensor(out_data, _parents=(a,), _backward=backward)


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    """log(sum(exp(a))) along one axis; the max shift is exact, not approximate."""
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)
    z = exp(sub(a, as_tensor(shift)))
    out = add(log(tsum(z, axis=axis, keepdims=True)), as_tensor(shift))
    if not keepdims:
        out = reshape(out, tuple(d for i, d in enumerate(out.data.shape)
                                 if i != (axis % out.data.ndim)))
    return out


def layer_norm(x, gain, bias, eps=1e-5) -> Tensor:
    """Row-wise layer normalization over the last axis with learned affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(var, as_tensor(eps))))
    return add(mul(normed, gain), bias)


def l2_normalize(x) -> Tensor:
    """Divide by the exact L2 norm over the last axis (no epsilon: outputs are
    unit-norm to machine precision)."""
    norm = sqrt(tsum(mul(x, x), axis=-1, keepdims=True))
    return div(x, norm)
