"""Minimal reverse-mode autodiff over numpy arrays.

Just enough ops for a small causal-attention decoder: broadcasting
add/mul, batched matmul, slicing, reshape/transpose, concat, embedding
lookup, tanh-approximated gelu, softmax, and layer norm (the last two as
fused primitives so tapes stay short). Everything runs in whatever float
dtype the inputs carry; the model uses float64 by default.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _wrap(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._wrap(other)
        out = Tensor(
            self.data + other.data,
            requires_grad=self.requires_grad or other.requires_grad,
            parents=(self, other),
        )

        def backward(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = self._wrap(other)
        out = Tensor(
            self.data * other.data,
            requires_grad=self.requires_grad or other.requires_grad,
            parents=(self, other),
        )

        def backward(g):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def matmul(self, other):
        other = self._wrap(other)
        out = Tensor(
            self.data @ other.data,
            requires_grad=self.requires_grad or other.requires_grad,
            parents=(self, other),
        )

        def backward(g):
            ga = g @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ g
            return (_unbroadcast(ga, self.shape), _unbroadcast(gb, other.shape))

        out._backward = backward
        return out

    __matmul__ = matmul

    def __getitem__(self, key):
        out = Tensor(self.data[key], requires_grad=self.requires_grad, parents=(self,))

        def backward(g):
            full = np.zeros_like(self.data)
            full[key] = g
            return (full,)

        out._backward = backward
        return out

    def reshape(self, *shape):
        out = Tensor(
            self.data.reshape(*shape), requires_grad=self.requires_grad, parents=(self,)
        )
        out._backward = lambda g: (g.reshape(self.shape),)
        return out

    def transpose(self, *axes):
        out = Tensor(
            self.data.transpose(axes), requires_grad=self.requires_grad, parents=(self,)
        )
        inverse = np.argsort(axes)
        out._backward = lambda g: (g.transpose(inverse),)
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(
            self.data.sum(axis=axis, keepdims=keepdims),
            requires_grad=self.requires_grad,
            parents=(self,),
        )

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def tanh(self):
        t = np.tanh(self.data)
        out = Tensor(t, requires_grad=self.requires_grad, parents=(self,))
        out._backward = lambda g: (g * (1.0 - t * t),)
        return out

    def gelu(self):
        # tanh approximation; smooth, so finite-difference checks stay clean
        c = float(np.sqrt(2.0 / np.pi))
        x = self.data
        u = c * (x + 0.044715 * x**3)
        t = np.tanh(u)
        out = Tensor(0.5 * x * (1.0 + t), requires_grad=self.requires_grad, parents=(self,))

        def backward(g):
            du = c * (1.0 + 3 * 0.044715 * x**2)
            dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            return (g * dx,)

        out._backward = backward
        return out

    def softmax(self):
        """Softmax over the last axis, max-subtracted. -inf entries get 0."""
        z = self.data
        m = z.max(axis=-1, keepdims=True)
        e = np.exp(z - m)
        p = e / e.sum(axis=-1, keepdims=True)
        out = Tensor(p, requires_grad=self.requires_grad, parents=(self,))

        def backward(g):
            dot = (g * p).sum(axis=-1, keepdims=True)
            return ((g - dot) * p,)

        out._backward = backward
        return out

    def layer_norm(self, gain: "Tensor", bias: "Tensor", eps: float = 1e-5):
        """Normalize the last axis, then scale and shift."""
        x = self.data
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        out = Tensor(
            xhat * gain.data + bias.data,
            requires_grad=self.requires_grad or gain.requires_grad or bias.requires_grad,
            parents=(self, gain, bias),
        )

        def backward(g):
            n = x.shape[-1]
            dxhat = g * gain.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            axes = tuple(range(g.ndim - 1))
            dgain = _unbroadcast((g * xhat).sum(axis=axes), gain.shape)
            dbias = _unbroadcast(g.sum(axis=axes), bias.shape)
            return (dx, dgain, dbias)

        out._backward = backward
        return out

    def backward(self, grad: np.ndarray) -> None:
        """Backpropagate `grad` (same shape as data) through the graph."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def embedding(weight: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup weight[idx] with scatter-add backward."""
    out = Tensor(weight.data[idx], requires_grad=weight.requires_grad, parents=(weight,))

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, idx, g)
        return (full,)

    out._backward = backward
    return out


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        requires_grad=any(t.requires_grad for t in tensors),
        parents=tuple(tensors),
    )
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out._backward = lambda g: tuple(np.split(g, splits, axis=axis))
    return out
