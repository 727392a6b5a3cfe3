"""Minimal dense-tensor numerics with reverse-mode differentiation.

Tensors wrap 64-bit numpy arrays and record a define-by-run tape via
parent links and backward closures.  The op set is exactly what the
feedforward networks and losses in this package need: elementwise
arithmetic, matmul, relu/softmax/exp heads and a few reductions.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericError

# exp head input clamp: keeps exp(logvar) finite for any network output
EXP_CLAMP = 20.0


class Tensor:
    """A numpy-backed reverse-mode autodiff tensor."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{req})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(g, self.data.shape)

    # ---- autograd driver ----

    def backward(self):
        """Backpropagate from a scalar loss through the recorded tape."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar, got shape {self.data.shape}"
            )
        if not np.isfinite(self.data).all():
            raise NumericError("backward() on a non-finite loss")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- elementwise arithmetic ----

    def __add__(self, other):
        other = _wrap(other)
        out = _node(self.data + other.data, (self, other))
        if out._parents:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(g)
                if other.requires_grad:
                    other._accumulate(g)
            out._backward = bw
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)
        out = _node(self.data - other.data, (self, other))
        if out._parents:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(g)
                if other.requires_grad:
                    other._accumulate(-g)
            out._backward = bw
        return out

    def __rsub__(self, other):
        return _wrap(other).__sub__(self)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, other):
        other = _wrap(other)
        out = _node(self.data * other.data, (self, other))
        if out._parents:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(g * other.data)
                if other.requires_grad:
                    other._accumulate(g * self.data)
            out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        out = _node(self.data / other.data, (self, other))
        if out._parents:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(g / other.data)
                if other.requires_grad:
                    other._accumulate(-g * self.data / other.data**2)
            out._backward = bw
        return out

    def __rtruediv__(self, other):
        return _wrap(other).__truediv__(self)

    def __pow__(self, p: float):
        out = _node(self.data**p, (self,))
        if out._parents:
            def bw(g):
                self._accumulate(g * p * self.data ** (p - 1))
            out._backward = bw
        return out

    # ---- matmul ----

    def __matmul__(self, other):
        other = _wrap(other)
        if self.data.shape[-1] != other.data.shape[0]:
            raise DimensionError(
                f"matmul mismatch: {self.data.shape} @ {other.data.shape}"
            )
        out = _node(self.data @ other.data, (self, other))
        if out._parents:
            def bw(g):
                if self.requires_grad:
                    self._accumulate(g @ other.data.T)
                if other.requires_grad:
                    other._accumulate(self.data.T @ g)
            out._backward = bw
        return out

    # ---- nonlinearities ----

    def relu(self):
        out = _node(np.maximum(self.data, 0.0), (self,))
        if out._parents:
            mask = self.data > 0.0
            def bw(g):
                self._accumulate(g * mask)
            out._backward = bw
        return out

    def exp(self):
        out = _node(np.exp(self.data), (self,))
        if out._parents:
            def bw(g):
                self._accumulate(g * out.data)
            out._backward = bw
        return out

    def clamped_exp(self, limit: float = EXP_CLAMP):
        """exp with the input clamped to [-limit, limit]; zero grad outside."""
        clipped = np.clip(self.data, -limit, limit)
        out = _node(np.exp(clipped), (self,))
        if out._parents:
            inside = np.abs(self.data) <= limit
            def bw(g):
                self._accumulate(g * out.data * inside)
            out._backward = bw
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        if out._parents:
            def bw(g):
                self._accumulate(g / self.data)
            out._backward = bw
        return out

    def sigmoid(self):
        s = np.empty_like(self.data)
        pos = self.data >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-self.data[pos]))
        e = np.exp(self.data[~pos])
        s[~pos] = e / (1.0 + e)
        out = _node(s, (self,))
        if out._parents:
            def bw(g):
                self._accumulate(g * s * (1.0 - s))
            out._backward = bw
        return out

    def clip(self, lo: float, hi: float):
        """Clip values; gradient passes only where the input is inside."""
        out = _node(np.clip(self.data, lo, hi), (self,))
        if out._parents:
            inside = (self.data >= lo) & (self.data <= hi)
            def bw(g):
                self._accumulate(g * inside)
            out._backward = bw
        return out

    # ---- reductions and shaping ----

    def sum(self, axis=None, keepdims: bool = False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:
            def bw(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.data.shape))
            out._backward = bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def reshape(self, *shape):
        out = _node(self.data.reshape(*shape), (self,))
        if out._parents:
            def bw(g):
                self._accumulate(g.reshape(self.data.shape))
            out._backward = bw
        return out

    def cols(self, start: int, stop: int):
        """Column slice [:, start:stop] of a 2-D tensor."""
        out = _node(self.data[:, start:stop], (self,))
        if out._parents:
            def bw(g):
                full = np.zeros_like(self.data)
                full[:, start:stop] = g
                self._accumulate(full)
            out._backward = bw
        return out


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents) -> Tensor:
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad or p._parents)
    if live:
        out._parents = live
        out.requires_grad = True
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ts) in enumerate(zip(g.shape, shape)):
        if ts == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate 2-D tensors along an axis, differentiable."""
    tensors = [_wrap(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def bw(g):
            for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad or t._parents:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(a, b)
                    t._accumulate(g[tuple(idx)])
        out._backward = bw
    return out


def softmax(logits: Tensor) -> Tensor:
    """Row-wise stable softmax (last axis); 1-D inputs are a single row."""
    logits = _wrap(logits)
    if not np.isfinite(logits.data).all():
        raise NumericError("softmax input contains NaN or infinity")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = _node(s, (logits,))
    if out._parents:
        def bw(g):
            dot = (g * s).sum(axis=-1, keepdims=True)
            logits._accumulate(s * (g - dot))
        out._backward = bw
    return out


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp along an axis, built from primitive ops."""
    x = _wrap(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x - Tensor(m)
    s = shifted.exp().sum(axis=axis, keepdims=True).log() + Tensor(m)
    if not keepdims:
        s = s.reshape(tuple(d for i, d in enumerate(x.shape) if i != (axis % x.data.ndim)))
    return s
