"""Dense layers, feedforward stacks and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, softmax

ACTIVATIONS = ("identity", "relu", "softmax", "exp")


@dataclass
class DenseLayer:
    weights: Tensor  # [out x in]
    bias: Tensor     # [out]
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        w, b = self.weights.data, self.bias.data
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise DimensionError(
                f"inconsistent layer shapes: weights {w.shape}, bias {b.shape}"
            )

    @property
    def in_width(self) -> int:
        return self.weights.data.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.data.shape[0]


def glorot_layer(rng: np.random.Generator, n_in: int, n_out: int,
                 activation: str = "identity") -> DenseLayer:
    """Uniform +-sqrt(6/(fan_in+fan_out)) init, zero bias."""
    bound = np.sqrt(6.0 / (n_in + n_out))
    w = rng.uniform(-bound, bound, size=(n_out, n_in))
    return DenseLayer(
        weights=Tensor(w, requires_grad=True),
        bias=Tensor(np.zeros(n_out), requires_grad=True),
        activation=activation,
    )


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    """activation(x @ W.T + b), row-wise over a [batch x in] input."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim == 1:
        x = x.reshape(1, -1)
    if x.data.shape[1] != layer.in_width:
        raise DimensionError(
            f"input width {x.data.shape[1]} != layer in-width {layer.in_width}"
        )
    pre = _affine(x, layer)
    if layer.activation == "identity":
        return pre
    if layer.activation == "relu":
        return pre.relu()
    if layer.activation == "softmax":
        return softmax(pre)
    return pre.clamped_exp()


def _affine(x: Tensor, layer: DenseLayer) -> Tensor:
    # x @ W.T with gradient routed to W itself (W stored [out x in])
    w, b = layer.weights, layer.bias
    out = x @ _transposed(w)
    return out + b.reshape(1, -1)


def _transposed(w: Tensor) -> Tensor:
    out = Tensor(w.data.T)
    if w.requires_grad or w._parents:
        out.requires_grad = True
        out._parents = (w,)
        def bw(g):
            w._accumulate(g.T)
        out._backward = bw
    return out


class FeedForward:
    """A stack of dense layers; relu hidden layers by default."""

    def __init__(self, rng: np.random.Generator, widths, out_activation="identity",
                 hidden_activation="relu"):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.layers = []
        for i in range(len(widths) - 1):
            act = out_activation if i == len(widths) - 2 else hidden_activation
            self.layers.append(glorot_layer(rng, widths[i], widths[i + 1], act))

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = dense_forward(layer, x)
        return x

    def params(self):
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray = field(default=None)
    second_moment: np.ndarray = field(default=None)

    def ensure(self, n: int):
        if self.first_moment is None:
            self.first_moment = np.zeros(n)
            self.second_moment = np.zeros(n)
        elif len(self.first_moment) != n:
            raise DimensionError(
                f"moment length {len(self.first_moment)} != parameter length {n}"
            )


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns new params."""
    if len(params) != len(grads):
        raise DimensionError(f"params length {len(params)} != grads length {len(grads)}")
    state.ensure(len(params))
    state.step_count += 1
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * grads
    v *= state.beta2
    v += (1.0 - state.beta2) * grads**2
    m_hat = m / (1.0 - state.beta1**state.step_count)
    v_hat = v / (1.0 - state.beta2**state.step_count)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class AdamOptimizer:
    """Adam over a list of parameter tensors via one flat state vector."""

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        flat_p = np.concatenate([p.data.ravel() for p in self.params])
        flat_g = np.concatenate([
            (p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
            for p in self.params
        ])
        new = adam_step(self.state, flat_p, flat_g)
        i = 0
        for p in self.params:
            n = p.data.size
            p.data = new[i:i + n].reshape(p.data.shape)
            i += n
