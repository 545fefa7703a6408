"""Small dense and masked-dense networks with hand-written backprop and Adam.

Only what the flow conditioners need: affine layers, tanh/relu/identity
activations, exact reverse-mode gradients, and an adaptive first-order
optimizer.  Arrays are float64 row-major ``(N, features)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")


class ContractError(ValueError):
    """Raised when an input violates a shape or domain contract."""


class NumericalError(FloatingPointError):
    """Raised when a computation produces non-finite values."""


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    return a


def _act_grad(name: str, a: np.ndarray, h: np.ndarray, g: np.ndarray) -> np.ndarray:
    # g is dL/dh; returns dL/da
    if name == "tanh":
        return g * (1.0 - h * h)
    if name == "relu":
        return g * (a > 0.0)
    return g


@dataclass
class Layer:
    W: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")


@dataclass
class Gradients:
    """Per-layer ``(dW, db)`` pairs, laid out like the owning network."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in self.layers for a in pair]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class DenseNet:
    """Feedforward stack ``h_{l+1} = act_l(h_l W_l + b_l)``.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``(1, 64, 64, 1)``.
    hidden_activation : str
        Activation of every hidden layer; the last layer is always identity.
    rng : numpy Generator, optional
        Source for Glorot-uniform initialization.
    zero_last : bool
        Zero the final layer so the network starts as the zero map.
    """

    def __init__(self, sizes, hidden_activation="tanh", rng=None, zero_last=False):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractError(f"invalid layer sizes {sizes}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.layers: list[Layer] = []
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            if last and zero_last:
                W = np.zeros((fi, fo))
            else:
                W = glorot_uniform(fi, fo, rng)
            act = "identity" if last else hidden_activation
            self.layers.append(Layer(W, np.zeros(fo), act))

    @classmethod
    def from_layers(cls, layers: list[Layer]) -> "DenseNet":
        net = cls.__new__(cls)
        net.layers = list(layers)
        net._check_chain()
        return net

    def _check_chain(self):
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise ContractError("layer dimensions do not chain")

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def parameters(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in (layer.W, layer.b)]

    def _weight(self, i: int) -> np.ndarray:
        return self.layers[i].W

    def _check_input(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ContractError(
                f"expected input with {self.in_dim} columns, got shape {x.shape}"
            )

    def forward_cached(self, x: np.ndarray):
        """Forward pass that also returns the activations needed by backward."""
        self._check_input(x)
        hs = [x]
        pre = []
        h = x
        for i, layer in enumerate(self.layers):
            a = h @ self._weight(i) + layer.b
            h = _act(layer.activation, a)
            pre.append(a)
            hs.append(h)
        return h, (hs, pre)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)[0]

    def backward_cached(self, cache, upstream: np.ndarray, need_input_grad=True):
        """Reverse pass. Returns ``(Gradients, dL/dx or None)``."""
        hs, pre = cache
        if upstream.shape != hs[-1].shape:
            raise ContractError(
                f"upstream shape {upstream.shape} != output shape {hs[-1].shape}"
            )
        g = upstream
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = _act_grad(layer.activation, pre[i], hs[i + 1], g)
            grads[i] = self._mask_grad(i, hs[i].T @ g), g.sum(axis=0)
            if i > 0 or need_input_grad:
                g = g @ self._weight(i).T
        return Gradients(grads), (g if need_input_grad else None)

    def _mask_grad(self, i: int, dW: np.ndarray) -> np.ndarray:
        return dW

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> Gradients:
        """Gradient of ``sum(upstream * forward(x))`` w.r.t. every parameter."""
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(upstream))):
            raise NumericalError("non-finite input to backward")
        _, cache = self.forward_cached(x)
        return self.backward_cached(cache, upstream, need_input_grad=False)[0]


def made_degrees(order: np.ndarray, hidden: list[int]) -> list[np.ndarray]:
    """Connectivity degrees for a MADE network.

    ``order[j]`` is the 1-based autoregressive rank of input ``j``.  Hidden
    units cycle through ranks ``1..D-1`` deterministically.
    """
    D = len(order)
    degrees = [np.asarray(order, dtype=int)]
    top = max(D - 1, 1)
    for h in hidden:
        degrees.append(np.arange(h) % top + 1)
    return degrees


class MaskedDenseNet(DenseNet):
    """MADE conditioner producing ``(mu, log_sigma)`` for every dimension.

    Output columns are ``[mu_0..mu_{D-1}, logsig_0..logsig_{D-1}]``.  Head
    ``i`` only sees inputs whose rank is strictly below ``order[i]``.
    """

    def __init__(self, dim, hidden=(64, 64), order=None, hidden_activation="tanh",
                 rng=None, zero_last=True):
        order = np.arange(1, dim + 1) if order is None else np.asarray(order, dtype=int)
        if sorted(order.tolist()) != list(range(1, dim + 1)):
            raise ContractError("order must be a permutation of 1..dim")
        super().__init__([dim, *hidden, 2 * dim], hidden_activation, rng, zero_last)
        self.order = order
        self.masks = self._build_masks(order, list(hidden))
        for layer, m in zip(self.layers, self.masks):
            layer.W *= m

    @staticmethod
    def _build_masks(order, hidden):
        deg = made_degrees(order, hidden)
        masks = []
        for d_in, d_out in zip(deg[:-1], deg[1:]):
            masks.append((d_out[None, :] >= d_in[:, None]).astype(float))
        out_deg = np.concatenate([order, order])
        masks.append((out_deg[None, :] > deg[-1][:, None]).astype(float))
        return masks

    @classmethod
    def from_layers(cls, layers, order):
        net = cls.__new__(cls)
        net.layers = list(layers)
        net.order = np.asarray(order, dtype=int)
        hidden = [layer.W.shape[1] for layer in layers[:-1]]
        net.masks = cls._build_masks(net.order, hidden)
        net._check_chain()
        return net

    @property
    def dim(self) -> int:
        return len(self.order)

    def _weight(self, i: int) -> np.ndarray:
        return self.layers[i].W * self.masks[i]

    def _mask_grad(self, i: int, dW: np.ndarray) -> np.ndarray:
        return dW * self.masks[i]


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    return net.forward(np.asarray(x, dtype=float))


def backward(net: DenseNet, x: np.ndarray, upstream: np.ndarray) -> Gradients:
    return net.backward(np.asarray(x, dtype=float), np.asarray(upstream, dtype=float))


@dataclass
class OptimState:
    """Adam state; ``m`` and ``v`` mirror the parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    maximize: bool = False
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    skipped: int = 0
    last_skipped: bool = False


def optimizer_step(state: OptimState, params: list[np.ndarray], grads) -> bool:
    """One Adam step, updating ``params`` in place.

    A non-finite gradient anywhere skips the whole update, sets
    ``state.last_skipped`` and bumps ``state.skipped``.  The step count is
    incremented either way.  Returns True if parameters were changed.
    """
    grads = grads.arrays() if isinstance(grads, Gradients) else list(grads)
    if len(grads) != len(params) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ContractError("gradients are not shape-congruent with parameters")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    if not all(np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        state.last_skipped = True
        warnings.warn("non-finite gradient; update skipped", RuntimeWarning, stacklevel=2)
        return False
    state.last_skipped = False
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    sign = 1.0 if state.maximize else -1.0
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p += sign * state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True


def flatten_parameters(params: list[np.ndarray]) -> tuple[np.ndarray, list[np.ndarray]]:
    """Copy ``params`` into one contiguous buffer; return it and views into it.

    Callers rebind their arrays to the returned views so a single-vector
    optimizer update touches every parameter.
    """
    sizes = [p.size for p in params]
    flat = np.empty(sum(sizes))
    views = []
    start = 0
    for p, s in zip(params, sizes):
        v = flat[start:start + s].reshape(p.shape)
        v[...] = p
        views.append(v)
        start += s
    return flat, views
