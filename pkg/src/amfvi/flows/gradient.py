"""Parametric experts trained by gradient ascent: RealNVP and MAF.

Both are stacks of affine layers with the data-to-base direction

    u = (z - shift(cond)) * exp(-log_scale(cond)),   log_det = -sum(log_scale)

so generation is ``z = u * exp(log_scale) + shift``.  Conditioner outputs
feeding ``log_scale`` are clamped to ``[-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP]``.
"""

from __future__ import annotations

import numpy as np

from ..netcore import DenseNet, Layer, MaskedDenseNet, flatten_parameters
from .base import FlowExpert

LOG_SCALE_CLAMP = 7.0


def _clamp(raw: np.ndarray):
    s = np.clip(raw, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
    return s, (raw > -LOG_SCALE_CLAMP) & (raw < LOG_SCALE_CLAMP)


class AffineCoupling:
    """Coupling layer: dims in ``passive`` pass through and condition the rest."""

    def __init__(self, dim, passive, hidden=(64, 64), rng=None):
        self.dim = dim
        self.passive = np.asarray(passive, dtype=int)
        self.active = np.setdiff1d(np.arange(dim), self.passive)
        sizes = [len(self.passive), *hidden, len(self.active)]
        self.s_net = DenseNet(sizes, "tanh", rng, zero_last=True)
        self.t_net = DenseNet(sizes, "tanh", rng, zero_last=True)

    def nets(self):
        return [self.s_net, self.t_net]

    def forward(self, x):
        xa = x[:, self.passive]
        raw, s_cache = self.s_net.forward_cached(xa)
        t, t_cache = self.t_net.forward_cached(xa)
        s, live = _clamp(raw)
        e = np.exp(-s)
        y = x.copy()
        yb = (x[:, self.active] - t) * e
        y[:, self.active] = yb
        return y, -s.sum(axis=1), (s_cache, t_cache, live, e, yb)

    def backward(self, cache, gy, g_ld):
        s_cache, t_cache, live, e, yb = cache
        gyb = gy[:, self.active]
        gx = gy.copy()
        gx[:, self.active] = gyb * e
        gt = -gyb * e
        gs = (-gyb * yb - g_ld[:, None]) * live
        s_grads, gxa_s = self.s_net.backward_cached(s_cache, gs)
        t_grads, gxa_t = self.t_net.backward_cached(t_cache, gt)
        gx[:, self.passive] += gxa_s + gxa_t
        return gx, s_grads.arrays() + t_grads.arrays()

    def inverse(self, y):
        ya = y[:, self.passive]
        s, _ = _clamp(self.s_net.forward(ya))
        t = self.t_net.forward(ya)
        x = y.copy()
        x[:, self.active] = y[:, self.active] * np.exp(s) + t
        return x


class MaskedAffine:
    """One MAF layer driven by a MADE conditioner with a fixed ordering."""

    def __init__(self, dim, order, hidden=(64, 64), rng=None):
        self.dim = dim
        self.net = MaskedDenseNet(dim, hidden, order=order, rng=rng, zero_last=True)

    @property
    def order(self):
        return self.net.order

    def nets(self):
        return [self.net]

    def forward(self, x):
        out, cache = self.net.forward_cached(x)
        mu = out[:, : self.dim]
        s, live = _clamp(out[:, self.dim:])
        e = np.exp(-s)
        y = (x - mu) * e
        return y, -s.sum(axis=1), (cache, live, e, y)

    def backward(self, cache, gy, g_ld):
        net_cache, live, e, y = cache
        gx = gy * e
        gmu = -gy * e
        gs = (-gy * y - g_ld[:, None]) * live
        grads, gx_net = self.net.backward_cached(net_cache, np.hstack([gmu, gs]))
        return gx + gx_net, grads.arrays()

    def inverse(self, y):
        x = np.zeros_like(y)
        for rank in range(1, self.dim + 1):
            idx = np.flatnonzero(self.order == rank)
            out = self.net.forward(x)
            mu = out[:, idx]
            s, _ = _clamp(out[:, self.dim + idx])
            x[:, idx] = y[:, idx] * np.exp(s) + mu
        return x


class GradientFlow(FlowExpert):
    """Stack of affine layers whose parameters live in one flat vector."""

    def __init__(self, dim, layers):
        super().__init__(dim)
        self.layers = list(layers)
        self._bind_flat()

    def _bind_flat(self):
        net_layers = [nl for layer in self.layers for net in layer.nets() for nl in net.layers]
        arrays = [a for nl in net_layers for a in (nl.W, nl.b)]
        self.params, views = flatten_parameters(arrays)
        for nl, (W, b) in zip(net_layers, zip(views[::2], views[1::2])):
            nl.W, nl.b = W, b

    def _forward(self, z):
        x = z
        log_det = np.zeros(len(z))
        for layer in self.layers:
            x, ld, _ = layer.forward(x)
            log_det = log_det + ld
        return x, log_det

    def _inverse(self, u):
        x = u
        for layer in reversed(self.layers):
            x = layer.inverse(x)
        return x

    def nll_and_grad(self, z: np.ndarray):
        """Mean negative log-likelihood on ``z`` and its gradient w.r.t. ``params``."""
        n = len(z)
        caches = []
        x = z
        log_det = np.zeros(n)
        for layer in self.layers:
            x, ld, cache = layer.forward(x)
            log_det += ld
            caches.append(cache)
        nll = 0.5 * np.mean(np.sum(x * x, axis=1)) + 0.5 * self.dim * np.log(2 * np.pi) - log_det.mean()
        g = x / n
        g_ld = np.full(n, -1.0 / n)
        chunks = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, grads = layer.backward(cache, g, g_ld)
            chunks.append(grads)
        flat = [a.ravel() for grads in reversed(chunks) for a in grads]
        return float(nll), np.concatenate(flat)

    def net_layers(self) -> list[Layer]:
        return [nl for layer in self.layers for net in layer.nets() for nl in net.layers]


class RealNVP(GradientFlow):
    kind = "realnvp"

    def __init__(self, dim=2, n_layers=6, hidden=(64, 64), seed=0):
        if dim < 2:
            raise ValueError("RealNVP needs dim >= 2")
        rng = np.random.default_rng(seed)
        layers = []
        for i in range(n_layers):
            passive = [j for j in range(dim) if (j + i) % 2 == 1]
            layers.append(AffineCoupling(dim, passive, hidden, rng))
        self.hidden = tuple(hidden)
        super().__init__(dim, layers)


class MAF(GradientFlow):
    kind = "maf"

    def __init__(self, dim=2, n_layers=5, hidden=(64, 64), seed=0):
        rng = np.random.default_rng(seed)
        layers = []
        base = np.arange(1, dim + 1)
        for i in range(n_layers):
            order = base if i % 2 == 0 else base[::-1]
            layers.append(MaskedAffine(dim, order, hidden, rng))
        self.hidden = tuple(hidden)
        super().__init__(dim, layers)
