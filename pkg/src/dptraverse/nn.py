"""Small feed-forward layers with hand-written reverse-mode differentiation.

Forward passes return an activation cache; backward passes consume the
cache and an output cotangent and produce the input cotangent plus
parameter gradients aligned with ``params()``.  Everything operates on
row batches (n, dim) in float64.
"""

from __future__ import annotations

import numpy as np


def silu(x: np.ndarray) -> np.ndarray:
    """x * sigmoid(x); smooth everywhere, so input VJPs are well-defined."""
    return x / (1.0 + np.exp(-x))


def silu_deriv(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


class Linear:
    """Affine map x @ W + b with W of shape (n_in, n_out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.W = rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
        self.b = np.zeros(n_out)

    def params(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray):
        return x @ self.W + self.b, x

    def backward(self, g: np.ndarray, cache):
        x = cache
        return g @ self.W.T, [x.T @ g, g.sum(axis=0)]


class Activation:
    """Elementwise SiLU."""

    def params(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray):
        return silu(x), x

    def backward(self, g: np.ndarray, cache):
        return g * silu_deriv(cache), []


class Chain:
    """Sequential composition of layers."""

    def __init__(self, layers: list):
        self.layers = layers

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x: np.ndarray):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, g: np.ndarray, caches):
        grads: list[np.ndarray] = []
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            g, layer_grads = layer.backward(g, c)
            grads = layer_grads + grads
        return g, grads


def mlp_block(n_in: int, hidden: int, n_out: int, rng: np.random.Generator) -> Chain:
    """Two-layer perceptron block: Linear, SiLU, Linear."""
    return Chain([Linear(n_in, hidden, rng), Activation(), Linear(hidden, n_out, rng)])


def param_count(net) -> int:
    return sum(p.size for p in net.params())
