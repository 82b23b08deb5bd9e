"""Minimal dense layers with hand-written backprop (column-batch convention)."""

from dataclasses import dataclass

import numpy as np

LEAKY = 0.2


@dataclass
class Dense:
    w: np.ndarray  # out x in
    b: np.ndarray  # out
    activation: str = "leaky"  # "leaky" or "identity"

    def __post_init__(self):
        if self.activation not in ("leaky", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.w.shape[0] != self.b.shape[0]:
            raise ValueError("bias length must match output width")

    @property
    def shape(self):
        return self.w.shape

    def forward(self, x):
        z = self.w @ x + self.b[:, None]
        if self.activation == "leaky":
            return np.where(z > 0, z, LEAKY * z), z
        return z, z

    def backward(self, x, z, grad_out):
        """Return ``(grad_x, grad_w, grad_b)`` given the cached input and pre-activation."""
        if self.activation == "leaky":
            grad_out = grad_out * np.where(z > 0, 1.0, LEAKY)
        return self.w.T @ grad_out, grad_out @ x.T, grad_out.sum(axis=1)


def init_dense(n_in, n_out, rng, activation="leaky"):
    # He-style scale for the leaky rectifier
    w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
    return Dense(w, np.zeros(n_out), activation)


@dataclass
class Mlp:
    layers: list

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.w.shape[0] != b.w.shape[1]:
                raise ValueError(f"layer dims do not chain: {a.w.shape} -> {b.w.shape}")

    def forward(self, x):
        cache = []
        for layer in self.layers:
            out, z = layer.forward(x)
            cache.append((x, z))
            x = out
        return x, cache

    def backward(self, cache, grad_out):
        grads = [None] * len(self.layers)
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            x, z = cache[i]
            g, gw, gb = self.layers[i].backward(x, z, g)
            grads[i] = (gw, gb)
        return g, grads

    def params(self):
        out = []
        for layer in self.layers:
            out.extend((layer.w, layer.b))
        return out


def init_mlp(sizes, rng, final_activation="identity"):
    layers = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        act = final_activation if i == len(sizes) - 2 else "leaky"
        layers.append(init_dense(a, b, rng, act))
    return Mlp(layers)


class MomentumSGD:
    """Plain SGD with heavy-ball momentum, updating parameter arrays in place."""

    def __init__(self, params, lr, momentum=0.5):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads):
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v -= self.lr * g
            p += v
